"""Shared fixtures: the two trained scenario bundles reused across the suite.

Training the detectors and the predictor on the 8000-row scenarios dominates
suite runtime, so both bundles are built once per session.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from odrop import gbt, nn, ood, synth, tabular

SHIFT_SCENARIO_SEED = 7
SHIFT_ENSEMBLE_SEED = 8
NULL_SCENARIO_SEED = 31
VAE_EPOCHS = 60
CLASSIFIER_EPOCHS = 30


@dataclass
class ScenarioBundle:
    scenario: synth.ShiftScenario
    data: synth.SynthData
    preprocess: tabular.NeuralPreprocess
    z_train: np.ndarray
    z_test: np.ndarray
    scorers: dict[str, ood.OodScorer]
    forest: gbt.Forest
    pred: np.ndarray
    test_scores: dict[str, np.ndarray] = field(default_factory=dict)
    build_seconds: float = 0.0


def _build_bundle(scenario: synth.ShiftScenario, ensemble_seed: int) -> ScenarioBundle:
    started = time.monotonic()
    data = synth.generate(scenario)
    pp = tabular.neural_preprocess_fit(data.train)
    z_train, _ = tabular.neural_preprocess_apply(pp, data.train)
    z_test, _ = tabular.neural_preprocess_apply(pp, data.test)
    scorers = ood.fit_all_scorers(
        z_train, data.train_labels,
        nn.TrainConfig.vae(scenario.seed, max_epochs=VAE_EPOCHS),
        nn.TrainConfig(max_epochs=CLASSIFIER_EPOCHS, seed=ensemble_seed),
    )
    forest = gbt.fit_gbt(
        data.train.values, data.train_labels,
        gbt.BoostConfig(80, 4, seed=scenario.seed),
        list(data.train.column_names),
    )
    pred = gbt.predict_proba(forest, data.test.values)
    test_scores = {name: s.score(z_test) for name, s in scorers.items()}
    return ScenarioBundle(scenario, data, pp, z_train, z_test, scorers, forest,
                          pred, test_scores, time.monotonic() - started)


@pytest.fixture(scope="session")
def shift_bundle() -> ScenarioBundle:
    """The constructed-shift scenario: a tight shifted subpopulation with
    coin-flip labels occupying 30% of the test set."""
    scenario = synth.ShiftScenario(
        n_train=8000, n_test=4000, d=20, ood_fraction=0.3,
        mean_shift=synth.sparse_shift(20, 4.0, SHIFT_SCENARIO_SEED, n_dims=2),
        cov_scale=0.25, label_noise_ood=0.5, seed=SHIFT_SCENARIO_SEED,
    )
    return _build_bundle(scenario, SHIFT_ENSEMBLE_SEED)


@pytest.fixture(scope="session")
def null_bundle() -> ScenarioBundle:
    """No-shift control: identical pipeline, ood_fraction = 0."""
    scenario = synth.ShiftScenario(
        n_train=8000, n_test=4000, d=20, ood_fraction=0.0,
        mean_shift=np.zeros(20), cov_scale=1.0, label_noise_ood=0.0,
        seed=NULL_SCENARIO_SEED, rule_logit_std=1.4,
    )
    return _build_bundle(scenario, NULL_SCENARIO_SEED + 1)
