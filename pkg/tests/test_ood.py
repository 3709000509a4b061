from __future__ import annotations

import math

import numpy as np
import pytest

from odrop import nn, ood, rejection, synth, tabular


def fixed_prob_mlp(p: float, input_dim: int = 2) -> nn.Mlp:
    """Classifier whose positive-class probability is p for every input."""
    m = nn.init_mlp(input_dim, seed=0, hidden=(2, 2))
    for k in m.params:
        m.params[k][:] = 0.0
    if p <= 0.0:
        m.params["b3"][:] = [60.0, 0.0]
    elif p >= 1.0:
        m.params["b3"][:] = [0.0, 60.0]
    else:
        m.params["b3"][:] = [0.0, math.log(p / (1 - p))]
    return m


def fixed_logit_mlp(logits: tuple[float, float], input_dim: int = 2) -> nn.Mlp:
    m = nn.init_mlp(input_dim, seed=0, hidden=(2, 2))
    for k in m.params:
        m.params[k][:] = 0.0
    m.params["b3"][:] = logits
    return m


def zero_hidden_mlp(input_dim: int = 2, hidden: tuple[int, int] = (2, 2)) -> nn.Mlp:
    m = nn.init_mlp(input_dim, seed=0, hidden=hidden)
    for k in m.params:
        m.params[k][:] = 0.0
    return m


def pass_through_mlp(dim: int = 2) -> nn.Mlp:
    """h(x) = x for non-negative inputs (identity weight chains, zero biases)."""
    m = nn.init_mlp(dim, seed=0, hidden=(dim, dim))
    for k in m.params:
        m.params[k][:] = 0.0
    m.params["w1"][:, :] = np.eye(dim)
    m.params["w2"][:, :] = np.eye(dim)
    return m


class TestVaeReconstructionScore:
    def zero_vae(self, dim):
        v = nn.init_vae(dim, seed=0, hidden=4, latent=2)
        for k in v.params:
            v.params[k][:] = 0.0
        return v

    def test_exact_reconstruction_scores_zero(self):
        v = self.zero_vae(2)
        assert ood.score_vae_reconstruction(v, np.zeros(2)) == 0.0

    def test_unit_error(self):
        v = self.zero_vae(2)
        assert ood.score_vae_reconstruction(v, np.array([1.0, 0.0])) == 1.0

    def test_three_four_five(self):
        v = self.zero_vae(2)
        assert ood.score_vae_reconstruction(v, np.array([3.0, 4.0])) == 25.0


class TestEnsembleStd:
    def test_agreeing_members_score_zero(self):
        members = [fixed_prob_mlp(0.5), fixed_prob_mlp(0.5)]
        assert ood.score_ensemble_std(members, np.zeros(2)) == 0.0

    def test_two_member_hand_value(self):
        members = [fixed_prob_mlp(0.2), fixed_prob_mlp(0.8)]
        got = ood.score_ensemble_std(members, np.zeros(2))
        assert abs(got - 0.3) < 1e-12

    def test_maximum_for_two_members(self):
        members = [fixed_prob_mlp(0.0), fixed_prob_mlp(1.0)]
        got = ood.score_ensemble_std(members, np.zeros(2))
        assert abs(got - 0.5) < 1e-9

    def test_range_invariant(self):
        rng = np.random.default_rng(0)
        members = [fixed_prob_mlp(p) for p in rng.random(5)]
        s = ood.score_ensemble_std(members, rng.normal(size=(10, 2)))
        assert np.all(s >= 0) and np.all(s <= 0.5)

    def test_single_member_rejected(self):
        with pytest.raises(ValueError):
            ood.score_ensemble_std([fixed_prob_mlp(0.5)], np.zeros(2))


class TestEnsembleEpistemic:
    def test_identical_members_score_zero(self):
        for p in (0.1, 0.5, 0.9):
            members = [fixed_prob_mlp(p)] * 3
            assert abs(ood.score_ensemble_epistemic(members, np.zeros(2))) < 1e-12

    def test_total_disagreement_is_one_bit(self):
        members = [fixed_prob_mlp(1.0), fixed_prob_mlp(0.0)]
        got = ood.score_ensemble_epistemic(members, np.zeros(2))
        assert abs(got - 1.0) < 1e-9

    def test_all_uncertain_is_zero(self):
        members = [fixed_prob_mlp(0.5)] * 4
        assert abs(ood.score_ensemble_epistemic(members, np.zeros(2))) < 1e-12

    def test_bounded_by_one_bit(self):
        rng = np.random.default_rng(1)
        members = [fixed_prob_mlp(p) for p in rng.random(5)]
        s = ood.score_ensemble_epistemic(members, rng.normal(size=(20, 2)))
        assert np.all(s >= -1e-12) and np.all(s <= 1.0)


class TestEnergy:
    def test_symmetric_logits(self):
        m = fixed_logit_mlp((0.0, 0.0))
        got = ood.score_energy(m, np.zeros(2))
        assert abs(got - (-math.log(2))) < 1e-12

    def test_three_one_logits(self):
        m = fixed_logit_mlp((3.0, 1.0))
        got = ood.score_energy(m, np.zeros(2))
        assert abs(got - (-(3 + math.log(1 + math.exp(-2))))) < 1e-12

    def test_dominant_logit(self):
        m = fixed_logit_mlp((10.0, -10.0))
        assert abs(ood.score_energy(m, np.zeros(2)) - (-10.0)) < 1e-8

    def test_low_temperature_approaches_negative_max_logit(self):
        m = fixed_logit_mlp((1.7, 0.4))
        got = ood.score_energy(m, np.zeros(2), temperature=1e-3)
        assert abs(got - (-1.7)) < 1e-2

    def test_continuous_in_temperature(self):
        m = fixed_logit_mlp((1.0, 0.3))
        temps = np.linspace(0.2, 3.0, 30)
        values = [ood.score_energy(m, np.zeros(2), temperature=float(t))
                  for t in temps]
        diffs = np.abs(np.diff(values))
        assert diffs.max() < 0.2

    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError):
            ood.score_energy(fixed_logit_mlp((0, 0)), np.zeros(2), temperature=0.0)


class TestGaussianMixtureParams:
    def test_two_point_degenerate_classes(self):
        h = np.array([[1.0, 2.0], [1.0, 2.0], [5.0, 6.0], [5.0, 6.0]])
        y = np.array([0, 0, 1, 1])
        params = ood.gaussian_mixture_params(h, y)
        np.testing.assert_array_equal(params.means, [[1, 2], [5, 6]])
        # covariance is pure regularization; inversion succeeded
        assert params.eps > 0
        assert np.isfinite(params.cov_inv).all()

    def test_monte_carlo_recovery(self):
        rng = np.random.default_rng(2)
        cov = np.array([[1.0, 0.3], [0.3, 0.8]])
        chol = np.linalg.cholesky(cov)
        mu = {0: np.array([-1.0, 0.5]), 1: np.array([2.0, -0.5])}
        n = 10_000
        h = np.vstack([mu[0] + rng.normal(size=(n, 2)) @ chol.T,
                       mu[1] + rng.normal(size=(n, 2)) @ chol.T])
        y = np.array([0] * n + [1] * n)
        params = ood.gaussian_mixture_params(h, y)
        assert np.abs(params.means[0] - mu[0]).max() < 0.05
        assert np.abs(params.means[1] - mu[1]).max() < 0.05
        assert np.linalg.norm(params.cov - cov, ord="fro") < 0.05

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        h = rng.normal(size=(50, 3))
        y = rng.integers(0, 2, 50)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        a = ood.gaussian_mixture_params(h, y)
        perm = rng.permutation(50)
        b = ood.gaussian_mixture_params(h[perm], y[perm])
        np.testing.assert_allclose(a.means, b.means, atol=1e-12)
        np.testing.assert_allclose(a.cov, b.cov, atol=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            ood.gaussian_mixture_params(np.zeros((4, 2)), np.zeros(4))


class TestGemScore:
    def test_single_class_at_mean_scores_zero(self):
        m = zero_hidden_mlp()
        params = ood.GemParams(np.zeros((1, 2)), np.eye(2), np.eye(2), 0.0)
        got = ood.score_gem(params, m, np.zeros(2))
        assert abs(got) < 1e-12

    def test_two_class_closed_form(self):
        m = zero_hidden_mlp()
        for dist in (1.0, 2.0, 3.5):
            means = np.array([[0.0, 0.0], [dist, 0.0]])
            params = ood.GemParams(means, np.eye(2), np.eye(2), 0.0)
            got = ood.score_gem(params, m, np.zeros(2))
            expected = -math.log(1 + math.exp(-dist**2 / 2))
            assert abs(got - expected) < 1e-12

    def test_score_rises_moving_away_from_means(self):
        m = pass_through_mlp(2)
        means = np.array([[1.0, 1.0], [2.0, 2.0]])
        params = ood.GemParams(means, np.eye(2), np.eye(2), 0.0)
        radii = np.linspace(3.0, 8.0, 6)
        scores = [ood.score_gem(params, m, np.array([r, r])) for r in radii]
        assert all(a < b for a, b in zip(scores, scores[1:]))

    def test_logit_shift_identity(self):
        rng = np.random.default_rng(4)
        f = rng.normal(size=(30, 2))
        c = 3.7
        shifted = ood.logsumexp(f + c, axis=1)
        base = ood.logsumexp(f, axis=1)
        np.testing.assert_allclose(shifted, base + c, atol=1e-10)


class TestOrientationContract:
    def test_all_methods_rank_shifted_rows_higher(self):
        scenario = synth.ShiftScenario(
            n_train=4000, n_test=3000, d=20, ood_fraction=0.3,
            mean_shift=synth.sparse_shift(20, 4.0, 7, n_dims=2),
            cov_scale=1.0, label_noise_ood=0.5, seed=7,
        )
        data = synth.generate(scenario)
        pp = tabular.neural_preprocess_fit(data.train)
        z_train, _ = tabular.neural_preprocess_apply(pp, data.train)
        z_test, _ = tabular.neural_preprocess_apply(pp, data.test)
        scorers = ood.fit_all_scorers(
            z_train, data.train_labels,
            nn.TrainConfig.vae(7, max_epochs=40),
            nn.TrainConfig(max_epochs=30, seed=8),
        )
        mask = data.ood_mask
        for name, scorer in scorers.items():
            s = scorer.score(z_test)
            assert np.isfinite(s).all()
            assert np.median(s[mask]) > np.median(s[~mask]), name


class TestScorerArtifacts:
    def test_inconsistent_artifacts_rejected(self):
        with pytest.raises(ValueError, match="inconsistent"):
            ood.OodScorer(ood.ENERGY)

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            ood.OodScorer("maximum_softmax")

    def test_orientation_flip_only_for_gem(self):
        m = fixed_prob_mlp(0.5)
        params = ood.GemParams(np.zeros((1, 2)), np.eye(2), np.eye(2), 0.0)
        assert ood.OodScorer(ood.GEM, mlp=m, gem_params=params).orientation_flip
        assert not ood.OodScorer(ood.ENERGY, mlp=m).orientation_flip

    def test_serialization_round_trip_all_methods(self, tmp_path):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(60, 3))
        y = rng.integers(0, 2, 60)
        y[:2] = [0, 1]
        scorers = ood.fit_all_scorers(
            x, y, nn.TrainConfig(max_epochs=2, seed=0),
            nn.TrainConfig(max_epochs=2, seed=1), n_members=2,
            hidden=(6, 4), vae_hidden=6, vae_latent=2,
        )
        probe = rng.normal(size=(7, 3))
        for name, scorer in scorers.items():
            path = tmp_path / f"{name}.json"
            ood.scorer_to_json(scorer, path)
            back = ood.scorer_from_json(path)
            np.testing.assert_array_equal(back.score(probe), scorer.score(probe))
