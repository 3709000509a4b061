from __future__ import annotations

import numpy as np
import pytest

from odrop.gbt import BoostConfig
from odrop.metrics import UndefinedMetricError, auroc, prauc
from odrop.rejection import (
    AUROC,
    PRAUC,
    build_report,
    cv_baseline,
    default_rate_grid,
    partition,
    rejection_curve,
    threshold_for_rate,
)


def best_achievable_rejections(scores: np.ndarray, rate: float) -> int:
    """Enumeration oracle: max rejectable count over all cut points without
    exceeding the rate."""
    n = len(scores)
    budget = int(np.floor(rate * n + 1e-12))
    best = 0
    for t in np.unique(scores):
        k = int((scores > t).sum())
        if k <= budget:
            best = max(best, k)
    return best


class TestThresholdForRate:
    def test_rate_zero_rejects_nothing(self):
        s = np.array([3.0, 1.0, 2.0])
        t = threshold_for_rate(s, 0.0)
        assert t >= s.max()
        keep, rate = partition(s, t)
        assert keep.all() and rate == 0.0

    def test_worked_example(self):
        s = np.array([1.0, 2.0, 3.0, 4.0])
        t = threshold_for_rate(s, 0.25)
        assert 3.0 <= t < 4.0
        keep, rate = partition(s, t)
        assert rate == 0.25 and not keep[3] and keep[:3].all()

    def test_all_tied_rejects_nothing(self):
        s = np.ones(10)
        t = threshold_for_rate(s, 0.4)
        keep, rate = partition(s, t)
        assert keep.all() and rate == 0.0

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(5, 200))
            s = np.round(rng.normal(size=n), 1)
            rate = float(rng.uniform(0, 0.5))
            t = threshold_for_rate(s, rate)
            achieved = int((s > t).sum())
            assert achieved == best_achievable_rejections(s, rate)

    def test_empty_scores_rejected(self):
        with pytest.raises(ValueError):
            threshold_for_rate(np.array([]), 0.1)


class TestPartition:
    def test_rate_arithmetic(self):
        s = np.concatenate([np.zeros(75), np.ones(25)])
        keep, rate = partition(s, 0.5)
        assert rate == 0.25 and keep.sum() == 75

    def test_no_rejections(self):
        keep, rate = partition(np.array([1.0, 2.0]), 5.0)
        assert rate == 0.0 and keep.all()

    def test_threshold_below_min_rejects_all(self):
        keep, rate = partition(np.array([1.0, 2.0]), 0.0)
        assert rate == 1.0 and not keep.any()


class TestRejectionCurve:
    def test_rate_zero_point_equals_plain_metric(self):
        rng = np.random.default_rng(1)
        pred = rng.random(500)
        labels = (rng.random(500) < 0.4).astype(int)
        scores = rng.random(500)
        curve = rejection_curve(scores, pred, labels, AUROC)
        assert curve.baseline == auroc(pred, labels)
        assert curve.values[0] == curve.baseline

    def test_independent_scores_stay_flat(self):
        rng = np.random.default_rng(2)
        n = 5000
        pred = rng.random(n)
        labels = (rng.random(n) < pred).astype(int)
        scores = rng.random(n)
        for kind in (AUROC, PRAUC):
            curve = rejection_curve(scores, pred, labels, kind)
            assert np.abs(curve.values - curve.baseline).max() < 0.03

    def test_oracle_indicator_recovers_clean_metric(self):
        rng = np.random.default_rng(3)
        n = 4000
        ood_mask = np.zeros(n, dtype=bool)
        ood_mask[: int(0.3 * n)] = True
        logits = rng.normal(0, 2.0, n)
        p = 1 / (1 + np.exp(-logits))
        labels = (rng.random(n) < p).astype(int)
        labels[ood_mask] = rng.integers(0, 2, ood_mask.sum())
        scores = ood_mask.astype(float) + 0.001 * rng.random(n)
        curve = rejection_curve(scores, p, labels, AUROC)
        clean = auroc(p[~ood_mask], labels[~ood_mask])
        at_or_past = curve.rates >= 0.3 - 1e-9
        assert np.all(curve.values[at_or_past] > curve.baseline)
        assert abs(curve.values[at_or_past][0] - clean) < 1e-12
        assert curve.tau_b > 0

    def test_single_point_grid_degenerates_gracefully(self):
        rng = np.random.default_rng(4)
        pred = rng.random(100)
        labels = (rng.random(100) < 0.5).astype(int)
        curve = rejection_curve(rng.random(100), pred, labels, AUROC,
                                rate_grid=np.array([0.0]))
        assert curve.values.tolist() == [curve.baseline]
        assert curve.tau_b == 0.0
        assert "tau_degenerate" in curve.flags

    def test_rates_increase_and_retained_decrease(self):
        rng = np.random.default_rng(5)
        pred = rng.random(800)
        labels = (rng.random(800) < 0.3).astype(int)
        curve = rejection_curve(rng.random(800), pred, labels, AUROC)
        assert np.all(np.diff(curve.rates) > 0)
        assert np.all(np.diff(curve.n_retained) < 0)

    def test_single_class_at_rate_zero_raises(self):
        with pytest.raises(UndefinedMetricError):
            rejection_curve(np.random.random(10), np.random.random(10),
                            np.ones(10), AUROC)

    def test_class_losing_points_are_dropped_with_flags(self):
        # all positives carry the top scores, so high rates retain one class
        pred = np.linspace(0, 1, 40)
        labels = np.array([0] * 30 + [1] * 10)
        scores = np.concatenate([np.zeros(30), np.arange(1.0, 11.0)])
        curve = rejection_curve(scores, pred, labels, AUROC)
        assert any(f.startswith("dropped_rate") for f in curve.flags)
        assert curve.rates.max() < 0.4 - 1e-9

    def test_peak_is_first_argmax(self):
        rng = np.random.default_rng(6)
        pred = rng.random(300)
        labels = (rng.random(300) < 0.5).astype(int)
        curve = rejection_curve(rng.random(300), pred, labels, AUROC)
        peak_idx = int(np.argmax(curve.values))
        assert curve.peak_value == curve.values[peak_idx]
        assert curve.peak_rate == curve.rates[peak_idx]
        assert curve.improvement == curve.peak_value - curve.baseline

    def test_default_grid_has_41_percent_steps(self):
        grid = default_rate_grid()
        assert len(grid) == 41
        assert grid[0] == 0.0 and grid[-1] == 0.4
        np.testing.assert_allclose(np.diff(grid), 0.01)

    def test_unknown_metric_kind(self):
        with pytest.raises(ValueError, match="metric"):
            rejection_curve(np.zeros(4), np.zeros(4), np.array([0, 1, 0, 1]),
                            "accuracy")

    def test_deployment_mode_uses_reference_quantiles(self):
        rng = np.random.default_rng(11)
        pred = rng.random(600)
        labels = (rng.random(600) < 0.4).astype(int)
        scores = rng.random(600)
        train_scores = rng.random(2000)
        curve = rejection_curve(scores, pred, labels, AUROC,
                                threshold_scores=train_scores)
        # thresholds derive from the reference sample: at each grid rate the
        # achieved rejection tracks the reference quantile, not the test one
        t = threshold_for_rate(train_scores, 0.2)
        expected_rate = float((scores > t).mean())
        assert np.any(np.isclose(curve.rates, expected_rate))


class TestReport:
    def test_entries_summarize_curves(self):
        rng = np.random.default_rng(7)
        pred = rng.random(400)
        labels = (rng.random(400) < 0.4).astype(int)
        curves = {
            ("vae_reconstruction", AUROC): rejection_curve(
                rng.random(400), pred, labels, AUROC),
            ("energy", PRAUC): rejection_curve(
                rng.random(400), pred, labels, PRAUC),
        }
        report = build_report(curves)
        assert len(report.entries) == 2
        for entry in report.entries:
            curve = curves[(entry["method"], entry["metric"])]
            assert entry["improvement"] == curve.peak_value - curve.baseline
        text = report.to_json()
        assert "odrop-report" in text


class TestCvBaseline:
    def test_deterministic(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(120, 3))
        y = (x[:, 0] + 0.5 * rng.normal(size=120) > 0).astype(int)
        cfg = BoostConfig(10, 2, seed=0)
        a = cv_baseline(x, y, cfg, k=4, seed=1)
        b = cv_baseline(x, y, cfg, k=4, seed=1)
        np.testing.assert_array_equal(a.fold_auroc, b.fold_auroc)
        np.testing.assert_array_equal(a.fold_prauc, b.fold_prauc)

    def test_separable_data_perfect_every_fold(self):
        rng = np.random.default_rng(9)
        x = np.vstack([rng.normal(-3, 0.3, size=(60, 2)),
                       rng.normal(3, 0.3, size=(60, 2))])
        y = np.array([0] * 60 + [1] * 60)
        res = cv_baseline(x, y, BoostConfig(20, 2, seed=0), k=5, seed=2)
        assert res.auroc_mean >= 0.95
        np.testing.assert_array_equal(res.fold_auroc, np.ones(5))
        assert res.auroc_std == 0.0

    def test_reports_both_metrics(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(100, 2))
        y = (x[:, 0] > 0).astype(int)
        res = cv_baseline(x, y, BoostConfig(5, 2, seed=0), k=4, seed=0)
        assert 0.0 <= res.prauc_mean <= 1.0
        assert len(res.fold_prauc) == 4
