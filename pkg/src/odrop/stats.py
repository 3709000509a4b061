"""Dataset-shift confirmation statistics and kernel density estimation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .special import chi2_sf, log_binom, student_t_two_sided_p

WELCH_T = "welch_t"
CHI_SQUARE = "chi_square"
FISHER_EXACT = "fisher_exact"

# Cochran's rule: chi-square is adequate when every expected count is >= 1
# and at least 80% of cells have expected counts >= 5.
_COCHRAN_MIN_EXPECTED = 1.0
_COCHRAN_CELL_EXPECTED = 5.0
_COCHRAN_CELL_FRACTION = 0.8


@dataclass
class TestResult:
    test_kind: str
    statistic: float
    p_value: float
    dof: float | None = None
    degenerate: bool = False
    warning: str | None = None


@dataclass
class KdeCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float


def welch_t(sample_a: np.ndarray, sample_b: np.ndarray) -> TestResult:
    """Two-sided Welch's t-test with the Welch-Satterthwaite dof."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 values")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        if a.mean() == b.mean():
            return TestResult(WELCH_T, 0.0, 1.0, dof=float(a.size + b.size - 2),
                              degenerate=True)
        stat = math.inf if a.mean() > b.mean() else -math.inf
        return TestResult(WELCH_T, stat, 0.0, dof=float(a.size + b.size - 2),
                          degenerate=True)
    sa = va / a.size
    sb = vb / b.size
    stat = (a.mean() - b.mean()) / math.sqrt(sa + sb)
    dof = (sa + sb) ** 2 / (
        (sa**2 / (a.size - 1) if a.size > 1 else 0.0)
        + (sb**2 / (b.size - 1) if b.size > 1 else 0.0)
    )
    return TestResult(WELCH_T, float(stat), student_t_two_sided_p(stat, dof), dof=dof)


def _validate_counts(table: np.ndarray) -> np.ndarray:
    t = np.asarray(table, dtype=np.float64)
    if t.ndim != 2:
        raise ValueError("contingency table must be 2-D")
    if np.any(t < 0) or np.any(t != np.round(t)):
        raise ValueError("counts must be non-negative integers")
    if np.any(t.sum(axis=0) == 0) or np.any(t.sum(axis=1) == 0):
        raise ValueError("contingency table has an all-zero margin")
    return t


def expected_counts(table: np.ndarray) -> np.ndarray:
    t = _validate_counts(table)
    return np.outer(t.sum(axis=1), t.sum(axis=0)) / t.sum()


def chi_square_test(table: np.ndarray) -> TestResult:
    """Pearson chi-square test of independence on an R x K count table."""
    t = _validate_counts(table)
    exp = expected_counts(t)
    stat = float(((t - exp) ** 2 / exp).sum())
    dof = float((t.shape[0] - 1) * (t.shape[1] - 1))
    return TestResult(CHI_SQUARE, stat, chi2_sf(stat, dof), dof=dof)


def fisher_exact_2x2(table: np.ndarray) -> TestResult:
    """Two-sided Fisher exact test: sum of hypergeometric probabilities no
    larger than the observed table's."""
    t = _validate_counts(table)
    if t.shape != (2, 2):
        raise ValueError("Fisher exact test supports 2x2 tables only")
    r1 = int(t[0].sum())
    c1 = int(t[:, 0].sum())
    n = int(t.sum())

    def log_p(a: int) -> float:
        return log_binom(c1, a) + log_binom(n - c1, r1 - a) - log_binom(n, r1)

    a_obs = int(t[0, 0])
    lp_obs = log_p(a_obs)
    lo = max(0, r1 + c1 - n)
    hi = min(r1, c1)
    # Relative slack absorbs rounding when comparing equal-probability tables.
    cutoff = lp_obs + 1e-7
    p = sum(
        math.exp(lp) for a in range(lo, hi + 1) if (lp := log_p(a)) <= cutoff
    )
    return TestResult(FISHER_EXACT, float(math.exp(lp_obs)), min(p, 1.0))


def choose_test(table: np.ndarray) -> TestResult:
    """Route a contingency table per Cochran's rule.

    Chi-square when all expected counts are >= 1 and >= 80% of cells have
    expected >= 5; otherwise Fisher for 2x2 tables.  Larger tables failing
    the rule fall back to chi-square with a warning flag.
    """
    t = _validate_counts(table)
    exp = expected_counts(t)
    ok = (
        np.all(exp >= _COCHRAN_MIN_EXPECTED)
        and (exp >= _COCHRAN_CELL_EXPECTED).mean() >= _COCHRAN_CELL_FRACTION
    )
    if ok:
        return chi_square_test(t)
    if t.shape == (2, 2):
        return fisher_exact_2x2(t)
    result = chi_square_test(t)
    result.warning = "cochran_rule_violated_non_2x2"
    return result


def kde(sample: np.ndarray, grid_size: int = 256) -> KdeCurve:
    """Gaussian kernel density estimate with the Silverman bandwidth.

    The grid spans the data range extended by 4 bandwidths on each side.
    """
    x = np.asarray(sample, dtype=np.float64)
    if x.size < 2 or np.unique(x).size < 2:
        raise ValueError("kde needs at least 2 distinct values")
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    std = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    iqr = q75 - q25
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    h = 0.9 * spread * x.size ** (-0.2)
    grid = np.linspace(x.min() - 4 * h, x.max() + 4 * h, grid_size)
    z = (grid[:, None] - x[None, :]) / h
    density = np.exp(-0.5 * z**2).sum(axis=1) / (x.size * h * math.sqrt(2 * math.pi))
    return KdeCurve(grid, density, float(h))
