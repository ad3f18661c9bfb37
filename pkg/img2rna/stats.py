# -*- coding: utf-8 -*-
"""
Per-gene association statistics.

- Pearson correlation (two-pass) and its two-sided Student-t p-value
- permutation p-value for small samples
- Holm-Sidak step-down rejection and adjusted p-values
- Holm-Bonferroni step-down rejection
"""
import numpy as np
from scipy.stats import t as student_t

from img2rna.exceptions import InputError, UndefinedCorrelationError


def _vectors(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InputError("Vectors should have equal length, got %s and %s." % (x.size, y.size))
    if x.size < 2:
        raise InputError("Pearson correlation needs at least 2 values, got %s." % x.size)
    return x, y


def pearson(x, y, gene_id=None):
    """
    Pearson correlation coefficient of ``x`` and ``y``.

    Uses centered sums (two passes) and clamps the result to [-1, 1].

    Raises
    ------
    UndefinedCorrelationError
        When either vector has zero variance.
    """
    x, y = _vectors(x, y)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError(gene_id=gene_id)
    dx = x - x.mean()
    dy = y - y.mean()
    r = np.sum(dx * dy) / np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    return float(min(1.0, max(-1.0, r)))


def pearson_pvalue(r, n):
    """
    Two-sided p-value of ``r`` from the t distribution with n - 2 degrees of freedom.

    |r| = 1 gives p = 0 (exact relation).
    """
    if n < 3:
        raise InputError("A p-value needs n >= 3, got %s." % n)
    if abs(r) >= 1.0:
        return 0.0
    t_stat = r * np.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * student_t.sf(abs(t_stat), n - 2)
    return float(min(1.0, max(0.0, p)))


def permutation_pvalue(x, y, permutations, rng):
    """
    Two-sided permutation p-value of the Pearson correlation.

    ``y`` is shuffled ``permutations`` times with ``rng``; the p-value is
    (1 + #{|r_perm| >= |r_obs|}) / (1 + permutations).
    """
    x, y = _vectors(x, y)
    r_obs = pearson(x, y)
    shuffled = rng.permuted(np.tile(y, (permutations, 1)), axis=1)

    dx = x - x.mean()
    dy = shuffled - shuffled.mean(axis=1, keepdims=True)
    r_perm = (dy @ dx) / np.sqrt(np.sum(dx * dx) * np.sum(dy * dy, axis=1))
    hits = np.count_nonzero(np.abs(r_perm) >= abs(r_obs) - 1e-12)
    return float((hits + 1) / (permutations + 1))


# Multiple testing
# ================

def _check_pvalues(pvalues, alpha=None):
    p = np.asarray(pvalues, dtype=np.float64).ravel()
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise InputError("p-values should lie in [0, 1].")
    if alpha is not None and not 0.0 < alpha < 1.0:
        raise InputError("alpha should be in (0, 1), got %s." % alpha)
    return p


def holm_sidak_thresholds(m, alpha):
    """Step-down thresholds 1 - (1 - alpha)^(1 / (m - i + 1)) for ranks i = 1..m."""
    remaining = m - np.arange(m)
    return 1.0 - (1.0 - alpha) ** (1.0 / remaining)


def _step_down(p, thresholds):
    order = np.argsort(p, kind="mergesort")
    reject = np.zeros(p.size, dtype=bool)
    for rank, idx in enumerate(order):
        if p[idx] > thresholds[rank]:
            break
        reject[idx] = True
    return reject


def holm_sidak(pvalues, alpha=0.05):
    """
    Holm-Sidak step-down procedure.

    Sort ascending, reject while p_(i) <= 1 - (1 - alpha)^(1 / (m - i + 1)) and
    stop at the first failure.

    Returns
    -------
    numpy.ndarray of bool
        Rejection flags in the input order.
    """
    p = _check_pvalues(pvalues, alpha)
    return _step_down(p, holm_sidak_thresholds(p.size, alpha))


def holm_sidak_adjust(pvalues):
    """
    Holm-Sidak adjusted p-values (input order).

    ``holm_sidak_adjust(p) <= alpha`` equals ``holm_sidak(p, alpha)``.
    """
    p = _check_pvalues(pvalues)
    m = p.size
    if m == 0:
        return p
    order = np.argsort(p, kind="mergesort")
    remaining = m - np.arange(m)
    adjusted_sorted = np.maximum.accumulate(1.0 - (1.0 - p[order]) ** remaining)
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(adjusted_sorted, 1.0)
    return adjusted


def holm_bonferroni(pvalues, alpha=0.05):
    """Holm step-down procedure with thresholds alpha / (m - i + 1)."""
    p = _check_pvalues(pvalues, alpha)
    return _step_down(p, alpha / (p.size - np.arange(p.size)))
