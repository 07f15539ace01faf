"""Spearman (partial) rank correlation tests of conditional independence.

All columns are rank-transformed, the conditioning columns are regressed
out of ``x`` and ``y`` by weighted least squares and the residual
correlation is tested with a Student-t law.  Under weights the sample size
entering the degrees of freedom is Kish's effective size.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .exceptions import DataError

log = logging.getLogger(__name__)

# relative tolerance on the pivoted-QR diagonal for dropping collinear columns
_RANK_TOL = 1e-10
# residual variance below this fraction of the raw variance counts as zero
_DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class CITestResult:
    statistic: float
    p_value: float
    effective_n: float
    cond_set_size: int
    degenerate: bool = False


def rank_transform(x) -> np.ndarray:
    """Ranks 1..n, ties receiving the average of the ranks they span."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise DataError("rank_transform needs a non-empty vector")
    if np.any(np.isnan(x)):
        raise DataError("rank_transform got missing values")
    return stats.rankdata(x, method="average")


def rank_columns(a: np.ndarray) -> np.ndarray:
    """Column-wise average ranks of a 2-d array."""
    a = np.asarray(a, dtype=float)
    if a.shape[0] == 0:
        return a.copy()
    return stats.rankdata(a, method="average", axis=0)


def effective_n(weights) -> float:
    """Kish effective sample size (sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.sum(w * w))


def spearman(x, y, weights=None) -> CITestResult:
    """Spearman correlation test; identical to ``partial_corr`` with empty Z."""
    return partial_corr(x, y, None, weights)


def partial_corr(x, y, Z=None, weights=None) -> CITestResult:
    """Spearman partial correlation of ``x`` and ``y`` given columns ``Z``.

    Parameters
    ----------
    x, y : array_like, shape (n,)
    Z : array_like, shape (n, k) or None
        Conditioning columns.  Collinear columns are dropped and the reduced
        count is reported as ``cond_set_size``.
    weights : array_like, shape (n,), optional
        Non-negative row weights.

    Returns
    -------
    CITestResult
        Two-sided p-value from ``t = r sqrt(df / (1 - r^2))`` with
        ``df = n_eff - k - 2``.  A constant ``x`` or ``y`` (after
        conditioning) yields a degenerate result with ``p = 1``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    if x.ndim != 1 or y.shape != (n,):
        raise DataError("x and y must be vectors of equal length")
    if Z is None:
        Z = np.empty((n, 0))
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != n:
        raise DataError("conditioning columns must match x in length")
    data = np.column_stack([x, y, Z])
    if np.any(np.isnan(data)):
        raise DataError("partial_corr got missing values")
    ranked = rank_columns(data)
    return partial_corr_ranked(ranked[:, 0], ranked[:, 1], ranked[:, 2:], weights)


def partial_corr_ranked(rx, ry, RZ, weights=None) -> CITestResult:
    """Core of ``partial_corr`` for columns that are already rank-transformed."""
    return partial_corr_ranked_many(np.asarray(rx, dtype=float)[:, None], ry, RZ, weights)[0]


def partial_corr_ranked_many(RX, ry, RZ, weights=None) -> list[CITestResult]:
    """``partial_corr_ranked(RX[:, j], ry, RZ)`` for every column ``j``.

    The conditioning set is factorized once, which is what makes the PC
    step affordable: most candidates at a given level share one set.
    """
    RX = np.asarray(RX, dtype=float)
    n, m = RX.shape
    k = RZ.shape[1]
    if weights is None:
        w = np.ones(n)
        n_eff = float(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,) or np.any(w < 0) or not w.sum() > 0:
            raise DataError("weights must be non-negative with a positive sum")
        n_eff = effective_n(w)
    if n_eff < k + 3:
        raise DataError(f"effective sample size {n_eff:.1f} too small for {k} conditions")
    sw = np.sqrt(w / w.sum())
    A = np.column_stack([ry, RX])
    A_c = (A - (w @ A) / w.sum()) * sw[:, None]
    raw_var = np.sum(A_c * A_c, axis=0)
    kept = 0
    if k:
        Zc = (RZ - (w @ RZ) / w.sum()) * sw[:, None]
        q, r, _ = linalg.qr(Zc, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        scale = max(diag[0], 1.0) if diag.size else 1.0
        kept = int(np.sum(diag > _RANK_TOL * scale * max(n, 1)))
        if kept:
            qk = q[:, :kept]
            A_c = A_c - qk @ (qk.T @ A_c)
    df = n_eff - kept - 2
    if df < 1:
        raise DataError(f"effective sample size {n_eff:.1f} too small for {kept} conditions")
    res_var = np.sum(A_c * A_c, axis=0)
    bad = (raw_var <= 0) | (res_var <= _DEGENERATE_TOL * np.maximum(raw_var, 1e-300))
    out = []
    for j in range(m):
        if bad[0] or bad[j + 1]:
            out.append(CITestResult(0.0, 1.0, n_eff, kept, degenerate=True))
            continue
        r = float(np.sum(A_c[:, 0] * A_c[:, j + 1]) / np.sqrt(res_var[0] * res_var[j + 1]))
        r = min(1.0, max(-1.0, r))
        out.append(CITestResult(r, t_pvalue(r, df), n_eff, kept))
    return out


def t_pvalue(r: float, df: float) -> float:
    """Two-sided p-value of a correlation ``r`` with ``df`` degrees of freedom."""
    if abs(r) >= 1.0:
        return 0.0
    t = r * np.sqrt(df / (1.0 - r * r))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))
