"""Weibull accelerated-failure-time fits, the proportional-hazards view of
the same model, BIC comparison of covariate sets and a Cox baseline.

Notation: ``log T = mu + alpha' x + sigma W`` with ``W`` standard minimum
extreme value.  In proportional-hazards form the hazard is
``gamma * lam * t**(gamma - 1) * exp(beta' x)``.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg, stats

from .exceptions import ConvergenceError, DataError
from .panel import PanelDataset, SurvivalRecord, to_survival

log = logging.getLogger(__name__)

GRAD_TOL = 1e-8
MAX_ITER = 200
# a Cox coefficient whose effect on the linear predictor exceeds this many
# log-units across the observed covariate range signals a monotone likelihood
_MONOTONE_SPAN = 25.0
# the same when the standard error alone spans this many log-units: the
# information has vanished, as it does along a diverging direction
_MONOTONE_SE_SPAN = 50.0


@dataclass(frozen=True)
class AftFit:
    mu: float
    alpha: np.ndarray
    sigma: float
    loglik: float
    n: int
    k: int
    coef_se: np.ndarray
    p_values: np.ndarray
    mu_se: float = float("nan")
    sigma_se: float = float("nan")
    names: tuple[str, ...] = ()
    n_iter: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise DataError("AFT scale sigma must be positive")
        if self.k != len(self.alpha) + 2:
            raise DataError("AFT parameter count must equal len(alpha) + 2")

    def coef(self, name: str) -> tuple[float, float]:
        """(coefficient, p-value) of a named covariate."""
        j = self.names.index(name)
        return float(self.alpha[j]), float(self.p_values[j])


@dataclass(frozen=True)
class PhParams:
    gamma: float
    lam: float
    beta: np.ndarray


@dataclass(frozen=True)
class CoxFit:
    log_hr: np.ndarray
    se: np.ndarray
    p_values: np.ndarray
    partial_loglik: float
    names: tuple[str, ...] = ()
    n_iter: int = 0

    @property
    def hazard_ratio(self) -> np.ndarray:
        return np.exp(self.log_hr)

    def confint(self, level: float = 0.95) -> np.ndarray:
        """Wald interval for the log hazard ratios, shape (p, 2)."""
        q = stats.norm.ppf(0.5 + level / 2)
        return np.column_stack([self.log_hr - q * self.se, self.log_hr + q * self.se])


def _arrays(records: Sequence[SurvivalRecord], weights):
    if not records:
        raise DataError("no survival records")
    t = np.array([r.duration_months for r in records], dtype=float)
    d = np.array([bool(r.event) for r in records], dtype=float)
    X = np.array([np.asarray(r.covariates, dtype=float).ravel() for r in records], dtype=float)
    if X.ndim != 2:
        raise DataError("survival records must share one covariate length")
    if np.any(~np.isfinite(X)):
        raise DataError("survival covariates contain missing or infinite values")
    if weights is None:
        w = np.ones(len(t))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != t.shape or np.any(w < 0) or not w.sum() > 0:
            raise DataError("weights must be non-negative, one per record, with a positive sum")
    if not np.any(d * w > 0):
        raise DataError("no events among the survival records")
    return t, d, X, w


def _collinear(A: np.ndarray, labels: Sequence[str]) -> list[str]:
    """Labels of columns of ``A`` that pivoted QR finds linearly dependent."""
    if A.shape[1] == 0:
        return []
    _, r, piv = linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = 1e-10 * max(diag[0], 1.0) * max(A.shape)
    rank = int(np.sum(diag > tol))
    return [labels[j] for j in sorted(piv[rank:])]


def _labels(names, p):
    if names is None:
        return tuple(f"x{j}" for j in range(p))
    names = tuple(names)
    if len(names) != p:
        raise DataError(f"{len(names)} covariate names for {p} covariates")
    return names


def aft_loglik(theta: np.ndarray, logt, delta, X1, w):
    """Log-likelihood, gradient and Hessian in ``theta = (mu, alpha, log sigma)``.

    ``X1`` carries a leading column of ones.  With
    ``z = (log t - X1 b) / sigma`` the log-likelihood is
    ``sum(w * delta * (z - log sigma)) - sum(w * exp(z))``.
    """
    b, s = theta[:-1], theta[-1]
    # far-off trial points overflow; the line search rejects them as non-finite
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        sigma = np.exp(s)
        z = (logt - X1 @ b) / sigma
        ez = np.exp(z)
        ll = float(np.sum(w * delta * (z - s)) - np.sum(w * ez))
        r = w * (ez - delta)
        g = np.empty_like(theta)
        g[:-1] = X1.T @ r / sigma
        g[-1] = np.sum(w * (z * (ez - delta) - delta))
        H = np.empty((theta.size, theta.size))
        H[:-1, :-1] = -(X1.T * (w * ez)) @ X1 / sigma**2
        H[:-1, -1] = H[-1, :-1] = -X1.T @ (w * (z * ez + ez - delta)) / sigma
        H[-1, -1] = -np.sum(w * (z * (ez - delta) + z * z * ez))
    return ll, g, H


def _newton_dir(g, H):
    """Ascent direction from the Newton system, ridged if -H is not PD."""
    A = -H
    ridge = 0.0
    scale = max(np.max(np.abs(np.diag(A))), 1e-12)
    for _ in range(30):
        try:
            c = linalg.cho_factor(A + ridge * np.eye(len(g)))
            return linalg.cho_solve(c, g)
        except linalg.LinAlgError:
            ridge = scale * 1e-8 if ridge == 0 else ridge * 10
    return g / scale


def _maximize(fun, theta, what: str):
    """Damped Newton ascent with step halving; returns (theta, ll, H, iters)."""
    ll, g, H = fun(theta)
    for it in range(1, MAX_ITER + 1):
        if not np.all(np.isfinite(g)):
            raise ConvergenceError(f"{what}: non-finite gradient at iteration {it}")
        if np.max(np.abs(g)) < GRAD_TOL:
            return theta, ll, H, it - 1
        step = _newton_dir(g, H)
        t = 1.0
        for _ in range(60):
            cand = theta + t * step
            ll_new, g_new, H_new = fun(cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            t /= 2
        else:
            raise ConvergenceError(
                f"{what}: line search failed at iteration {it} (loglik {ll:.6g}, |grad| {np.max(np.abs(g)):.3g})"
            )
        if np.max(np.abs(cand - theta)) < 1e-15 * (1 + np.max(np.abs(theta))):
            raise ConvergenceError(f"{what}: stalled at iteration {it} (|grad| {np.max(np.abs(g)):.3g})")
        theta, ll, g, H = cand, ll_new, g_new, H_new
    raise ConvergenceError(
        f"{what}: no convergence in {MAX_ITER} iterations (loglik {ll:.6g}, |grad| {np.max(np.abs(g)):.3g})"
    )


def _wald(coef, se):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, coef / se, 0.0)
    return np.clip(2 * stats.norm.sf(np.abs(z)), 0.0, 1.0)


def fit_weibull_aft(records: Sequence[SurvivalRecord], weights=None, names: Sequence[str] | None = None) -> AftFit:
    """Maximum-likelihood Weibull AFT fit under right censoring.

    Parameters
    ----------
    records : sequence of SurvivalRecord
    weights : array_like, optional
        Per-record likelihood weights.  Not used unless given.
    names : sequence of str, optional
        Covariate labels, used in error messages and ``AftFit.coef``.

    Returns
    -------
    AftFit
        Standard errors come from the inverse observed information at the
        optimum; the standard error of ``sigma`` by the delta method.

    Raises
    ------
    DataError
        No events, or a rank-deficient design (collinear columns are named).
    ConvergenceError
        The gradient sup-norm stays above ``GRAD_TOL`` after ``MAX_ITER``
        Newton steps.
    """
    t, d, X, w = _arrays(records, weights)
    labels = _labels(names, X.shape[1])
    X1 = np.column_stack([np.ones(len(t)), X])
    bad = _collinear(X1, ("(intercept)",) + labels)
    if bad:
        raise DataError(f"rank-deficient AFT design; collinear columns: {', '.join(bad)}")
    logt = np.log(t)
    ev = d > 0
    sd = float(np.std(logt[ev])) if ev.sum() > 1 else 0.0
    theta0 = np.zeros(X1.shape[1] + 1)
    theta0[0] = float(np.mean(logt[ev]))
    theta0[-1] = np.log(sd) if sd > 1e-8 else 0.0
    theta, ll, H, iters = _maximize(lambda th: aft_loglik(th, logt, d, X1, w), theta0, "Weibull AFT")
    try:
        cov = linalg.inv(-H)
    except linalg.LinAlgError as exc:
        raise ConvergenceError(f"Weibull AFT: singular information matrix ({exc})") from None
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    sigma = float(np.exp(theta[-1]))
    alpha = theta[1:-1].copy()
    return AftFit(
        mu=float(theta[0]),
        alpha=alpha,
        sigma=sigma,
        loglik=ll,
        n=len(t),
        k=len(alpha) + 2,
        coef_se=se[1:-1].copy(),
        p_values=_wald(alpha, se[1:-1]),
        mu_se=float(se[0]),
        sigma_se=sigma * float(se[-1]),
        names=labels,
        n_iter=iters,
    )


def ph_params(mu: float, alpha, sigma: float) -> PhParams:
    if not sigma > 0:
        raise DataError("sigma must be positive")
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    return PhParams(1.0 / sigma, float(np.exp(-mu / sigma)), -alpha / sigma)


def aft_to_ph(fit: AftFit) -> PhParams:
    """``gamma = 1/sigma``, ``lam = exp(-mu/sigma)``, ``beta = -alpha/sigma``."""
    return ph_params(fit.mu, fit.alpha, fit.sigma)


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DataError("times must be positive")
    return t


def weibull_hazard(t, x, p: PhParams):
    """``gamma * lam * t**(gamma - 1) * exp(beta' x)``."""
    t = _check_t(t)
    eta = float(np.dot(p.beta, np.atleast_1d(np.asarray(x, dtype=float))))
    return p.gamma * p.lam * t ** (p.gamma - 1.0) * np.exp(eta)


def weibull_survival(t, x, p: PhParams):
    """``exp(-lam * t**gamma * exp(beta' x))``."""
    t = _check_t(t)
    eta = float(np.dot(p.beta, np.atleast_1d(np.asarray(x, dtype=float))))
    return np.exp(-p.lam * t**p.gamma * np.exp(eta))


def aft_survival(t, x, mu: float, alpha, sigma: float):
    """Survival implied directly by the AFT form, ``exp(-exp(z))``."""
    t = _check_t(t)
    z = (np.log(t) - mu - float(np.dot(np.atleast_1d(alpha), np.atleast_1d(x)))) / sigma
    return np.exp(-np.exp(z))


def aft_hazard(t, x, mu: float, alpha, sigma: float):
    """Hazard implied directly by the AFT form, ``exp(z) / (sigma t)``."""
    t = _check_t(t)
    z = (np.log(t) - mu - float(np.dot(np.atleast_1d(alpha), np.atleast_1d(x)))) / sigma
    return np.exp(z) / (sigma * t)


def bic(loglik: float, k: int, n: int) -> float:
    if n < 1 or k < 0:
        raise DataError("bic needs n >= 1 and k >= 0")
    return -2.0 * loglik + k * np.log(n)


def time_ratio(coef: float) -> float:
    """Fractional change in expected survival time, ``exp(coef) - 1``."""
    return float(np.expm1(coef))


def cox_loglik(beta, t, d, X, w):
    """Breslow partial log-likelihood with gradient and Hessian."""
    order = np.argsort(-t, kind="stable")
    t, d, X, w = t[order], d[order], X[order], w[order]
    eta = X @ beta
    shift = eta.max()
    r = w * np.exp(eta - shift)
    S0 = np.cumsum(r)
    S1 = np.cumsum(r[:, None] * X, axis=0)
    S2 = np.cumsum(r[:, None, None] * (X[:, :, None] * X[:, None, :]), axis=0)
    # with descending times, the risk set of a tied block ends at its last row
    last = np.r_[np.flatnonzero(t[1:] != t[:-1]), len(t) - 1]
    block_end = np.repeat(last, np.diff(np.r_[-1, last]))
    S0, S1, S2 = S0[block_end], S1[block_end], S2[block_end]
    ev = (d > 0) & (w > 0)
    we = w[ev]
    xbar = S1[ev] / S0[ev, None]
    ll = float(np.sum(we * (eta[ev] - shift - np.log(S0[ev]))))
    g = np.sum(we[:, None] * (X[ev] - xbar), axis=0)
    H = -np.sum(we[:, None, None] * (S2[ev] / S0[ev, None, None] - xbar[:, :, None] * xbar[:, None, :]), axis=0)
    return ll, g, H


def fit_cox(records: Sequence[SurvivalRecord], weights=None, names: Sequence[str] | None = None) -> CoxFit:
    """Cox proportional-hazards fit with Breslow ties.

    Raises
    ------
    DataError
        No events, no covariates or a rank-deficient (centered) design.
    ConvergenceError
        Monotone likelihood, i.e. some coefficient diverges because a
        covariate separates events from the risk sets.
    """
    t, d, X, w = _arrays(records, weights)
    labels = _labels(names, X.shape[1])
    if X.shape[1] == 0:
        raise DataError("Cox model needs at least one covariate")
    Xc = X - np.average(X, axis=0, weights=w)
    const = [labels[j] for j in range(X.shape[1]) if np.ptp(X[:, j]) == 0]
    bad = const or _collinear(Xc, labels)
    if bad:
        raise DataError(f"rank-deficient Cox design; collinear or constant columns: {', '.join(bad)}")
    span = np.ptp(Xc, axis=0)
    fun = lambda b: cox_loglik(b, t, d, Xc, w)  # noqa: E731
    try:
        beta, ll, H, iters = _maximize(fun, np.zeros(X.shape[1]), "Cox")
    except ConvergenceError as exc:
        raise ConvergenceError(f"{exc}; possible monotone likelihood (separation)") from None
    if np.any(np.abs(beta) * span > _MONOTONE_SPAN):
        j = int(np.argmax(np.abs(beta) * span))
        raise ConvergenceError(
            f"Cox: monotone likelihood, coefficient of {labels[j]!r} diverges ({beta[j]:.3g})"
        )
    try:
        cov = linalg.inv(-H)
    except linalg.LinAlgError as exc:
        raise ConvergenceError(f"Cox: singular information matrix ({exc}); possible monotone likelihood") from None
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    if np.any(se * span > _MONOTONE_SE_SPAN):
        j = int(np.argmax(se * span))
        raise ConvergenceError(
            f"Cox: monotone likelihood, coefficient of {labels[j]!r} is unidentified ({beta[j]:.3g} +/- {se[j]:.3g})"
        )
    return CoxFit(beta, se, _wald(beta, se), ll, labels, iters)


# --- covariate-set comparison --------------------------------------------


@dataclass
class ComparisonRow:
    outcome: str
    coef_mb: float | None
    p_mb: float | None
    bic_mb: float
    coef_orig: float | None
    p_orig: float | None
    bic_orig: float
    n: int
    features_mb: list[str] = field(default_factory=list)
    features_orig: list[str] = field(default_factory=list)


@dataclass
class FeatureComparison:
    scope: str
    treatment: str
    rows: list[ComparisonRow]

    @property
    def total_mb(self) -> float:
        return float(sum(r.bic_mb for r in self.rows))

    @property
    def total_orig(self) -> float:
        return float(sum(r.bic_orig for r in self.rows))


COMPARISON_COLUMNS = ("scope", "outcome", "coef_mb", "p_mb", "bic_mb", "coef_orig", "p_orig", "bic_orig", "n")


def _usable(panel: PanelDataset, outcome: str, features: Sequence[str], treatment: str) -> list[str]:
    names = [treatment] + [f for f in features if f != treatment]
    seen = []
    for f in names:
        panel.index(f)  # raises on unknown names
        if f != outcome and f not in seen:
            seen.append(f)
    return seen


def compare_feature_sets(
    panel: PanelDataset,
    outcomes: str | Sequence[str],
    mb_features,
    baseline_features,
    treatment: str = "treatment",
    scope: str = "all",
) -> FeatureComparison:
    """Weibull AFT fits of each outcome under two covariate sets.

    ``mb_features`` and ``baseline_features`` are either one list used for
    every outcome or a mapping from outcome to list.  The treatment is always
    included; the outcome itself and covariates that are constant at
    baseline are dropped.  Both models of an outcome are fit on the same
    patients (complete cases over the union of the two sets), so their BIC
    values are comparable.
    """
    if isinstance(outcomes, str):
        outcomes = [outcomes]

    def pick(feats, o):
        f = feats[o] if isinstance(feats, Mapping) else feats
        return list(f)

    rows = []
    for o in outcomes:
        mb = _usable(panel, o, pick(mb_features, o), treatment)
        orig = _usable(panel, o, pick(baseline_features, o), treatment)
        union = list(dict.fromkeys(mb + orig))
        recs, skipped = to_survival(panel, o, union)
        if skipped:
            log.info("%s: %d patients skipped for missing baseline covariates", o, skipped)
        if not recs:
            raise DataError(f"{o}: no patients with complete baseline covariates")
        X = np.array([r.covariates for r in recs])
        varying = [f for j, f in enumerate(union) if np.ptp(X[:, j]) > 0]
        fits = []
        for feats in (mb, orig):
            feats = [f for f in feats if f in varying]
            cols = [union.index(f) for f in feats]
            sub = [SurvivalRecord(r.duration_months, r.event, r.covariates[cols]) for r in recs]
            fits.append((feats, fit_weibull_aft(sub, names=feats)))
        (f_mb, a_mb), (f_or, a_or) = fits
        c_mb = a_mb.coef(treatment) if treatment in f_mb else (None, None)
        c_or = a_or.coef(treatment) if treatment in f_or else (None, None)
        rows.append(
            ComparisonRow(
                o, c_mb[0], c_mb[1], bic(a_mb.loglik, a_mb.k, a_mb.n),
                c_or[0], c_or[1], bic(a_or.loglik, a_or.k, a_or.n),
                len(recs), f_mb, f_or,
            )
        )
    return FeatureComparison(scope, treatment, rows)


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6g}"


def comparison_to_csv(comps: Sequence[FeatureComparison]) -> str:
    """Delimiter-separated table: one row per outcome, one Total row per scope."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(COMPARISON_COLUMNS)
    for c in comps:
        for r in c.rows:
            wr.writerow([c.scope, r.outcome, _fmt(r.coef_mb), _fmt(r.p_mb), _fmt(r.bic_mb),
                         _fmt(r.coef_orig), _fmt(r.p_orig), _fmt(r.bic_orig), r.n])
        wr.writerow([c.scope, "Total", "", "", _fmt(c.total_mb), "", "", _fmt(c.total_orig), ""])
    return buf.getvalue()


def comparison_to_dict(comps: Sequence[FeatureComparison]) -> dict:
    return {
        "columns": list(COMPARISON_COLUMNS),
        "scopes": [
            {
                "scope": c.scope,
                "treatment": c.treatment,
                "rows": [
                    {
                        "outcome": r.outcome,
                        "coef_mb": r.coef_mb, "p_mb": r.p_mb, "bic_mb": r.bic_mb,
                        "coef_orig": r.coef_orig, "p_orig": r.p_orig, "bic_orig": r.bic_orig,
                        "n": r.n, "features_mb": r.features_mb, "features_orig": r.features_orig,
                    }
                    for r in c.rows
                ],
                "total": {"bic_mb": c.total_mb, "bic_orig": c.total_orig},
            }
            for c in comps
        ],
    }


def cox_table(panel: PanelDataset, outcomes: Sequence[str], treatment: str = "treatment") -> list[dict]:
    """Unadjusted treatment hazard ratios with 95% intervals, one row per outcome.

    An outcome whose fit fails (no events, monotone likelihood) keeps its row
    with None estimates and the reason in ``note``.
    """
    rows = []
    for o in outcomes:
        recs, _ = to_survival(panel, o, [treatment])
        events = int(sum(r.event for r in recs))
        try:
            fit = fit_cox(recs, names=[treatment])
        except (ConvergenceError, DataError) as exc:
            log.warning("Cox fit for %s failed: %s", o, exc)
            rows.append({
                "outcome": o, "hazard_ratio": None, "ci_low": None, "ci_high": None,
                "p_value": None, "n": len(recs), "events": events, "note": str(exc),
            })
            continue
        lo, hi = np.exp(fit.confint()[0])
        rows.append({
            "outcome": o,
            "hazard_ratio": float(fit.hazard_ratio[0]),
            "ci_low": float(lo),
            "ci_high": float(hi),
            "p_value": float(fit.p_values[0]),
            "n": len(recs),
            "events": events,
            "note": "",
        })
    return rows
