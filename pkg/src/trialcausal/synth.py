"""Lagged structural causal models with known ground truth.

Continuous variables follow lagged linear-Gaussian mechanisms; outcomes fire
each period with a logistic probability and then latch at 1.  Regions may
override individual coefficients, which is how regional treatment-effect
heterogeneity is planted.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .discovery import TierKnowledge
from .exceptions import ConfigError
from .graph import CausalGraph, LaggedEdge
from .panel import PanelDataset, VariableSpec, specs_from_list, specs_to_list

SPEC_VERSION = "topcat-like/2"

Link = tuple[str, int, float]  # (parent, lag, coefficient)


@dataclass
class Mechanism:
    """Mechanism of one variable.

    For continuous variables ``x(t) = intercept + sum(coef * parent(t - lag))
    + noise * N(0, 1)``; for outcomes ``intercept`` and the links form the
    per-period log-odds of firing.  Baseline variables draw
    ``intercept + noise * N(0, 1)`` once, except the treatment, which is
    Bernoulli(0.5), and the region indicator.
    """

    parents: list[Link] = field(default_factory=list)
    intercept: float = 0.0
    noise: float = 1.0


@dataclass
class ScmSpec:
    variables: list[VariableSpec]
    mechanisms: dict[str, Mechanism]
    regions: dict[str, dict[tuple[str, str, int], float]] = field(default_factory=dict)
    n_patients: int = 1000
    n_periods: int = 12
    censor_rate: float = 0.0
    bin_months: float = 6.0
    treatment: str = "treatment"
    region_indicator: str | None = None
    forced_edges: list[tuple[str, str]] = field(default_factory=list)
    version: str = ""

    def __post_init__(self):
        self.validate()

    def spec(self, name: str) -> VariableSpec:
        for s in self.variables:
            if s.name == name:
                return s
        raise ConfigError(f"unknown variable {name!r}")

    def validate(self) -> None:
        names = [s.name for s in self.variables]
        if len(set(names)) != len(names):
            raise ConfigError("variable names must be unique")
        kinds = {s.name: s for s in self.variables}
        if self.n_patients < 1 or self.n_periods < 1:
            raise ConfigError("n_patients and n_periods must be positive")
        if not 0 <= self.censor_rate < 1:
            raise ConfigError("censor_rate must lie in [0, 1)")
        for special in (self.treatment, self.region_indicator):
            if special is not None and special in kinds and kinds[special].kind != "baseline":
                raise ConfigError(f"{special!r} must be a baseline variable")
        triples = set()
        for var, mech in self.mechanisms.items():
            if var not in kinds:
                raise ConfigError(f"mechanism for unknown variable {var!r}")
            child = kinds[var]
            if child.kind == "baseline" and mech.parents:
                raise ConfigError(f"baseline {var!r} cannot have parents")
            if mech.noise < 0:
                raise ConfigError(f"negative noise scale for {var!r}")
            for parent, lag, _ in mech.parents:
                if parent not in kinds:
                    raise ConfigError(f"{var!r} has unknown parent {parent!r}")
                if lag < 1:
                    raise ConfigError(f"link {parent}->{var} needs lag >= 1")
                if kinds[parent].terminal:
                    raise ConfigError(f"terminal outcome {parent!r} cannot be a parent")
                if kinds[parent].tier > child.tier:
                    raise ConfigError(f"link {parent}->{var} runs against tier order")
                if (var, parent, lag) in triples:
                    raise ConfigError(f"duplicate link {parent}(t-{lag})->{var}")
                triples.add((var, parent, lag))
        for region, over in self.regions.items():
            for key in over:
                if tuple(key) not in triples:
                    raise ConfigError(f"region {region!r} overrides unknown link {key}")
        for s, t in self.forced_edges:
            if s not in kinds or t not in kinds or kinds[s].tier > kinds[t].tier:
                raise ConfigError(f"invalid forced edge {s}->{t}")

    def knowledge(self) -> TierKnowledge:
        return TierKnowledge.from_specs(self.variables, self.forced_edges)

    def coefficient(self, var: str, parent: str, lag: int, region: str | None = None) -> float:
        base = next(c for p, l, c in self.mechanisms[var].parents if p == parent and l == lag)
        if region is not None:
            return self.regions.get(region, {}).get((var, parent, lag), base)
        return base

    def without_regional_effects(self) -> "ScmSpec":
        """Copy with overrides removed and the region indicator made inert."""
        mechs = {
            v: Mechanism(
                [(p, l, 0.0 if p == self.region_indicator else c) for p, l, c in m.parents],
                m.intercept,
                m.noise,
            )
            for v, m in self.mechanisms.items()
        }
        d = scm_to_dict(self)
        out = scm_from_dict(d)
        out.mechanisms = mechs
        out.regions = {r: {} for r in self.regions}
        out.version = self.version + "+null" if self.version else ""
        return out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _parent_means(spec: ScmSpec, region: str | None) -> dict[str, float]:
    """Approximate long-run means of baseline and continuous variables.

    Outcome means are not modelled and count as 0.
    """
    means = {}
    for s in spec.variables:
        if s.kind == "baseline":
            if s.name == spec.treatment:
                means[s.name] = 0.5
            elif s.name == spec.region_indicator:
                means[s.name] = float(region == next(iter(spec.regions), None))
            else:
                means[s.name] = spec.mechanisms.get(s.name, Mechanism()).intercept
        else:
            means[s.name] = 0.0
    dynamic = [s.name for s in spec.variables if s.kind == "time_varying"]
    for _ in range(200):
        for v in dynamic:
            m = spec.mechanisms.get(v, Mechanism())
            means[v] = m.intercept + sum(
                spec.coefficient(v, p, l, region) * means[p] for p, l, _ in m.parents
            )
    return means


def _pooled_indicator_effect(spec: ScmSpec, var: str) -> float:
    """Pooled coefficient of the region indicator on ``var``.

    A coefficient that differs between regions acts as an interaction with
    the indicator; given the parent's pooled mean it shows up as a direct
    indicator effect in pooled data.
    """
    ind = spec.region_indicator
    regions = list(spec.regions)
    first, rest = regions[0], regions[1:]
    mech = spec.mechanisms[var]
    eff = next((c for p, l, c in mech.parents if p == ind), 0.0)
    pooled = {r: _parent_means(spec, r) for r in regions}
    for p, l, _ in mech.parents:
        if p == ind:
            continue
        c1 = spec.coefficient(var, p, l, first)
        c0 = float(np.mean([spec.coefficient(var, p, l, r) for r in rest]))
        if c1 != c0:
            mean = float(np.mean([pooled[r][p] for r in regions]))
            eff += (c1 - c0) * mean
    return eff


def ground_truth(spec: ScmSpec, region: str | None = None) -> CausalGraph:
    """Edges with a nonzero coefficient, scored by the coefficient's sign.

    With ``region=None`` the coefficient is the average over regions (equal
    shares), and the region indicator's link additionally absorbs
    region-varying coefficients (see ``_pooled_indicator_effect``).  Within
    a region, links from the region indicator are omitted because it is
    constant there.  Non-terminal outcomes carry their latch
    ``Y(t-1) -> Y(t)`` as a positive self-edge.
    """
    regions = list(spec.regions) or [None]
    ind = spec.region_indicator if len(spec.regions) >= 2 else None
    g = CausalGraph(tuple(s.name for s in spec.variables))
    for var in sorted(spec.mechanisms):
        if ind is not None and region is None and spec.spec(var).kind != "baseline":
            eff = _pooled_indicator_effect(spec, var)
            if abs(eff) > 1e-12:
                g.add(LaggedEdge(ind, 1, var, float(np.sign(eff)), 0.0))
        for parent, lag, _ in spec.mechanisms[var].parents:
            if parent == ind:
                continue
            if region is not None:
                coef = spec.coefficient(var, parent, lag, region)
            else:
                coef = float(np.mean([spec.coefficient(var, parent, lag, r) for r in regions]))
            if coef != 0:
                g.add(LaggedEdge(parent, lag, var, float(np.sign(coef)), 0.0))
    for s in spec.variables:
        if s.kind == "outcome" and not s.terminal:
            g.add(LaggedEdge(s.name, 1, s.name, 1.0, 0.0))
    return g


def generate(spec: ScmSpec, seed) -> tuple[PanelDataset, CausalGraph]:
    """Simulate a panel and return it with the pooled ground-truth graph.

    Patients are split evenly across regions in random order.  A patient's
    series ends in the period a terminal outcome fires, and with probability
    ``censor_rate`` it is cut at a uniformly drawn later period.
    """
    rng = np.random.default_rng(seed)
    n, P = spec.n_patients, spec.n_periods
    names = [s.name for s in spec.variables]
    col = {v: j for j, v in enumerate(names)}
    region_names = list(spec.regions)
    if region_names:
        labels = np.array([region_names[i % len(region_names)] for i in range(n)], dtype=object)
        labels = labels[rng.permutation(n)]
    else:
        labels = np.array([""] * n, dtype=object)

    vals = np.zeros((n, P, len(names)))
    # per-patient coefficient arrays
    coefs = {}
    for var, mech in spec.mechanisms.items():
        for parent, lag, c in mech.parents:
            arr = np.full(n, c, dtype=float)
            for r in region_names:
                arr[labels == r] = spec.coefficient(var, parent, lag, r)
            coefs[(var, parent, lag)] = arr

    for s in spec.variables:
        if s.kind != "baseline":
            continue
        j = col[s.name]
        mech = spec.mechanisms.get(s.name, Mechanism())
        if s.name == spec.treatment:
            x = (rng.random(n) < 0.5).astype(float)
        elif s.name == spec.region_indicator:
            x = (labels == (region_names[0] if region_names else "")).astype(float)
        else:
            x = mech.intercept + mech.noise * rng.standard_normal(n)
        vals[:, :, j] = x[:, None]

    dynamic = [s for s in spec.variables if s.kind != "baseline"]
    alive = np.full(n, P, dtype=int)
    for t in range(P):
        draws_noise = rng.standard_normal((n, len(dynamic)))
        draws_event = rng.random((n, len(dynamic)))
        for k, s in enumerate(dynamic):
            j = col[s.name]
            mech = spec.mechanisms.get(s.name, Mechanism())
            lin = np.full(n, mech.intercept)
            for parent, lag, _ in mech.parents:
                pspec = spec.spec(parent)
                if pspec.kind == "baseline":
                    lin += coefs[(s.name, parent, lag)] * vals[:, 0, col[parent]]
                elif t - lag >= 0:
                    lin += coefs[(s.name, parent, lag)] * vals[:, t - lag, col[parent]]
            if s.kind == "outcome":
                prev = vals[:, t - 1, j] if t > 0 else np.zeros(n)
                fire = draws_event[:, k] < _sigmoid(lin)
                vals[:, t, j] = np.maximum(prev, fire.astype(float))
            else:
                vals[:, t, j] = lin + mech.noise * draws_noise[:, k]
        for s in dynamic:
            if s.terminal:
                newly = (vals[:, t, col[s.name]] == 1) & (alive == P)
                alive[newly] = t + 1

    drop = rng.random(n) < spec.censor_rate
    cut = rng.integers(1, max(P, 2), size=n)
    observed = np.where(drop, np.minimum(alive, cut), alive)
    observed = np.clip(observed, 1, P)
    # a terminal event can only have fired within the kept window
    vals[np.arange(P)[None, :] >= observed[:, None]] = np.nan

    width = len(str(n - 1))
    panel = PanelDataset(
        variables=list(spec.variables),
        patient_ids=[f"p{i:0{width}d}" for i in range(n)],
        regions=[str(r) for r in labels],
        values=vals,
        observed_periods=observed,
        bin_months=spec.bin_months,
    )
    return panel, ground_truth(spec)


# --- serialization ---------------------------------------------------------


def scm_to_dict(spec: ScmSpec) -> dict:
    k = spec.knowledge()
    return {
        "version": spec.version,
        "variables": specs_to_list(spec.variables),
        "tiers": k.tiers,
        "forced_edges": [list(e) for e in spec.forced_edges],
        "mechanisms": {
            v: {
                "intercept": m.intercept,
                "noise": m.noise,
                "parents": [[p, l, c] for p, l, c in m.parents],
            }
            for v, m in spec.mechanisms.items()
        },
        "regions": {
            r: [[v, p, l, c] for (v, p, l), c in over.items()] for r, over in spec.regions.items()
        },
        "n_patients": spec.n_patients,
        "n_periods": spec.n_periods,
        "censor_rate": spec.censor_rate,
        "bin_months": spec.bin_months,
        "treatment": spec.treatment,
        "region_indicator": spec.region_indicator,
    }


def scm_from_dict(doc: Mapping) -> ScmSpec:
    try:
        return ScmSpec(
            variables=specs_from_list(doc["variables"]),
            mechanisms={
                v: Mechanism(
                    [(str(p), int(l), float(c)) for p, l, c in m.get("parents", [])],
                    float(m.get("intercept", 0.0)),
                    float(m.get("noise", 1.0)),
                )
                for v, m in doc["mechanisms"].items()
            },
            regions={
                r: {(str(v), str(p), int(l)): float(c) for v, p, l, c in over}
                for r, over in doc.get("regions", {}).items()
            },
            n_patients=int(doc.get("n_patients", 1000)),
            n_periods=int(doc.get("n_periods", 12)),
            censor_rate=float(doc.get("censor_rate", 0.0)),
            bin_months=float(doc.get("bin_months", 6.0)),
            treatment=doc.get("treatment", "treatment"),
            region_indicator=doc.get("region_indicator"),
            forced_edges=[tuple(e) for e in doc.get("forced_edges", [])],
            version=str(doc.get("version", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed SCM document: {exc}") from None


def read_scm(path) -> ScmSpec:
    try:
        return scm_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read SCM spec {path}: {exc}") from None


# --- builtin trial-like model ----------------------------------------------

TREATMENT_FLIPPED = ("cvd_death", "death", "abortedca", "mi", "stroke")
OUTCOMES = ("cvd_death", "hfhosp", "abortedca", "death", "anyhosp", "mi", "stroke")


def builtin_topcat_like(n_patients: int = 1000, regional: bool = True, censor_rate: float = 0.1) -> ScmSpec:
    """Trial-like model over 28 variables in 8 tiers.

    Mirrors the layout of a heart-failure trial: region indicator, treatment
    and age at entry; labs and vitals; derived threshold signals; clinical
    status; adverse events; seven outcomes; side-effect discontinuations and
    a composite primary endpoint.  In the West the treatment lowers the odds
    of every outcome but ``anyhosp`` and shifts potassium and blood
    pressure; in the East the effect is reversed for five outcomes and
    absent elsewhere.  Seven further outcome links exist in one region
    only.  The region indicator has no direct effects; in pooled data it
    stands in for the regional differences.

    Three forced treatment -> side-effect edges have no direct effect in the
    model (their effect, if any, is mediated), so their scores carry random
    signs.  With ``regional=False`` all regional differences are removed.
    """
    V = VariableSpec
    variables = [
        V("americas", "baseline", 0),
        V("treatment", "baseline", 0),
        V("age", "baseline", 0),
        V("potassium", "time_varying", 1),
        V("sbp", "time_varying", 1),
        V("dbp", "time_varying", 1),
        V("creatinine", "time_varying", 1),
        V("heart_rate", "time_varying", 1),
        V("weight", "time_varying", 1),
        V("hemoglobin", "time_varying", 1),
        V("glucose", "time_varying", 1),
        V("serum_potassium_high", "time_varying", 2),
        V("sbp_high", "time_varying", 2),
        V("nyha_class", "time_varying", 3),
        V("hyperkalemia", "time_varying", 3),
        V("creatinine_doubled", "time_varying", 4),
        V("hyperkalemia_hosp", "time_varying", 4),
        V("anyhosp", "outcome", 5),
        V("mi", "outcome", 5),
        V("stroke", "outcome", 5),
        V("abortedca", "outcome", 5),
        V("hfhosp", "outcome", 5),
        V("death", "outcome", 6, terminal=True),
        V("cvd_death", "outcome", 6, terminal=True),
        V("hyperkalemia_discontinued", "time_varying", 6),
        V("potassium_discontinued", "time_varying", 6),
        V("renal_discontinued", "time_varying", 6),
        V("primary_ep", "outcome", 7),
    ]
    M = Mechanism
    tr = -1.8  # West treatment effect on outcome log-odds
    tr_death = -2.0  # all-cause death is diluted by competing mediators, so larger
    # outcome log-odds intercepts, tuned for 15-35% cumulative event rates
    icpt = {"anyhosp": -4.0, "mi": -4.9, "stroke": -4.7, "abortedca": -4.5, "hfhosp": -4.7, "death": -5.3, "cvd_death": -5.4}
    mech = {
        "age": M(),
        "potassium": M([("potassium", 1, 0.5), ("treatment", 1, 0.8), ("creatinine", 1, 0.5)]),
        "sbp": M([("sbp", 1, 0.5), ("age", 1, 0.5), ("treatment", 1, -0.6)]),
        "dbp": M([("dbp", 1, 0.5), ("sbp", 1, 0.5)]),
        "creatinine": M([("creatinine", 1, 0.5), ("age", 1, 0.5)]),
        "heart_rate": M([("heart_rate", 1, 0.5)]),
        "weight": M([("weight", 1, 0.5)]),
        "hemoglobin": M([("hemoglobin", 1, 0.5), ("creatinine", 1, -0.5)]),
        "glucose": M([("glucose", 1, 0.5), ("weight", 1, 0.5)]),
        "serum_potassium_high": M([("potassium", 1, 0.8)]),
        "sbp_high": M([("sbp", 1, 0.8)]),
        "nyha_class": M([("nyha_class", 1, 0.5), ("heart_rate", 1, 0.5), ("weight", 1, 0.5)]),
        "hyperkalemia": M([("serum_potassium_high", 1, 0.7)]),
        "creatinine_doubled": M([("creatinine", 1, 0.7)]),
        "hyperkalemia_hosp": M([("hyperkalemia", 1, 0.6)]),
        "anyhosp": M([("nyha_class", 1, 1.0), ("age", 1, 1.0), ("hemoglobin", 1, 0.0)], icpt["anyhosp"]),
        "mi": M([("sbp", 1, 1.0), ("glucose", 1, 1.0), ("treatment", 1, tr)], icpt["mi"]),
        "stroke": M(
            [("sbp_high", 1, 1.0), ("age", 1, 1.0), ("treatment", 1, tr), ("glucose", 1, 0.0)],
            icpt["stroke"],
        ),
        "abortedca": M(
            [("hyperkalemia", 1, 1.0), ("heart_rate", 1, 1.0), ("treatment", 1, tr)], icpt["abortedca"]
        ),
        "hfhosp": M(
            [("nyha_class", 1, 1.0), ("creatinine", 1, 1.0), ("treatment", 1, tr)], icpt["hfhosp"]
        ),
        "death": M(
            [("age", 1, 1.0), ("hemoglobin", 1, -1.0), ("anyhosp", 1, 2.0), ("treatment", 1, tr_death)],
            icpt["death"],
        ),
        "cvd_death": M(
            [("nyha_class", 1, 1.0), ("hfhosp", 1, 2.0), ("treatment", 1, tr)], icpt["cvd_death"]
        ),
        "hyperkalemia_discontinued": M([("hyperkalemia_hosp", 1, 0.6)]),
        "potassium_discontinued": M([("potassium", 1, 0.6)]),
        "renal_discontinued": M([("creatinine_doubled", 1, 0.6)]),
        "primary_ep": M([("abortedca", 1, 5.0), ("hfhosp", 1, 5.0)], -6.0),
    }
    east = {("potassium", "treatment", 1): 0.0, ("sbp", "treatment", 1): 0.0, ("hfhosp", "treatment", 1): 0.0}
    for o in TREATMENT_FLIPPED:
        west_effect = next(c for p, l, c in mech[o].parents if p == "treatment")
        east[(o, "treatment", 1)] = -west_effect
    east[("anyhosp", "hemoglobin", 1)] = -1.4
    east[("stroke", "glucose", 1)] = 1.4
    # further outcome links present in one region only: (outcome, parent, West, East).
    # Every parent appears once, so no two outcomes share a region-specific
    # input and neither becomes a proxy for the other in pooled data.
    for o, parent, w, e in [
        ("mi", "creatinine", 0.0, 1.4),
        ("death", "heart_rate", 0.0, 1.4),
        ("abortedca", "dbp", 1.4, 0.0),
        ("hfhosp", "weight", 1.4, 0.0),
        ("cvd_death", "sbp", 1.4, 0.0),
    ]:
        mech[o].parents.append((parent, 1, w))
        east[(o, parent, 1)] = e
    forced = [
        ("treatment", "hyperkalemia"),
        ("treatment", "creatinine_doubled"),
        ("treatment", "potassium_discontinued"),
        ("cvd_death", "primary_ep"),
        ("abortedca", "primary_ep"),
        ("hfhosp", "primary_ep"),
    ]
    spec = ScmSpec(
        variables=variables,
        mechanisms=mech,
        regions={"West": {}, "East": east},
        n_patients=n_patients,
        n_periods=12,
        censor_rate=censor_rate,
        bin_months=6.0,
        treatment="treatment",
        region_indicator="americas",
        forced_edges=forced,
        version=SPEC_VERSION,
    )
    return spec if regional else spec.without_regional_effects()
