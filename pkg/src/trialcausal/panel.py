"""Patient-period panels built from long-format visit records.

A panel holds one row per (patient, period) with a fixed time resolution
(6-month bins by default).  Outcomes are stored as cumulative 0/1
indicators, baseline covariates are carried forward from randomization and
a patient's rows stop at the last observed period, so censoring is encoded
by the panel shape itself.  Each patient's rows share a total weight of 1.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import ConfigError, DataError

KINDS = ("baseline", "time_varying", "outcome")


@dataclass(frozen=True)
class VisitRecord:
    patient_id: str
    time_months: float
    variable: str
    value: float


@dataclass(frozen=True)
class VariableSpec:
    """Declared variable.

    ``terminal`` marks death-type outcomes: a patient's series ends in the
    period the event occurs.
    """

    name: str
    kind: str
    tier: int = 0
    terminal: bool = False

    def __post_init__(self):
        if not self.name:
            raise ConfigError("variable names must be non-empty")
        if self.kind not in KINDS:
            raise ConfigError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.tier < 0:
            raise ConfigError(f"variable {self.name!r}: negative tier")
        if self.terminal and self.kind != "outcome":
            raise ConfigError(f"variable {self.name!r}: only outcomes can be terminal")


@dataclass(frozen=True)
class SurvivalRecord:
    duration_months: float
    event: bool
    covariates: np.ndarray

    def __post_init__(self):
        if not self.duration_months > 0:
            raise DataError("survival durations must be positive")


@dataclass
class PanelDataset:
    """Dense ``values[patient, period, variable]`` tensor with metadata.

    Cells at or after ``observed_periods[i]`` are NaN for patient ``i``.
    """

    variables: list[VariableSpec]
    patient_ids: list[str]
    regions: list[str]
    values: np.ndarray
    observed_periods: np.ndarray
    bin_months: float = 6.0
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.observed_periods = np.asarray(self.observed_periods, dtype=int)
        n, p, v = self.values.shape
        if len(self.patient_ids) != n or len(self.regions) != n:
            raise DataError("patient metadata does not match the value tensor")
        if len(self.variables) != v:
            raise DataError("variable specs do not match the value tensor")
        self._index = {s.name: j for j, s in enumerate(self.variables)}
        if len(self._index) != v:
            raise ConfigError("variable names must be unique")

    @property
    def n_patients(self) -> int:
        return self.values.shape[0]

    @property
    def n_periods(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.variables]

    @property
    def weights(self) -> np.ndarray:
        """Row weights of shape (patients, periods); 1/p_i on observed rows."""
        obs = self.observed_periods
        rows = np.arange(self.n_periods)[None, :] < obs[:, None]
        with np.errstate(divide="ignore"):
            w = np.where(rows, 1.0 / np.maximum(obs, 1)[:, None], 0.0)
        return w

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"unknown variable {name!r}") from None

    def spec(self, name: str) -> VariableSpec:
        return self.variables[self.index(name)]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, :, self.index(name)]

    def outcomes(self) -> list[str]:
        return [s.name for s in self.variables if s.kind == "outcome"]

    def subset(self, idx: Sequence[int]) -> "PanelDataset":
        idx = np.asarray(idx, dtype=int)
        return PanelDataset(
            variables=list(self.variables),
            patient_ids=[self.patient_ids[i] for i in idx],
            regions=[self.regions[i] for i in idx],
            values=self.values[idx].copy(),
            observed_periods=self.observed_periods[idx].copy(),
            bin_months=self.bin_months,
        )

    def check_invariants(self) -> None:
        """Raise DataError if any structural panel invariant is violated."""
        t = np.arange(self.n_periods)[None, :]
        after = t >= self.observed_periods[:, None]
        if np.any(~np.isnan(self.values[after])):
            raise DataError("observed values after a patient's censoring period")
        if np.any(self.observed_periods < 1) or np.any(self.observed_periods > self.n_periods):
            raise DataError("observed_periods out of range")
        for j, s in enumerate(self.variables):
            col = self.values[:, :, j]
            if s.kind == "outcome":
                obs = col[~after]
                if np.any((obs != 0) & (obs != 1)):
                    raise DataError(f"outcome {s.name!r} is not binary")
                filled = np.where(after, 1.0, col)
                if np.any(np.diff(filled, axis=1) < 0):
                    raise DataError(f"outcome {s.name!r} is not cumulative")
            elif s.kind == "baseline":
                first = col[:, :1]
                same = (col == first) | np.isnan(col) & np.isnan(first) | after
                if not np.all(same):
                    raise DataError(f"baseline {s.name!r} varies over time")
        w = self.weights.sum(axis=1)
        if np.any(np.abs(w - 1.0) > 1e-12):
            raise DataError("row weights do not sum to one per patient")


def _check_grid(bin_months: float, horizon_months: float) -> int:
    if not bin_months > 0:
        raise ConfigError("bin_months must be positive")
    periods = horizon_months / bin_months
    n = int(round(periods))
    if n < 1 or abs(periods - n) > 1e-9:
        raise ConfigError("horizon_months must be a positive multiple of bin_months")
    return n


def build_panel(
    records: Iterable[VisitRecord],
    specs: Sequence[VariableSpec],
    bin_months: float = 6.0,
    horizon_months: float = 72.0,
    regions: Mapping[str, str] | None = None,
) -> PanelDataset:
    """Bin visit records into a patient-period panel.

    Observations fall into half-open bins ``[k*bin, (k+1)*bin)``; records at
    or beyond the horizon are ignored, as are patients with no other
    records.  Within a bin the latest observation
    wins (input order breaks timestamp ties).  Patients are ordered by id.

    Parameters
    ----------
    records : iterable of VisitRecord
    specs : declared variables; every record must reference one of them.
    bin_months, horizon_months : time grid, horizon a multiple of the bin.
    regions : optional mapping patient_id -> region label.
    """
    n_periods = _check_grid(bin_months, horizon_months)
    records = list(records)
    if not records:
        raise DataError("no visit records")
    var_index = {s.name: j for j, s in enumerate(specs)}
    if len(var_index) != len(specs):
        raise ConfigError("variable names must be unique")

    pids = np.array([r.patient_id for r in records], dtype=object)
    times = np.array([r.time_months for r in records], dtype=float)
    vals = np.array([r.value for r in records], dtype=float)
    try:
        vidx = np.array([var_index[r.variable] for r in records], dtype=int)
    except KeyError as exc:
        raise DataError(f"record references undeclared variable {exc.args[0]!r}") from None
    if np.any(times < 0) or np.any(~np.isfinite(times)):
        raise DataError("negative or non-finite visit time")

    bins = np.floor(times / bin_months).astype(int)
    keep = bins < n_periods
    if not keep.any():
        raise DataError("no visit records within the horizon")
    # patients seen only beyond the horizon are dropped
    order = np.arange(len(records))[keep]
    pids, vidx, bins, times, vals = pids[keep], vidx[keep], bins[keep], times[keep], vals[keep]
    patient_ids, pidx = np.unique(pids.astype(str), return_inverse=True)
    n, v = len(patient_ids), len(specs)

    # last record per (patient, variable, bin) after a stable time sort
    srt = np.lexsort((order, times, bins, vidx, pidx))
    key = (pidx * v + vidx) * n_periods + bins
    key_s = key[srt]
    last = np.ones(len(srt), dtype=bool)
    last[:-1] = key_s[1:] != key_s[:-1]
    sel = srt[last]
    grid = np.full((n, n_periods, v), np.nan)
    grid[pidx[sel], bins[sel], vidx[sel]] = vals[sel]

    observed = np.zeros(n, dtype=int)
    np.maximum.at(observed, pidx, bins + 1)

    values = np.full((n, n_periods, v), np.nan)
    t = np.arange(n_periods)
    for j, s in enumerate(specs):
        g = grid[:, :, j]
        has = ~np.isnan(g)
        if s.kind == "outcome":
            hit = has & (g != 0)
            first = np.where(hit.any(axis=1), hit.argmax(axis=1), n_periods)
            values[:, :, j] = (t[None, :] >= first[:, None]).astype(float)
            if s.terminal:
                observed = np.minimum(observed, first + 1)
        elif s.kind == "baseline":
            first = np.where(has.any(axis=1), has.argmax(axis=1), 0)
            base = g[np.arange(n), first]
            values[:, :, j] = base[:, None]
        else:
            values[:, :, j] = _ffill(g)

    values[t[None, :] >= observed[:, None]] = np.nan
    regions = regions or {}
    return PanelDataset(
        variables=list(specs),
        patient_ids=[str(p) for p in patient_ids],
        regions=[str(regions.get(p, "")) for p in patient_ids],
        values=values,
        observed_periods=observed,
        bin_months=float(bin_months),
    )


def _ffill(g: np.ndarray) -> np.ndarray:
    """Forward-fill NaNs along axis 1; leading NaNs stay missing."""
    n, p = g.shape
    idx = np.where(~np.isnan(g), np.arange(p)[None, :], -1)
    np.maximum.accumulate(idx, axis=1, out=idx)
    out = g[np.arange(n)[:, None], np.maximum(idx, 0)]
    out[idx < 0] = np.nan
    return out


def to_survival(
    panel: PanelDataset, outcome: str, covariates: Sequence[str]
) -> tuple[list[SurvivalRecord], int]:
    """Reconstruct one time-to-event record per patient.

    Returns the records and the number of skipped patients (no observed
    outcome value or a missing covariate at period 0).  Event durations use
    the end of the event period, censored durations the end of the last
    observed period.
    """
    spec = panel.spec(outcome)
    if spec.kind != "outcome":
        raise DataError(f"{outcome!r} is not an outcome variable")
    y = panel.column(outcome)
    cov_idx = [panel.index(c) for c in covariates]
    x0 = panel.values[:, 0, :][:, cov_idx]
    out, skipped = [], 0
    for i in range(panel.n_patients):
        p = panel.observed_periods[i]
        yi = y[i, :p]
        if np.all(np.isnan(yi)) or np.any(np.isnan(x0[i])):
            skipped += 1
            continue
        hit = np.flatnonzero(yi == 1)
        if hit.size:
            out.append(SurvivalRecord(panel.bin_months * (hit[0] + 1), True, x0[i].copy()))
        else:
            out.append(SurvivalRecord(panel.bin_months * p, False, x0[i].copy()))
    return out, skipped


def split_by_region(
    panel: PanelDataset, labels: tuple[str, str] = ("West", "East")
) -> tuple[PanelDataset, PanelDataset]:
    regions = np.asarray(panel.regions, dtype=object)
    parts = []
    for label in labels:
        idx = np.flatnonzero(regions == label)
        if idx.size == 0:
            raise DataError(f"region {label!r} has no patients")
        parts.append(panel.subset(idx))
    if parts[0].n_patients + parts[1].n_patients != panel.n_patients:
        raise DataError(f"patients outside regions {labels}")
    return parts[0], parts[1]


def random_partition(panel: PanelDataset, seed) -> tuple[PanelDataset, PanelDataset]:
    """Split patients uniformly at random into two halves (sizes differ by <= 1)."""
    n = panel.n_patients
    if n < 2:
        raise DataError("need at least two patients to partition")
    perm = np.random.default_rng(seed).permutation(n)
    half = n // 2
    return panel.subset(np.sort(perm[:half])), panel.subset(np.sort(perm[half:]))


# --- serialization ---------------------------------------------------------


def specs_to_list(specs: Sequence[VariableSpec]) -> list[dict]:
    return [
        {"name": s.name, "kind": s.kind, "tier": s.tier, "terminal": s.terminal}
        for s in specs
    ]


def specs_from_list(items: Sequence[Mapping]) -> list[VariableSpec]:
    try:
        return [
            VariableSpec(
                name=str(d["name"]),
                kind=str(d["kind"]),
                tier=int(d.get("tier", 0)),
                terminal=bool(d.get("terminal", False)),
            )
            for d in items
        ]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed variable spec: {exc}") from None


def read_variable_specs(path) -> list[VariableSpec]:
    """Read ``{"variables": [{"name", "kind", "tier", "terminal"}, ...]}``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read variable specs {path}: {exc}") from None
    items = doc["variables"] if isinstance(doc, dict) and "variables" in doc else doc
    return specs_from_list(items)


def panel_to_dict(panel: PanelDataset) -> dict:
    vals = [
        [[None if math.isnan(x) else float(x) for x in row] for row in patient]
        for patient in panel.values
    ]
    return {
        "bin_months": panel.bin_months,
        "n_periods": panel.n_periods,
        "variables": specs_to_list(panel.variables),
        "patients": [
            {"id": pid, "region": reg, "observed_periods": int(p)}
            for pid, reg, p in zip(panel.patient_ids, panel.regions, panel.observed_periods)
        ],
        "values": vals,
    }


def panel_from_dict(doc: Mapping) -> PanelDataset:
    try:
        specs = specs_from_list(doc["variables"])
        patients = doc["patients"]
        values = np.array(
            [[[np.nan if x is None else x for x in row] for row in p] for p in doc["values"]],
            dtype=float,
        )
        if values.size == 0:
            values = values.reshape(len(patients), int(doc["n_periods"]), len(specs))
        return PanelDataset(
            variables=specs,
            patient_ids=[str(p["id"]) for p in patients],
            regions=[str(p.get("region", "")) for p in patients],
            values=values,
            observed_periods=[int(p["observed_periods"]) for p in patients],
            bin_months=float(doc["bin_months"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed panel document: {exc}") from None


def write_panel(panel: PanelDataset, path) -> None:
    Path(path).write_text(json.dumps(panel_to_dict(panel), separators=(",", ":")))


def read_panel(path) -> PanelDataset:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read panel {path}: {exc}") from None
    return panel_from_dict(doc)


def panel_to_records(panel: PanelDataset) -> list[VisitRecord]:
    """Long-format view of a panel; ``build_panel`` on it reproduces the panel."""
    out = []
    for i, pid in enumerate(panel.patient_ids):
        for t in range(panel.observed_periods[i]):
            time = t * panel.bin_months
            for j, s in enumerate(panel.variables):
                x = panel.values[i, t, j]
                if np.isnan(x) or (s.kind == "baseline" and t > 0):
                    continue
                out.append(VisitRecord(pid, time, s.name, float(x)))
    return out


def read_visits_csv(path) -> tuple[list[VisitRecord], dict[str, str]]:
    """Read ``patient_id,time_months,variable,value[,region]`` rows.

    Returns the records and the patient -> region map (empty if the
    optional region column is absent).
    """
    records, regions = [], {}
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            need = {"patient_id", "time_months", "variable", "value"}
            if reader.fieldnames is None or not need <= set(reader.fieldnames):
                raise DataError(f"{path}: header must contain {sorted(need)}")
            for line, row in enumerate(reader, start=2):
                try:
                    records.append(
                        VisitRecord(
                            row["patient_id"],
                            float(row["time_months"]),
                            row["variable"],
                            float(row["value"]),
                        )
                    )
                except (TypeError, ValueError):
                    raise DataError(f"{path}:{line}: malformed row") from None
                if row.get("region"):
                    regions[row["patient_id"]] = row["region"]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return records, regions


def write_visits_csv(records: Iterable[VisitRecord], path, regions: Mapping[str, str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["patient_id", "time_months", "variable", "value"]
        if regions:
            header.append("region")
        w.writerow(header)
        for r in records:
            row = [r.patient_id, repr(float(r.time_months)), r.variable, repr(float(r.value))]
            if regions:
                row.append(regions.get(r.patient_id, ""))
            w.writerow(row)
