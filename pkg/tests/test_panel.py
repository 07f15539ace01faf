import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trialcausal.exceptions import ConfigError, DataError
from trialcausal.panel import (
    PanelDataset,
    VariableSpec,
    VisitRecord,
    build_panel,
    panel_from_dict,
    panel_to_dict,
    panel_to_records,
    random_partition,
    read_panel,
    read_visits_csv,
    split_by_region,
    to_survival,
    write_panel,
    write_visits_csv,
)

SPECS = [
    VariableSpec("age", "baseline", 0),
    VariableSpec("sbp", "time_varying", 2),
    VariableSpec("hosp", "outcome", 7),
    VariableSpec("death", "outcome", 7, terminal=True),
]


def rec(pid, t, var, val):
    return VisitRecord(pid, t, var, val)


def test_binning_ffill_and_cumulative_outcome():
    records = [
        rec("a", 0.0, "age", 60),
        rec("a", 1.0, "sbp", 120),
        rec("a", 4.0, "sbp", 130),  # same bin, later wins
        rec("a", 13.0, "hosp", 1),
        rec("a", 20.0, "hosp", 0),  # cumulative: stays 1
        rec("a", 25.0, "sbp", 110),
    ]
    p = build_panel(records, SPECS, 6, 36)
    assert p.n_periods == 6
    assert p.observed_periods[0] == 5
    np.testing.assert_array_equal(p.column("sbp")[0, :5], [130, 130, 130, 130, 110])
    np.testing.assert_array_equal(p.column("hosp")[0, :5], [0, 0, 1, 1, 1])
    np.testing.assert_array_equal(p.column("age")[0, :5], 60)
    assert np.isnan(p.values[0, 5]).all()
    p.check_invariants()


def test_terminal_outcome_truncates_series():
    records = [rec("a", 0, "age", 1), rec("a", 7, "death", 1), rec("a", 30, "sbp", 1)]
    p = build_panel(records, SPECS, 6, 36)
    assert p.observed_periods[0] == 2
    assert p.column("death")[0, 1] == 1
    p.check_invariants()


def test_records_beyond_horizon_are_ignored():
    p = build_panel([rec("a", 0, "age", 1), rec("a", 72.0, "sbp", 5)], SPECS, 6, 72)
    assert p.observed_periods[0] == 1


def test_weights_sum_to_one_per_patient():
    records = [rec("a", 0, "age", 1), rec("a", 30, "sbp", 1), rec("b", 0, "age", 2)]
    p = build_panel(records, SPECS, 6, 36)
    np.testing.assert_allclose(p.weights.sum(axis=1), 1.0)
    np.testing.assert_allclose(p.weights[0, :6], 1 / 6)
    np.testing.assert_allclose(p.weights[1], [1, 0, 0, 0, 0, 0])


@pytest.mark.parametrize(
    "bin_months, horizon",
    [(0, 72), (-6, 72), (5, 72), (6, 0)],
)
def test_bad_grid_is_config_error(bin_months, horizon):
    with pytest.raises(ConfigError):
        build_panel([rec("a", 0, "age", 1)], SPECS, bin_months, horizon)


def test_bad_records_are_data_errors():
    with pytest.raises(DataError):
        build_panel([], SPECS)
    with pytest.raises(DataError):
        build_panel([rec("a", 0, "nope", 1)], SPECS)
    with pytest.raises(DataError):
        build_panel([rec("a", -1, "age", 1)], SPECS)


def test_spec_validation():
    with pytest.raises(ConfigError):
        VariableSpec("x", "weird")
    with pytest.raises(ConfigError):
        VariableSpec("x", "baseline", terminal=True)
    with pytest.raises(ConfigError):
        build_panel([rec("a", 0, "age", 1)], SPECS + [SPECS[0]])


def test_to_survival_durations():
    records = [
        rec("a", 0, "age", 50), rec("a", 13, "hosp", 1), rec("a", 30, "sbp", 1),
        rec("b", 0, "age", 70), rec("b", 0, "hosp", 0), rec("b", 20, "sbp", 1),
    ]
    p = build_panel(records, SPECS, 6, 36)
    recs, skipped = to_survival(p, "hosp", ["age"])
    assert skipped == 0
    assert (recs[0].duration_months, recs[0].event) == (18.0, True)
    assert (recs[1].duration_months, recs[1].event) == (24.0, False)
    assert recs[1].covariates.tolist() == [70]
    with pytest.raises(DataError):
        to_survival(p, "age", [])


def test_region_split_and_partition():
    records = [rec(str(i), 0, "age", i) for i in range(9)]
    regions = {str(i): ("West" if i % 3 else "East") for i in range(9)}
    p = build_panel(records, SPECS, 6, 36, regions)
    w, e = split_by_region(p)
    assert (w.n_patients, e.n_patients) == (6, 3)
    assert set(w.regions) == {"West"}
    a, b = random_partition(p, 5)
    assert {a.n_patients, b.n_patients} == {4, 5}
    assert sorted(a.patient_ids + b.patient_ids) == sorted(p.patient_ids)
    a2, _ = random_partition(p, 5)
    assert a.patient_ids == a2.patient_ids
    with pytest.raises(DataError):
        split_by_region(p, ("West", "North"))


def test_roundtrips(tmp_path):
    records = [rec("a", 0, "age", 1), rec("a", 8, "sbp", 3.5), rec("b", 0, "age", 2), rec("b", 14, "death", 1)]
    p = build_panel(records, SPECS, 6, 36, {"a": "West", "b": "East"})
    q = panel_from_dict(json.loads(json.dumps(panel_to_dict(p))))
    np.testing.assert_array_equal(p.values, q.values)
    write_panel(p, tmp_path / "p.json")
    r = read_panel(tmp_path / "p.json")
    assert r.regions == ["West", "East"]
    write_visits_csv(panel_to_records(p), tmp_path / "v.csv", dict(zip(p.patient_ids, p.regions)))
    recs, regions = read_visits_csv(tmp_path / "v.csv")
    s = build_panel(recs, SPECS, 6, 36, regions)
    np.testing.assert_array_equal(p.values, s.values)
    np.testing.assert_array_equal(p.observed_periods, s.observed_periods)


def test_check_invariants_catches_violations():
    records = [rec("a", 0, "age", 1), rec("a", 20, "sbp", 1)]
    p = build_panel(records, SPECS, 6, 36)
    bad = p.values.copy()
    bad[0, 1, p.index("hosp")] = 1
    bad[0, 2, p.index("hosp")] = 0
    with pytest.raises(DataError):
        PanelDataset(p.variables, p.patient_ids, p.regions, bad, p.observed_periods).check_invariants()


visit = st.tuples(
    st.sampled_from(["p1", "p2", "p3"]),
    st.floats(0, 80, allow_nan=False),
    st.sampled_from([s.name for s in SPECS]),
    st.sampled_from([0.0, 1.0, 2.5]),
)


@settings(max_examples=150, deadline=None)
@given(st.lists(visit, min_size=1, max_size=40), st.sampled_from([(6, 72), (3, 36), (12, 72)]))
def test_built_panels_satisfy_invariants(rows, grid):
    records = [rec(p, t, v, (x > 0) * 1.0 if v in ("hosp", "death") else x) for p, t, v, x in rows]
    if all(r.time_months >= grid[1] for r in records):
        with pytest.raises(DataError):
            build_panel(records, SPECS, *grid)
        return
    p = build_panel(records, SPECS, *grid)
    p.check_invariants()
    # series never extends past the last in-horizon visit
    last = {}
    for r in records:
        if r.time_months < grid[1]:
            last[r.patient_id] = max(last.get(r.patient_id, 0), int(r.time_months // grid[0]) + 1)
    assert sorted(p.patient_ids) == sorted(last)
    for pid, obs in zip(p.patient_ids, p.observed_periods):
        assert 1 <= obs <= last[pid]


def test_event_at_month_14_is_cumulative_from_period_2():
    records = [rec("a", 0, "age", 63.0), rec("a", 14, "hosp", 1), rec("a", 71, "sbp", 1)]
    p = build_panel(records, SPECS, 6, 72)
    np.testing.assert_array_equal(p.column("hosp")[0], [0, 0] + [1] * 10)
    assert p.observed_periods[0] == 12
    np.testing.assert_array_equal(p.column("age")[0], 63.0)


def test_censored_at_month_20():
    p = build_panel([rec("a", 0, "age", 1), rec("a", 20, "sbp", 1)], SPECS, 6, 72)
    assert p.observed_periods[0] == 4
    assert np.isnan(p.values[0, 4:]).all()
    np.testing.assert_allclose(p.weights[0, :4], 0.25)


def test_weibull_roundtrip_durations_round_up_to_bins():
    rng = np.random.default_rng(7)
    n, horizon = 50, 72
    T = 30 * rng.weibull(1.5, n)
    C = rng.uniform(10, 90, n)
    records = []
    for i in range(n):
        pid = f"p{i:02d}"
        records.append(rec(pid, 0, "age", 1.0))
        end = min(C[i], horizon - 1e-9)
        for m in np.arange(0, end, 3.0):
            records.append(rec(pid, m, "hosp", float(m >= T[i])))
        if T[i] <= end:
            records.append(rec(pid, T[i], "hosp", 1.0))
        records.append(rec(pid, end, "sbp", 0.0))
    p = build_panel(records, SPECS, 6, horizon)
    recs, skipped = to_survival(p, "hosp", [])
    assert skipped == 0
    for i, r in enumerate(recs):
        end = min(C[i], horizon - 1e-9)
        if T[i] <= end:
            assert r.event and r.duration_months == 6 * np.ceil(T[i] / 6 + 1e-12)
        else:
            assert not r.event and r.duration_months == 6 * (np.floor(end / 6) + 1)
