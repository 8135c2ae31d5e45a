import csv
import json

import numpy as np
import pytest

from cfurllc.__main__ import main
from cfurllc.exceptions import ConfigError
from cfurllc.harness import (
    FIELDS, ExperimentSpec, Kind, RunRecord, emit, load_records, record_from_dict,
    record_to_dict, run, summarize, trial_seed, trial_streams,
)
from cfurllc.sysmodel import Scheme, SystemConfig, dump_config

SMALL = SystemConfig(num_aps=4, antennas_per_ap=8, num_devices=4)


def _spec(**kw):
    base = dict(kind="pilot_sweep", grid=(0.1,), trials=2, base=SMALL)
    base.update(kw)
    return ExperimentSpec(**base)


# -- spec ------------------------------------------------------------------------

def test_spec_defaults_and_validation():
    spec = ExperimentSpec("threshold_sweep")
    assert spec.kind is Kind.THRESHOLD_SWEEP and spec.parameter == "selection_threshold"
    assert spec.grid == (0.85, 0.9, 0.95, 1.0)
    with pytest.raises(ConfigError):
        ExperimentSpec("convergence", trials=0)
    with pytest.raises(ValueError):
        ExperimentSpec("nonsense")


def test_trial_streams_independent_of_grid():
    a = trial_streams(7, 3)[0].uniform(size=3)
    b = trial_streams(7, 3)[0].uniform(size=3)
    np.testing.assert_array_equal(a, b)
    assert trial_seed(7, 3) != trial_seed(7, 4)
    small = run(_spec(grid=(0.1,)))
    large = run(_spec(grid=(0.05, 0.1)))
    keep = [r for r in large.records if r.value == 0.1]
    assert keep == small.records


# -- emit ------------------------------------------------------------------------

def test_empty_records_header_only(tmp_path):
    paths = emit([], tmp_path)
    assert paths["csv"].read_text() == ",".join(FIELDS) + "\n"
    assert json.loads(paths["json"].read_text()) == []


def test_csv_and_json(tmp_path):
    out = run(_spec(out=tmp_path))
    with open(tmp_path / "records.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == FIELDS
    assert all(len(r) == len(FIELDS) for r in rows)
    assert load_records(tmp_path / "records.json") == out.records
    assert (tmp_path / "summary.csv").exists() and (tmp_path / "timings.csv").exists()


def test_json_round_trip_single():
    r = RunRecord("k", "mrt", "v", "p", 1.0, 0, 1, 1, 1, 1, "Converged", 2, 3.5,
                  rates=(1.0, 2.5), history=(1.0,), extra={"a": 1.0}, message="m")
    assert record_from_dict(json.loads(json.dumps(record_to_dict(r)))) == r


def test_twelve_significant_digits(tmp_path):
    run(_spec(out=tmp_path, trials=1))
    text = (tmp_path / "records.csv").read_text()
    for row in list(csv.DictReader(text.splitlines()))[:3]:
        digits = row["weighted_sum"].replace(".", "").replace("-", "").lstrip("0")
        assert len(digits.split("e")[0]) <= 12


def test_same_seed_same_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(_spec(out=a, trials=1, seed=5))
    run(_spec(out=b, trials=1, seed=5))
    for name in ("records.csv", "records.json", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_workers_do_not_change_results():
    one = run(_spec(workers=1))
    two = run(_spec(workers=2))
    assert one.records == two.records
    assert one.summary == two.summary


def test_unwritable_path_fails_fast(tmp_path, monkeypatch):
    blocker = tmp_path / "file"
    blocker.write_text("")
    called = []
    monkeypatch.setattr("cfurllc.harness.run_trial", lambda *a: called.append(a))
    with pytest.raises(OSError):
        run(_spec(out=blocker / "sub"))
    assert not called


# -- aggregation -----------------------------------------------------------------

def _rec(trial, status, ws, variant="proposed"):
    return RunRecord("pilot_sweep", "mrt", variant, "p", 0.1, trial, 0, 4, 8, 4, status, 1, ws,
                     rates=(ws,))


def test_zero_on_violation():
    recs = [_rec(0, "Converged", 4.0), _rec(1, "InfeasibleRequirements", 10.0),
            _rec(2, "Error", 99.0)]
    (cell,) = summarize(recs)
    assert cell.mean_weighted_sum == 2.0
    assert cell.feasible == 1 and cell.errors == 1 and cell.trials == 3
    # raw record untouched
    assert recs[1].weighted_sum == 10.0 and recs[1].rates == (10.0,)


def test_declined_counts_as_zero_for_every_variant():
    recs = [_rec(0, "Converged", 4.0), _rec(0, "Converged", 2.0, "equal_power"),
            _rec(1, "Declined", 0.0, "-")]
    cells = {c.variant: c for c in summarize(recs)}
    assert cells["proposed"].mean_weighted_sum == 2.0
    assert cells["equal_power"].mean_weighted_sum == 1.0


def test_summary_order_invariant():
    recs = [_rec(t, "Converged", float(t) / 3) for t in range(6)]
    assert summarize(recs) == summarize(recs[::-1])


# -- experiment kinds ------------------------------------------------------------

def test_convergence_history_nondecreasing():
    out = run(ExperimentSpec("convergence", grid=(0.2,), trials=1, base=SMALL))
    for r in out.records:
        if r.meets_requirements:
            assert np.all(np.diff(r.history) >= -1e-9)
            assert r.variant == "proposed"


def test_tightness_records():
    spec = ExperimentSpec("tightness", grid=(32,), trials=1, mc_draws=2000,
                          schemes=("mrt",), base=SMALL)
    out = run(spec)
    assert {r.variant for r in out.records} == {"fixed_power_m4", "fixed_power_m16"}
    for r in out.records:
        assert r.num_aps * r.antennas_per_ap == 32
        assert r.extra["ergodic_weighted_sum"] >= r.weighted_sum


def test_fixed_total_antennas_in_ap_sweep():
    out = run(ExperimentSpec("ap_count_sweep", grid=(4, 16), trials=1, schemes=("lzf",)))
    assert {r.num_aps * r.antennas_per_ap for r in out.records} == {144}


def test_indivisible_total_is_declined():
    out = run(ExperimentSpec("ap_count_sweep", grid=(5,), trials=1, schemes=("mrt",)))
    assert [r.status for r in out.records] == ["Declined"]
    assert not out.any_feasible


def test_device_sweep_schedules_when_needed():
    out = run(ExperimentSpec("device_sweep", grid=(10,), trials=1, schemes=("fzf",),
                             base=SystemConfig(antennas_per_ap=8)))
    assert {r.variant for r in out.records} == {
        "proposed_scheduled", "equal_power_scheduled", "shannon_scheduled"}


def test_verify_records_z_scores():
    out = run(ExperimentSpec("verify_theorems", trials=1, mc_draws=5000,
                             base=SystemConfig(num_aps=4, antennas_per_ap=8, num_devices=3)))
    for r in out.records:
        assert {"z_ds2", "z_ls2", "z_ui2"} <= set(r.extra)


# -- CLI -------------------------------------------------------------------------

def test_cli_success(tmp_path, capsys):
    code = main(["pilot_sweep", "--out", str(tmp_path), "--grid", "0.1", "--trials", "1",
                 "--scheme", "mrt", "--seed", "3"])
    assert code == 0
    assert (tmp_path / "records.csv").exists()
    assert "mrt" in capsys.readouterr().out


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "s.cfg"
    dump_config(SMALL.replace(scheme=Scheme.MRT), cfg)
    code = main(["threshold_sweep", "--config", str(cfg), "--out", str(tmp_path / "o"),
                 "--grid", "0.9", "--scheme", "mrt"])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "records.csv")))
    assert {r["num_aps"] for r in rows} == {"4"}


def test_cli_infeasible_everywhere(tmp_path):
    code = main(["ap_count_sweep", "--out", str(tmp_path), "--grid", "16", "--scheme", "fzf"])
    assert code == 2


def test_cli_errors(tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("")
    assert main(["convergence", "--out", str(blocker / "x")]) == 1
    assert main(["convergence", "--out", str(tmp_path), "--trials", "0"]) == 1
    assert main(["convergence", "--out", str(tmp_path), "--grid", "a,b"]) == 1
    assert main(["nonsense"]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus = 1\n")
    assert main(["convergence", "--out", str(tmp_path), "--config", str(bad)]) == 1
