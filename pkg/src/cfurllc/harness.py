"""Experiment driver: parameter sweeps over random deployments.

Every experiment is a grid of cells (scheme x swept value) times a number of
trials.  Trial ``t`` draws its device layout and weights from the seed pair
``(master, t)`` only, so the same layouts recur in every cell and adding
grid points never reshuffles earlier trials.

Records keep the raw per-device rates.  Cell averages apply the
zero-on-violation rule: a trial whose devices do not all meet their
requirement (or whose scheme cannot be built) contributes zero.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import CfUrllcError, ConfigError
from .optimizer import (
    AllocationStatus, Scenario, algorithm1, baseline_equal_power, equal_power,
    schedule_round_robin,
)
from .sinr import mc_ergodic_rate, sinr_breakdown
from .sysmodel import Scheme, SystemConfig, deploy, select_aps

CELL_BUDGET_S = 60.0
SIG_DIGITS = 12
TIGHTNESS_POWER = 0.1
DEFAULT_TOTAL_ANTENNAS = 144


class Kind(str, enum.Enum):
    TIGHTNESS = "tightness"
    CONVERGENCE = "convergence"
    THRESHOLD_SWEEP = "threshold_sweep"
    PILOT_SWEEP = "pilot_sweep"
    AP_COUNT_SWEEP = "ap_count_sweep"
    DEVICE_SWEEP = "device_sweep"
    VERIFY_THEOREMS = "verify_theorems"


# swept parameter and its default grid for each kind
SWEEPS = {
    Kind.TIGHTNESS: ("total_antennas", (16, 32, 64, 96, 144)),
    Kind.CONVERGENCE: ("ap_power_max", (0.2, 1.0)),
    Kind.THRESHOLD_SWEEP: ("selection_threshold", (0.85, 0.9, 0.95, 1.0)),
    Kind.PILOT_SWEEP: ("pilot_power_max", (0.01, 0.05, 0.1, 0.2)),
    Kind.AP_COUNT_SWEEP: ("num_aps", (1, 4, 9, 16, 36)),
    Kind.DEVICE_SWEEP: ("num_devices", (4, 6, 8, 10, 12, 14, 16)),
    Kind.VERIFY_THEOREMS: ("num_aps", (4,)),
}


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep.

    ``grid`` holds values of the kind's swept parameter (see ``SWEEPS``).
    ``total_antennas`` is the fixed M*N used by the AP-count sweep and
    ``tightness_aps`` the AP counts compared in the tightness study.
    """

    kind: Kind
    grid: tuple = ()
    trials: int = 1
    mc_draws: int = 10_000
    base: SystemConfig = field(default_factory=SystemConfig)
    out: Path | None = None
    seed: int = 0
    schemes: tuple = (Scheme.MRT, Scheme.FZF, Scheme.LZF)
    total_antennas: int = DEFAULT_TOTAL_ANTENNAS
    workers: int = 1
    tightness_aps: tuple = (4, 16)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        grid = tuple(self.grid) or SWEEPS[self.kind][1]
        object.__setattr__(self, "grid", tuple(float(v) for v in grid))
        object.__setattr__(self, "schemes", tuple(Scheme.parse(s) for s in self.schemes))
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.mc_draws < 1:
            raise ConfigError("mc_draws must be >= 1")
        if not self.schemes:
            raise ConfigError("at least one scheme is needed")

    @property
    def parameter(self) -> str:
        return SWEEPS[self.kind][0]


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one (cell, trial, variant).

    ``rates`` are the raw per-device rates; ``extra`` carries kind-specific
    scalars (MC estimates, z-scores).  ``status`` is an allocation status,
    ``Declined`` when the scheme cannot be built, or ``Error``.
    """

    kind: str
    scheme: str
    variant: str
    parameter: str
    value: float
    trial: int
    seed: int
    num_aps: int
    antennas_per_ap: int
    num_devices: int
    status: str
    iterations: int
    weighted_sum: float
    rates: tuple = ()
    history: tuple = ()
    extra: dict = field(default_factory=dict)
    message: str = ""

    @property
    def meets_requirements(self) -> bool:
        return self.status in (AllocationStatus.CONVERGED.value, AllocationStatus.ITERATION_CAP.value)

    def key(self):
        return (self.scheme, self.value, self.variant, self.trial)


FIELDS = [f.name for f in dataclasses.fields(RunRecord)]


def _round(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return float(f"{x:.{SIG_DIGITS}g}") if math.isfinite(x) else x
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (tuple, list, np.ndarray)):
        return tuple(_round(v) for v in x)
    if isinstance(x, dict):
        return {k: _round(v) for k, v in sorted(x.items())}
    return x


def _record(**kw) -> RunRecord:
    return RunRecord(**{k: _round(v) for k, v in kw.items()})


# -- seeds ---------------------------------------------------------------------

def trial_streams(master: int, trial: int):
    """Independent generators for layout, weights and Monte Carlo of one trial."""
    layout, weights, mc = np.random.SeedSequence([master, trial]).spawn(3)
    return np.random.default_rng(layout), np.random.default_rng(weights), mc


def trial_seed(master: int, trial: int) -> int:
    """A printable integer identifying the trial's seed pair."""
    return int(np.random.SeedSequence([master, trial]).generate_state(1)[0])


# -- per-kind cell runners -------------------------------------------------------

def _cell_config(spec: ExperimentSpec, scheme: Scheme, value: float, validate_scheme=True,
                 num_aps=None):
    """Config of one cell; the scheme is applied separately when it may not fit."""
    base = spec.base
    name = spec.parameter
    if name == "total_antennas":
        m = num_aps or base.num_aps
        n = int(value) // m
        if n * m != int(value):
            raise ConfigError(f"{int(value)} antennas do not split over {m} APs")
        changes = {"num_aps": m, "antennas_per_ap": n}
    elif name == "num_aps" and spec.kind is Kind.AP_COUNT_SWEEP:
        m = int(value)
        if spec.total_antennas % m:
            raise ConfigError(f"{spec.total_antennas} antennas do not split over {m} APs")
        changes = {"num_aps": m, "antennas_per_ap": spec.total_antennas // m}
    elif name in ("num_aps", "num_devices"):
        changes = {name: int(value)}
    else:
        changes = {name: value}
    return base.replace(scheme=scheme if validate_scheme else Scheme.MRT, **changes)


def _allocation_record(common, variant, res) -> RunRecord:
    return _record(
        **common, variant=variant, status=res.status.value, iterations=res.iterations,
        weighted_sum=res.weighted_sum_rate, rates=res.rates,
        history=res.objective_history,
    )


def _failure(common, variant, status, message) -> RunRecord:
    return _record(**common, variant=variant, status=status, iterations=0,
                   weighted_sum=0.0, message=message)


def _run_tightness(spec, scheme, value, trial, common):
    """Fixed-power LB against Monte Carlo, one record per AP count."""
    out = []
    for m in spec.tightness_aps:
        variant = f"fixed_power_m{m}"
        layout, wrng, mc_seed = trial_streams(spec.seed, trial)
        try:
            cfg = _cell_config(spec, scheme, value, num_aps=m)
            net = deploy(cfg, layout)
            weights = wrng.uniform(0.0, 1.0, cfg.num_devices)
            scn = Scenario.build(cfg, net.beta, weights)
        except ConfigError as exc:
            out.append(_failure(common | {"num_aps": m}, variant, "Declined", str(exc)))
            continue
        powers = np.where(scn.sets.mask, TIGHTNESS_POWER, 0.0)
        lb = np.asarray(scn.rates(powers).rate)
        mc = mc_ergodic_rate(net.beta, scn.sets, scheme, powers, scn.pilot_powers,
                             cfg.antennas_per_ap, scn.fbl, spec.mc_draws, mc_seed)
        lb_sum = float(weights @ lb)
        mc_sum = float(weights @ mc.ergodic_rate)
        out.append(_record(
            **(common | {"num_aps": m, "antennas_per_ap": cfg.antennas_per_ap}),
            variant=variant, status="Evaluated", iterations=0,
            weighted_sum=lb_sum, rates=lb,
            extra={"ergodic_weighted_sum": mc_sum,
                   "ergodic_weighted_sum_se": float(np.sqrt(weights ** 2 @ mc.ergodic_rate_se ** 2)),
                   "relative_gap": (mc_sum - lb_sum) / abs(mc_sum) if mc_sum else math.nan},
        ))
    return out


def _run_allocation(spec, scheme, value, trial, common):
    cfg = _cell_config(spec, scheme, value)
    layout, wrng, _ = trial_streams(spec.seed, trial)
    net = deploy(cfg, layout)
    weights = wrng.uniform(0.0, 1.0, cfg.num_devices)
    scn = Scenario.build(cfg, net.beta, weights)
    out = [_allocation_record(common, "proposed", algorithm1(scn))]
    if spec.kind is not Kind.CONVERGENCE:
        out.append(_allocation_record(common, "equal_power", baseline_equal_power(scn)))
    return out


def _needs_scheduler(cfg: SystemConfig, scheme: Scheme, beta) -> bool:
    if scheme is Scheme.FZF:
        return cfg.num_devices >= cfg.antennas_per_ap
    if scheme is Scheme.LZF:
        tau = select_aps(beta, cfg.selection_threshold).tau
        return int(tau.max()) >= cfg.antennas_per_ap
    return False


def _run_devices(spec, scheme, value, trial, common):
    """Device sweep: proposed, equal power and Shannon variants, scheduled when needed."""
    cfg = _cell_config(spec, scheme, value, validate_scheme=False)
    layout, wrng, _ = trial_streams(spec.seed, trial)
    net = deploy(cfg, layout)
    weights = wrng.uniform(0.0, 1.0, cfg.num_devices)
    variants = {
        "proposed": (algorithm1, False),
        "equal_power": (baseline_equal_power, False),
        "shannon": (algorithm1, True),
    }
    out = []
    if _needs_scheduler(cfg, scheme, net.beta) and cfg.num_devices >= 2:
        first = cfg.num_devices // 2
        for name, (alloc, shannon) in variants.items():
            res = schedule_round_robin(cfg, net.beta, weights, first, alloc, scheme=scheme, shannon=shannon)
            out.append(_record(
                **common, variant=f"{name}_scheduled", status=res.status.value,
                iterations=max(r.iterations for r in res.results), weighted_sum=res.weighted_sum_rate,
                rates=res.rates, extra={"first_group": first},
            ))
        return out
    scheme_cfg = cfg.replace(scheme=scheme)
    for name, (alloc, shannon) in variants.items():
        scn = Scenario.build(scheme_cfg, net.beta, weights, shannon=shannon)
        out.append(_allocation_record(common, name, alloc(scn)))
    return out


def _run_verify(spec, scheme, value, trial, common):
    """Monte Carlo signal powers against the closed forms, as z-scores."""
    cfg = _cell_config(spec, scheme, value)
    layout, wrng, mc_seed = trial_streams(spec.seed, trial)
    net = deploy(cfg, layout)
    scn = Scenario.build(cfg, net.beta)
    powers = equal_power(scn)
    mc = mc_ergodic_rate(net.beta, scn.sets, scheme, powers, scn.pilot_powers,
                         cfg.antennas_per_ap, scn.fbl, spec.mc_draws, mc_seed)
    closed = sinr_breakdown(scheme, scn.sets, scn.stats, net.beta, powers, cfg.antennas_per_ap)
    z = {
        "ds2": _zmax(mc.ds2, mc.ds2_se, closed.ds),
        "ls2": _zmax(mc.ls2, mc.ls2_se, closed.ls),
        "ui2": _zmax(mc.ui2, mc.ui2_se, closed.ui),
    }
    lb = np.asarray(scn.rates(powers).rate)
    return [_record(
        **common, variant="equal_power", status="Evaluated", iterations=0,
        weighted_sum=float(scn.weights @ lb), rates=lb,
        extra={f"z_{k}": v for k, v in z.items()} | {
            "ergodic_weighted_sum": float(scn.weights @ mc.ergodic_rate),
            "rejected_draws": mc.n_rejected},
    )]


def _zmax(est, se, ref) -> float:
    est, se, ref = (np.asarray(v, dtype=float) for v in (est, se, ref))
    diff = np.abs(est - ref)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, np.where(diff > 1e-12 * np.maximum(1.0, np.abs(ref)), np.inf, 0.0))
    return float(np.max(z)) if z.size else 0.0


RUNNERS = {
    Kind.TIGHTNESS: _run_tightness,
    Kind.CONVERGENCE: _run_allocation,
    Kind.THRESHOLD_SWEEP: _run_allocation,
    Kind.PILOT_SWEEP: _run_allocation,
    Kind.AP_COUNT_SWEEP: _run_allocation,
    Kind.DEVICE_SWEEP: _run_devices,
    Kind.VERIFY_THEOREMS: _run_verify,
}


def run_trial(spec: ExperimentSpec, scheme: Scheme, value: float, trial: int):
    """All records of one (scheme, value, trial); failures become records.

    Returns ``(records, seconds)``.
    """
    start = time.perf_counter()
    base = spec.base
    common = dict(
        kind=spec.kind.value, scheme=scheme.value, parameter=spec.parameter, value=value,
        trial=trial, seed=trial_seed(spec.seed, trial), num_aps=base.num_aps,
        antennas_per_ap=base.antennas_per_ap, num_devices=base.num_devices,
    )
    try:
        cfg = _cell_config(spec, scheme, value, validate_scheme=False,
                           num_aps=spec.tightness_aps[0] if spec.kind is Kind.TIGHTNESS else None)
        common.update(num_aps=cfg.num_aps, antennas_per_ap=cfg.antennas_per_ap,
                      num_devices=cfg.num_devices)
        records = RUNNERS[spec.kind](spec, scheme, value, trial, common)
    except ConfigError as exc:
        records = [_failure(common, "-", "Declined", str(exc))]
    except CfUrllcError as exc:
        records = [_failure(common, "-", "Error", str(exc))]
    return records, time.perf_counter() - start


def _run_job(args):
    return run_trial(*args)


# -- summary -------------------------------------------------------------------

@dataclass(frozen=True)
class CellSummary:
    """Aggregate of one (scheme, value, variant) cell."""

    scheme: str
    variant: str
    value: float
    trials: int
    feasible: int
    errors: int
    mean_weighted_sum: float
    mean_ergodic_weighted_sum: float
    over_budget: bool


SUMMARY_FIELDS = [f.name for f in dataclasses.fields(CellSummary)]


def summarize(records: Sequence[RunRecord], timings: dict | None = None,
              budget: float = CELL_BUDGET_S) -> list:
    """Per-cell means with the zero-on-violation rule.

    Allocation runs that miss a requirement, and declined cells, count as
    zero; evaluations (tightness, verification) are averaged as they are.
    Errored runs are counted but left out of the mean.  Declined records
    (variant ``-``) are charged to every variant of their cell.
    """
    cells = {}
    declined = {}
    for r in sorted(records, key=RunRecord.key):
        if r.variant == "-":
            declined.setdefault((r.scheme, r.value), []).append(r)
            continue
        cells.setdefault((r.scheme, r.value, r.variant), []).append(r)
    for (scheme, value), recs in declined.items():
        variants = {v for (s, x, v) in cells if s == scheme and x == value} or {"proposed"}
        for v in variants:
            cells.setdefault((scheme, value, v), []).extend(recs)

    out = []
    for (scheme, value, variant), recs in sorted(cells.items()):
        errors = sum(r.status == "Error" for r in recs)
        counted = [r for r in recs if r.status != "Error"]
        vals = []
        for r in counted:
            if r.status == "Evaluated":
                vals.append(r.weighted_sum)
            else:
                vals.append(r.weighted_sum if r.meets_requirements else 0.0)
        erg = [r.extra["ergodic_weighted_sum"] for r in counted if "ergodic_weighted_sum" in r.extra]
        spent = sum((timings or {}).get((scheme, value, r.trial), 0.0) for r in counted)
        out.append(CellSummary(
            scheme=scheme, variant=variant, value=value, trials=len(recs),
            feasible=sum(r.meets_requirements for r in counted), errors=errors,
            mean_weighted_sum=_round(math.fsum(vals) / len(vals)) if vals else math.nan,
            mean_ergodic_weighted_sum=_round(math.fsum(erg) / len(erg)) if erg else math.nan,
            over_budget=spent > budget,
        ))
    return out


# -- run / emit ----------------------------------------------------------------

@dataclass
class RunOutput:
    records: list
    summary: list
    timings: dict

    @property
    def any_feasible(self) -> bool:
        return any(r.meets_requirements or r.status == "Evaluated" for r in self.records)


def check_writable(out) -> Path:
    """Create ``out`` if needed and make sure files can be written there."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-test"
    with open(probe, "w") as fh:
        fh.write("")
    probe.unlink()
    return out


def run(spec: ExperimentSpec, progress=None) -> RunOutput:
    """Execute every (scheme, value, trial) of the spec.

    Records are ordered by (scheme, value, variant, trial) whatever the
    worker count.  If ``spec.out`` is set it is checked for writability
    first and the results are written there at the end.
    """
    if spec.out is not None:
        check_writable(spec.out)
    jobs = [(spec, s, v, t) for s in spec.schemes for v in spec.grid for t in range(spec.trials)]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=1))
    else:
        results = []
        for job in jobs:
            results.append(_run_job(job))
            if progress is not None:
                progress(job, results[-1])
    records = []
    timings = {}
    for (_, s, v, t), (recs, secs) in zip(jobs, results):
        records.extend(recs)
        timings[(s.value, _round(v), t)] = secs
    records.sort(key=RunRecord.key)
    summary = summarize(records, timings)
    output = RunOutput(records, summary, timings)
    if spec.out is not None:
        emit(records, spec.out, summary, timings)
    return output


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.{SIG_DIGITS}g}"
    if isinstance(value, (tuple, list)):
        return ";".join(_fmt(v) for v in value)
    if isinstance(value, dict):
        return ";".join(f"{k}={_fmt(v)}" for k, v in value.items())
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def emit(records: Iterable[RunRecord], out, summary=None, timings=None) -> dict:
    """Write ``records.csv``/``records.json`` (and summary/timing files when given).

    Wall-clock times go to ``timings.csv`` only, which keeps the record
    files byte-identical between runs with the same seed.
    """
    out = check_writable(out)
    records = list(records)
    paths = {"csv": out / "records.csv", "json": out / "records.json"}
    _write_csv(paths["csv"], FIELDS, ([getattr(r, f) for f in FIELDS] for r in records))
    paths["json"].write_text(json.dumps([record_to_dict(r) for r in records], indent=1) + "\n")
    if summary is not None:
        paths["summary"] = out / "summary.csv"
        _write_csv(paths["summary"], SUMMARY_FIELDS,
                   ([getattr(s, f) for f in SUMMARY_FIELDS] for s in summary))
    if timings is not None:
        paths["timings"] = out / "timings.csv"
        _write_csv(paths["timings"], ["scheme", "value", "trial", "seconds"],
                   ([*k, v] for k, v in sorted(timings.items())))
    return paths


def record_to_dict(r: RunRecord) -> dict:
    d = dataclasses.asdict(r)
    d["rates"] = list(r.rates)
    d["history"] = list(r.history)
    return d


def record_from_dict(d: dict) -> RunRecord:
    d = dict(d)
    d["rates"] = tuple(d.get("rates", ()))
    d["history"] = tuple(d.get("history", ()))
    return RunRecord(**d)


def load_records(path) -> list:
    """Read a ``records.json`` written by :func:`emit`."""
    return [record_from_dict(d) for d in json.loads(Path(path).read_text())]


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))
