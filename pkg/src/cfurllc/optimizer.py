"""Weighted-sum-rate power allocation by successive geometric programming.

The rate of device ``k`` is lower-bounded by a log-linear function of its
SINR ``chi_k`` around the current iterate, and the numerator of the SINR
bound, ``theta_k^2``, by a monomial in the link powers.  Each SCA step then
is a GP in the served link powers and ``chi``:

    maximize    prod_k chi_k ** w_hat_k
    subject to  chi_k * varpi_k(p) <= c_k^2 prod_m ((N - t_m) lam_mk p_mk) ** (2 a_mk)
                chi_k >= gamma_req_k
                sum_{k in U_m} p_mk <= P_m

Pilot powers sit at their maximum throughout, since every rate bound is
increasing in them.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import gp
from .channel import EstimationStats, estimation_variance
from .exceptions import DomainError, SolverError
from .fbl import LN2, FblParams, lb_rate
from .sinr import check_dimensions, interference_coeffs, nulling_dims, sinr_lb
from .sysmodel import Scheme, ServingSets, SystemConfig, select_aps

log = logging.getLogger(__name__)

LEMMA4_THRESHOLD = (math.sqrt(17.0) - 3.0) / 4.0
MAX_SCA_ITER = 50
WARM_SHRINK = 1e-2


# -- closed-form coefficients ------------------------------------------------

def fix_pilot_power(cfg: SystemConfig) -> np.ndarray:
    """Pilot powers at their per-device maximum (rates only grow with them)."""
    return cfg.per_device("pilot_power_max")


def lemma3_coeffs(x_hat):
    """``(rho, delta)`` with ``ln(1 + x) >= rho ln x + delta``, tight at ``x_hat``."""
    x_hat = np.asarray(x_hat, dtype=float)
    if np.any(~(x_hat > 0)):
        raise DomainError("expansion point must be positive")
    rho = x_hat / (1.0 + x_hat)
    delta = np.log1p(x_hat) - rho * np.log(x_hat)
    return rho, delta


def lemma4_coeffs(x_hat):
    """``(rho_hat, delta_hat)`` with ``G(x) <= rho_hat ln x + delta_hat``, tight at ``x_hat``.

    ``G(x) = sqrt(1 - (1 + x)^-2)``.  The bound needs ``G(e^u)`` concave,
    which holds for ``x_hat >= (sqrt(17) - 3)/4``.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    if np.any(~(x_hat >= LEMMA4_THRESHOLD)):
        raise DomainError(f"expansion point below {LEMMA4_THRESHOLD:.5f}")
    rho_hat = x_hat / ((1.0 + x_hat) ** 2 * np.sqrt(x_hat * x_hat + 2.0 * x_hat))
    delta_hat = np.sqrt(1.0 - (1.0 + x_hat) ** -2) - rho_hat * np.log(x_hat)
    return rho_hat, delta_hat


@dataclass(frozen=True)
class MonomialBound:
    """``theta_k >= c_k prod_m s_mk^a_mk`` with ``s = (N - t) lam p``.

    ``a`` is ``(M, K)`` with zeros off the serving sets.
    """

    a: np.ndarray
    c: np.ndarray
    log_c: np.ndarray


def theorem4_coeffs(p_hat, lam, sets: ServingSets, num_antennas: int, t) -> MonomialBound:
    """Monomial lower bound of ``theta_k = sum_m sqrt((N - t_m) p_mk lam_mk)`` at ``p_hat``.

    This is the weighted AM-GM inequality with weights proportional to the
    terms at ``p_hat``; the exponents of each device sum to 1/2.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    mask = sets.mask
    if np.any(~(p_hat[mask] > 0)):
        raise DomainError("expansion powers must be positive on every serving link")
    t = np.asarray(t, dtype=float)
    s = np.where(mask, (num_antennas - t)[:, None] * np.asarray(lam) * np.where(mask, p_hat, 1.0), 1.0)
    amp = np.where(mask, np.sqrt(s), 0.0)
    theta = amp.sum(axis=0)
    a = amp / (2.0 * theta)
    log_c = np.log(theta) - (a * np.log(s)).sum(axis=0)
    return MonomialBound(a=a, c=np.exp(log_c), log_c=log_c)


def theta(powers, lam, sets: ServingSets, num_antennas: int, t) -> np.ndarray:
    """``sum_m sqrt((N - t_m) p_mk lam_mk)`` per device."""
    p = np.where(sets.mask, powers, 0.0)
    return np.sqrt((num_antennas - np.asarray(t, float))[:, None] * p * lam).sum(axis=0)


def monomial_value(bound: MonomialBound, powers, lam, sets: ServingSets, num_antennas: int, t):
    """Evaluate ``c_k prod_m s_mk^a_mk`` at ``powers``."""
    s = np.where(sets.mask, (num_antennas - np.asarray(t, float))[:, None] * lam * powers, 1.0)
    return np.exp(bound.log_c + (bound.a * np.log(s)).sum(axis=0))


# -- scenario ----------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Everything the optimizer needs about one network realization."""

    cfg: SystemConfig
    beta: np.ndarray
    sets: ServingSets
    weights: np.ndarray
    pilot_powers: np.ndarray
    stats: EstimationStats
    fbl: FblParams
    requirement: np.ndarray
    t: np.ndarray
    coeff: np.ndarray

    @classmethod
    def build(cls, cfg: SystemConfig, beta, weights=None, sets: ServingSets | None = None,
              shannon: bool = False):
        """Assemble a scenario; raises ConfigError when the scheme lacks antennas.

        ``shannon=True`` drops the finite-blocklength penalty (DEP of 1/2,
        so ``Qinv = 0``), which turns every rate into its Shannon value.
        """
        beta = np.asarray(beta, dtype=float)
        if sets is None:
            sets = select_aps(beta, cfg.selection_threshold)
        check_dimensions(cfg.scheme, sets, cfg.antennas_per_ap)
        w = cfg.per_device("weights") if weights is None else np.asarray(weights, dtype=float)
        pilot = fix_pilot_power(cfg)
        stats = estimation_variance(beta, pilot, cfg.num_devices)
        eps = np.full(cfg.num_devices, 0.5) if shannon else cfg.per_device("dep")
        fbl = FblParams(cfg.blocklength, cfg.num_devices, eps)
        req = np.broadcast_to(fbl.sinr_requirement(cfg.per_device("rate_req")), (cfg.num_devices,))
        return cls(
            cfg=cfg, beta=beta, sets=sets, weights=w, pilot_powers=pilot, stats=stats,
            fbl=fbl, requirement=np.array(req, dtype=float),
            t=nulling_dims(cfg.scheme, sets),
            coeff=interference_coeffs(cfg.scheme, sets, beta, stats.lam),
        )

    @property
    def scheme(self) -> Scheme:
        return self.cfg.scheme

    @property
    def num_antennas(self) -> int:
        return self.cfg.antennas_per_ap

    @property
    def lam(self) -> np.ndarray:
        return self.stats.lam

    @property
    def links(self) -> np.ndarray:
        """``(n, 2)`` array of served ``(m, k)`` pairs in row-major order."""
        return np.argwhere(self.sets.mask)

    def sinr(self, powers) -> np.ndarray:
        return sinr_lb(self.scheme, self.sets, self.stats, self.beta, powers, self.num_antennas)

    def rates(self, powers):
        """Per-device LB rates (bit/s/Hz) and their validity flags."""
        return lb_rate(self.sinr(powers), self.fbl)

    def objective(self, powers) -> float:
        return float(self.weights @ np.asarray(self.rates(powers).rate))

    def denominators(self, powers) -> np.ndarray:
        """``varpi_k``: interference plus unit noise for each device."""
        p = np.where(self.sets.mask, powers, 0.0)
        return np.einsum("mk,mj->k", self.coeff, p) + 1.0


# -- GP assembly -------------------------------------------------------------

@dataclass(frozen=True)
class VarMap:
    """Variable layout: one power per served link, then one per-device extra."""

    links: np.ndarray
    num_devices: int

    @property
    def num_links(self) -> int:
        return len(self.links)

    def extra(self, k: int) -> int:
        return self.num_links + k

    @property
    def num_vars(self) -> int:
        return self.num_links + self.num_devices

    def powers(self, x, shape) -> np.ndarray:
        p = np.zeros(shape)
        p[self.links[:, 0], self.links[:, 1]] = x[: self.num_links]
        return p

    def pack(self, powers, extras) -> np.ndarray:
        return np.concatenate([powers[self.links[:, 0], self.links[:, 1]], np.asarray(extras, float)])


def _sinr_monomial_inverse(scn: Scenario, bound: MonomialBound, vm: VarMap, k: int) -> gp.Monomial:
    """``1 / (c_k^2 prod_m s_mk^(2 a_mk))`` as a monomial in the link powers."""
    exps = {}
    log_coef = -2.0 * bound.log_c[k]
    for j, (m, kk) in enumerate(vm.links):
        if kk != k:
            continue
        a = bound.a[m, k]
        exps[j] = -2.0 * a
        log_coef -= 2.0 * a * math.log((scn.num_antennas - scn.t[m]) * scn.lam[m, k])
    return gp.Monomial(math.exp(log_coef), exps)


def _denominator_posynomial(scn: Scenario, vm: VarMap, k: int) -> gp.Posynomial:
    """``varpi_k(p) = sum_{(m, k')} C_mk p_mk' + 1``."""
    terms = [gp.Monomial(float(scn.coeff[m, k]), {j: 1.0}) for j, (m, _) in enumerate(vm.links)]
    terms.append(gp.Monomial(1.0))
    return gp.Posynomial(terms)


def _power_constraints(scn: Scenario, vm: VarMap) -> list:
    out = []
    budget = scn.cfg.ap_power_max
    for m in range(scn.sets.num_aps):
        idx = np.flatnonzero(vm.links[:, 0] == m)
        if idx.size:
            out.append(gp.Posynomial(gp.Monomial(1.0 / budget, {int(j): 1.0}) for j in idx))
    return out


@dataclass(frozen=True)
class SurrogateCoeffs:
    """Per-device SCA coefficients at one expansion point."""

    rho: np.ndarray
    delta: np.ndarray
    rho_hat: np.ndarray
    delta_hat: np.ndarray
    w_hat: np.ndarray
    clamped: np.ndarray

    def surrogate(self, chi, scn: Scenario) -> float:
        """Lower bound on the weighted LB sum rate as a function of ``chi``."""
        alpha = np.asarray(scn.fbl.alpha)
        scale = scn.weights * (1.0 - scn.fbl.eta) / LN2
        inner = (self.rho - alpha * self.rho_hat) * np.log(chi) + self.delta - alpha * self.delta_hat
        return float(scale @ inner)


def surrogate_coeffs(chi, scn: Scenario) -> SurrogateCoeffs:
    """Log-linear bounds of the rate terms around ``chi``.

    Expansion points below the concavity threshold of the dispersion bound
    are clamped to it and logged.
    """
    chi = np.asarray(chi, dtype=float)
    rho, delta = lemma3_coeffs(chi)
    clamped = chi < LEMMA4_THRESHOLD
    if np.any(clamped):
        log.warning("dispersion bound clamped for devices %s", np.flatnonzero(clamped).tolist())
    rho_hat, delta_hat = lemma4_coeffs(np.maximum(chi, LEMMA4_THRESHOLD))
    alpha = np.asarray(scn.fbl.alpha)
    w_hat = scn.weights * (1.0 - scn.fbl.eta) / LN2 * (rho - alpha * rho_hat)
    return SurrogateCoeffs(rho, delta, rho_hat, delta_hat, w_hat, clamped)


def build_subproblem(scn: Scenario, coeffs: SurrogateCoeffs, bound: MonomialBound):
    """SCA subproblem as a GP; returns ``(problem, varmap)``.

    Devices whose surrogate exponent is not positive contribute nothing to
    the objective but keep their constraints.
    """
    vm = VarMap(scn.links, scn.sets.num_devices)
    obj_exps = {}
    for k in range(vm.num_devices):
        if coeffs.w_hat[k] > 0:
            obj_exps[vm.extra(k)] = -float(coeffs.w_hat[k])
        elif scn.weights[k] > 0:
            log.info("device %d dropped from the objective (w_hat = %.3g)", k, coeffs.w_hat[k])
    problem = gp.GpProblem(vm.num_vars, gp.Monomial(1.0, obj_exps))
    for k in range(vm.num_devices):
        chi = gp.variable(vm.extra(k))
        problem.add(_denominator_posynomial(scn, vm, k) * (chi * _sinr_monomial_inverse(scn, bound, vm, k)))
    for k in range(vm.num_devices):
        problem.add(gp.Monomial(float(scn.requirement[k]), {vm.extra(k): -1.0}))
    for c in _power_constraints(scn, vm):
        problem.add(c)
    return problem, vm


def build_feasibility(scn: Scenario, bound: MonomialBound):
    """Max-min GP: largest ``phi`` with every bounded SINR at least ``phi`` times its requirement.

    The single extra variable (index ``num_links``) is ``phi``.
    """
    vm = VarMap(scn.links, 1)
    phi = gp.variable(vm.extra(0))
    problem = gp.GpProblem(vm.num_vars, phi ** -1)
    for k in range(scn.sets.num_devices):
        lhs = _denominator_posynomial(scn, vm, k) * (phi * _sinr_monomial_inverse(scn, bound, vm, k))
        problem.add(lhs * float(scn.requirement[k]))
    for c in _power_constraints(scn, vm):
        problem.add(c)
    return problem, vm


# -- algorithms --------------------------------------------------------------

def equal_power(scn: Scenario) -> np.ndarray:
    """``P_m / tau_m`` on every served link."""
    tau = np.maximum(scn.sets.tau, 1)
    return np.where(scn.sets.mask, scn.cfg.ap_power_max / tau[:, None], 0.0)


def _solve(problem, x0, iteration=None, tol=1e-9):
    sol = gp.solve(problem, tol=tol, x0=x0)
    if not sol.optimal:
        raise SolverError(sol.status.value, iteration)
    return sol


@dataclass(frozen=True)
class FeasibilityResult:
    """Max-min outcome: ``phi`` is the smallest true SINR/requirement ratio."""

    phi: float
    powers: np.ndarray
    iterations: int
    history: tuple


def solve_feasibility(scn: Scenario, max_iter: int = 20, rel_tol: float = 1e-4) -> FeasibilityResult:
    """Maximise the worst SINR-to-requirement ratio.

    The monomial bound on the SINR numerator is exact only at its expansion
    point, so one GP under-estimates the reachable ratio; the GP is re-solved
    around each new solution until the true ratio stops improving.
    """
    p = equal_power(scn)
    best = float(np.min(scn.sinr(p) / scn.requirement))
    history = [best]
    it = 0
    while it < max_iter:
        bound = theorem4_coeffs(p, scn.lam, scn.sets, scn.num_antennas, scn.t)
        problem, vm = build_feasibility(scn, bound)
        phi_start = best * (1.0 - WARM_SHRINK) ** 2
        x0 = vm.pack(p * (1.0 - WARM_SHRINK), [phi_start]) if phi_start > 0 else None
        sol = _solve(problem, x0)
        it += 1
        p_new = vm.powers(sol.values, scn.sets.mask.shape)
        phi = float(np.min(scn.sinr(p_new) / scn.requirement))
        if phi <= best:
            break
        gain = (phi - best) / best
        p, best = p_new, phi
        history.append(best)
        if gain < rel_tol:
            break
    return FeasibilityResult(best, p, it, tuple(history))


class AllocationStatus(str, enum.Enum):
    CONVERGED = "Converged"
    INFEASIBLE = "InfeasibleRequirements"
    ITERATION_CAP = "IterationCap"


@dataclass(frozen=True)
class ScaState:
    """One accepted iterate of the SCA loop.

    ``carryover`` is the largest constraint value of the next subproblem at
    this iterate (at most 1 when the iterate stays feasible) and
    ``surrogate_gap`` is ``|surrogate - objective|`` at this iterate.
    """

    iteration: int
    chi: np.ndarray
    powers: np.ndarray
    objective: float
    coeffs: SurrogateCoeffs | None = None
    bound: MonomialBound | None = None
    carryover: float = float("nan")
    surrogate_gap: float = float("nan")


@dataclass(frozen=True)
class AllocationResult:
    powers: np.ndarray
    sinr: np.ndarray
    rates: np.ndarray
    weighted_sum_rate: float
    iterations: int
    status: AllocationStatus
    objective_history: tuple = ()
    states: tuple = field(default=(), repr=False)
    phi: float = float("nan")

    @property
    def requirements_met(self) -> bool:
        return self.status is not AllocationStatus.INFEASIBLE


def _result(scn, p, status, iterations=0, history=(), states=(), phi=float("nan")):
    sinr = scn.sinr(p)
    rates = np.asarray(lb_rate(sinr, scn.fbl).rate, dtype=float)
    return AllocationResult(
        powers=p, sinr=sinr, rates=rates, weighted_sum_rate=float(scn.weights @ rates),
        iterations=iterations, status=status, objective_history=tuple(history),
        states=tuple(states), phi=phi,
    )


def _relative_gain(new, old):
    if old == 0:
        return 0.0 if new == old else math.inf
    return (new - old) / abs(old)


def algorithm1(scn: Scenario, zeta: float | None = None, max_iter: int = MAX_SCA_ITER) -> AllocationResult:
    """Successive GP maximisation of the weighted LB sum rate.

    Starts from the max-min feasible point and stops once the relative gain
    of the true objective drops below ``zeta`` (``cfg.sca_tolerance`` by
    default).  An iterate that does not improve the true objective (possible
    only through solver round-off) is discarded and the loop ends.
    """
    zeta = scn.cfg.sca_tolerance if zeta is None else zeta
    feas = solve_feasibility(scn)
    if feas.phi < 1.0:
        return _result(scn, feas.powers, AllocationStatus.INFEASIBLE, phi=feas.phi)

    p = feas.powers
    chi = scn.sinr(p)
    obj = scn.objective(p)
    prev = zeta * obj
    history = [obj]
    states = []
    it = 0
    status = AllocationStatus.CONVERGED
    while _relative_gain(obj, prev) >= zeta:
        if it >= max_iter:
            status = AllocationStatus.ITERATION_CAP
            break
        coeffs = surrogate_coeffs(chi, scn)
        bound = theorem4_coeffs(p, scn.lam, scn.sets, scn.num_antennas, scn.t)
        problem, vm = build_subproblem(scn, coeffs, bound)
        here = vm.pack(p, chi)
        states.append(ScaState(
            it, chi, p, obj, coeffs, bound,
            carryover=float(np.max(problem.constraint_values(here))),
            surrogate_gap=abs(coeffs.surrogate(chi, scn) - obj),
        ))
        shrink = 1.0 - WARM_SHRINK
        x0 = vm.pack(p * shrink, np.maximum(chi * shrink, scn.requirement / shrink))
        sol = _solve(problem, x0, iteration=it + 1)
        it += 1
        p_new = vm.powers(sol.values, p.shape)
        obj_new = scn.objective(p_new)
        if obj_new < obj:
            log.info("SCA step %d lowered the objective by %.3g; keeping the previous iterate", it, obj - obj_new)
            break
        prev, obj, p, chi = obj, obj_new, p_new, scn.sinr(p_new)
        history.append(obj)
    states.append(ScaState(it, chi, p, obj))
    return _result(scn, p, status, it, history, states, phi=feas.phi)


def baseline_equal_power(scn: Scenario) -> AllocationResult:
    """Equal split of each AP's budget over its served devices.

    Requirement violations are reported through the status, not repaired.
    """
    p = equal_power(scn)
    met = np.all(scn.sinr(p) >= scn.requirement * (1.0 - 1e-12))
    status = AllocationStatus.CONVERGED if met else AllocationStatus.INFEASIBLE
    return _result(scn, p, status)


# -- scheduling --------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    """Device groups served in alternating slots and each group's time share."""

    groups: tuple
    shares: tuple


def round_robin_partition(num_devices: int, first: int) -> Partition:
    """Split devices by index into ``[0, first)`` and ``[first, K)``.

    The two groups alternate slot by slot, so each holds the channel half
    of the time.
    """
    if not 1 <= first < num_devices:
        raise ValueError(f"need 1 <= first < K, got first={first}, K={num_devices}")
    groups = (np.arange(first), np.arange(first, num_devices))
    return Partition(groups, (0.5, 0.5))


def subset_config(cfg: SystemConfig, devices, **overrides) -> SystemConfig:
    """Config for a device subset: per-device fields sliced, pilots resized."""
    idx = np.asarray(devices, dtype=int)
    changes = {"num_devices": len(idx), **overrides}
    for name in ("dep", "rate_req", "weights", "pilot_power_max"):
        vals = cfg.per_device(name)[idx]
        changes[name] = tuple(vals.tolist()) if len(idx) > 1 else float(vals[0])
    return cfg.replace(**changes)


@dataclass(frozen=True)
class ScheduledResult:
    """Per-group allocations combined; ``rates`` are time-share scaled."""

    partition: Partition
    results: tuple
    rates: np.ndarray
    weighted_sum_rate: float
    status: AllocationStatus


def schedule_round_robin(cfg: SystemConfig, beta, weights, first: int, allocate=algorithm1,
                         scheme=None, shannon: bool = False) -> ScheduledResult:
    """Serve two device groups in alternate slots, each optimized on its own.

    Each group gets its own pilot length, serving sets and allocation; the
    reported per-device rate is the group rate times the group's time share.
    ``scheme`` overrides ``cfg.scheme`` for the groups, which lets a config
    with too many devices for that scheme describe the whole population.
    """
    overrides = {} if scheme is None else {"scheme": Scheme.parse(scheme)}
    beta = np.asarray(beta, dtype=float)
    weights = np.asarray(weights, dtype=float)
    part = round_robin_partition(cfg.num_devices, first)
    rates = np.zeros(cfg.num_devices)
    results = []
    status = AllocationStatus.CONVERGED
    for idx, share in zip(part.groups, part.shares):
        sub = Scenario.build(subset_config(cfg, idx, **overrides), beta[:, idx], weights[idx],
                             shannon=shannon)
        res = allocate(sub)
        results.append(res)
        rates[idx] = share * res.rates
        if res.status is AllocationStatus.INFEASIBLE:
            status = AllocationStatus.INFEASIBLE
        elif res.status is AllocationStatus.ITERATION_CAP and status is AllocationStatus.CONVERGED:
            status = AllocationStatus.ITERATION_CAP
    return ScheduledResult(part, tuple(results), rates, float(weights @ rates), status)
