"""A small geometric-programming solver.

A GP in standard form

    minimize    f0(x)          (posynomial)
    subject to  fi(x) <= 1     (posynomials),   x > 0

becomes convex under ``x = exp(y)``: every posynomial turns into a
log-sum-exp of affine functions of ``y``.  The convex problem is solved with
a logarithmic-barrier method (damped Newton centering, Armijo backtracking,
barrier parameter multiplied by 10 per outer step) after a Phase-I search
for a strictly feasible point.

Variables are confined to ``|y_j| <= BOX`` so the barrier subproblems stay
bounded; an optimum pressing against that box is reported as ``Unbounded``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

BOX = 50.0
MU = 10.0
ARMIJO = 0.01
BACKTRACK = 0.5
PURE_NEWTON = 1e-2


# -- model -----------------------------------------------------------------

@dataclass(frozen=True)
class Monomial:
    """``coef * prod_j x_j ** exps[j]`` with ``coef > 0``."""

    coef: float
    exps: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.coef > 0 and math.isfinite(self.coef)):
            raise ValueError(f"monomial coefficient must be positive and finite, got {self.coef}")
        object.__setattr__(self, "exps", {int(j): float(e) for j, e in self.exps.items() if e != 0})

    def __mul__(self, other):
        if isinstance(other, Monomial):
            exps = dict(self.exps)
            for j, e in other.exps.items():
                exps[j] = exps.get(j, 0.0) + e
            return Monomial(self.coef * other.coef, exps)
        return Monomial(self.coef * float(other), self.exps)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Monomial):
            return self * other ** -1
        return Monomial(self.coef / float(other), self.exps)

    def __pow__(self, power):
        return Monomial(self.coef ** power, {j: e * power for j, e in self.exps.items()})

    def __add__(self, other):
        return Posynomial([self]) + other

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return self.coef * math.prod(x[j] ** e for j, e in self.exps.items())


def variable(index: int) -> Monomial:
    return Monomial(1.0, {index: 1.0})


@dataclass(frozen=True)
class Posynomial:
    """Sum of monomials (at least one)."""

    terms: tuple

    def __init__(self, terms: Iterable[Monomial]):
        terms = tuple(terms)
        if not terms:
            raise ValueError("a posynomial needs at least one term")
        object.__setattr__(self, "terms", terms)

    def __add__(self, other):
        if isinstance(other, Monomial):
            return Posynomial(self.terms + (other,))
        if isinstance(other, Posynomial):
            return Posynomial(self.terms + other.terms)
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, Posynomial):
            return Posynomial(a * b for a in self.terms for b in other.terms)
        return Posynomial(t * other for t in self.terms)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Posynomial(t / other for t in self.terms)

    def __call__(self, x) -> float:
        return sum(t(x) for t in self.terms)


def as_posynomial(p) -> Posynomial:
    return p if isinstance(p, Posynomial) else Posynomial([p])


@dataclass
class GpProblem:
    """``minimize objective  s.t.  constraint <= 1`` over ``num_vars`` positive variables."""

    num_vars: int
    objective: Posynomial
    constraints: list = field(default_factory=list)
    names: Sequence[str] | None = None

    def __post_init__(self):
        self.objective = as_posynomial(self.objective)
        self.constraints = [as_posynomial(c) for c in self.constraints]

    def add(self, constraint) -> None:
        self.constraints.append(as_posynomial(constraint))

    def constraint_values(self, x) -> np.ndarray:
        return np.array([c(x) for c in self.constraints])


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"
    UNBOUNDED = "Unbounded"


@dataclass
class GpSolution:
    """Solver output.

    ``phase1_slack`` is the Phase-I optimum ``s*`` (constraint values at
    best are ``<= exp(s*)``); positive means infeasible.
    """

    values: np.ndarray
    objective: float
    status: Status
    kkt_residual: float
    duality_gap: float
    newton_steps: int
    outer_iterations: int
    phase1_slack: float | None = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# -- log-domain form ---------------------------------------------------------

@dataclass(frozen=True)
class LogConvexProgram:
    """``min LSE(A0 y + b0)  s.t.  LSE_i(A y + b) <= 0`` with grouped rows.

    ``starts[i]`` is the first row of constraint ``i`` in ``A``.
    """

    num_vars: int
    A0: np.ndarray
    b0: np.ndarray
    A: np.ndarray
    b: np.ndarray
    starts: np.ndarray

    @property
    def num_constraints(self) -> int:
        return len(self.starts)

    @property
    def group(self) -> np.ndarray:
        sizes = np.diff(np.append(self.starts, len(self.b)))
        return np.repeat(np.arange(len(self.starts)), sizes)

    def objective(self, y) -> float:
        return float(_lse(self.A0 @ y + self.b0))

    def constraints(self, y) -> np.ndarray:
        z = self.A @ y + self.b
        zmax = np.maximum.reduceat(z, self.starts)
        return zmax + np.log(np.add.reduceat(np.exp(z - zmax[self.group]), self.starts))


def _lse(z):
    zmax = np.max(z)
    return zmax + np.log(np.sum(np.exp(z - zmax)))


def _rows(posy: Posynomial, num_vars: int):
    A = np.zeros((len(posy.terms), num_vars))
    b = np.empty(len(posy.terms))
    for r, term in enumerate(posy.terms):
        b[r] = math.log(term.coef)
        for j, e in term.exps.items():
            if not 0 <= j < num_vars:
                raise ValueError(f"variable index {j} out of range")
            A[r, j] += e
    return A, b


def to_log_convex(problem: GpProblem) -> LogConvexProgram:
    """Take logs of variables and posynomials."""
    n = problem.num_vars
    A0, b0 = _rows(problem.objective, n)
    blocks = [_rows(c, n) for c in problem.constraints]
    if blocks:
        A = np.vstack([blk[0] for blk in blocks])
        b = np.concatenate([blk[1] for blk in blocks])
        starts = np.cumsum([0] + [len(blk[1]) for blk in blocks[:-1]])
    else:
        A, b, starts = np.zeros((0, n)), np.zeros(0), np.zeros(0, dtype=int)
    return LogConvexProgram(n, A0, b0, A, b, np.asarray(starts, dtype=int))


def _with_box(prog: LogConvexProgram, box: float) -> LogConvexProgram:
    n = prog.num_vars
    eye = np.eye(n)
    A = np.vstack([prog.A, eye, -eye])
    b = np.concatenate([prog.b, np.full(2 * n, -box)])
    starts = np.concatenate([prog.starts, len(prog.b) + np.arange(2 * n)])
    return LogConvexProgram(n, prog.A0, prog.b0, A, b, starts.astype(int))


def _phase1_program(prog: LogConvexProgram) -> LogConvexProgram:
    """Variables ``(y, s)``: minimise ``s`` s.t. ``LSE_i(A y + b) - s <= 0``."""
    n = prog.num_vars
    A = np.hstack([prog.A, -np.ones((len(prog.b), 1))])
    A0 = np.zeros((1, n + 1))
    A0[0, -1] = 1.0
    return LogConvexProgram(n + 1, A0, np.zeros(1), A, prog.b, prog.starts)


# -- barrier method ----------------------------------------------------------

class _Barrier:
    """Value, gradient and Hessian of ``t f0(y) - sum log(-fi(y))``."""

    def __init__(self, prog: LogConvexProgram):
        self.prog = prog
        self.group = prog.group

    def _lse_parts(self, A, b, starts, group, y):
        z = A @ y + b
        zmax = np.maximum.reduceat(z, starts)
        e = np.exp(z - zmax[group])
        s = np.add.reduceat(e, starts)
        f = zmax + np.log(s)
        pi = e / s[group]
        grads = np.add.reduceat(pi[:, None] * A, starts, axis=0)
        return f, pi, grads

    def value(self, y, t):
        f = self.prog.constraints(y)
        if np.any(f >= 0):
            return np.inf
        return t * self.prog.objective(y) - np.sum(np.log(-f))

    def derivatives(self, y, t):
        p = self.prog
        f0, pi0, g0 = self._lse_parts(p.A0, p.b0, np.array([0]), np.zeros(len(p.b0), int), y)
        g0 = g0[0]
        H0 = p.A0.T @ (pi0[:, None] * p.A0) - np.outer(g0, g0)
        f, pi, G = self._lse_parts(p.A, p.b, p.starts, self.group, y)
        inv = 1.0 / -f
        grad = t * g0 + G.T @ inv
        w = pi * inv[self.group]
        H = t * H0 + p.A.T @ (w[:, None] * p.A) - G.T @ (inv[:, None] * G) + G.T @ ((inv ** 2)[:, None] * G)
        return grad, H, g0, G, inv


def _newton_direction(H, grad):
    n = len(grad)
    ridge = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
    for _ in range(8):
        try:
            factor = scipy.linalg.cho_factor(H + ridge * np.eye(n), check_finite=False)
            return -scipy.linalg.cho_solve(factor, grad, check_finite=False)
        except np.linalg.LinAlgError:
            ridge = scale * 1e-12 if ridge == 0.0 else ridge * 100.0
    return -np.linalg.lstsq(H, grad, rcond=None)[0]


@dataclass
class _BarrierResult:
    y: np.ndarray
    t: float
    converged: bool
    newton_steps: int
    outer: int
    kkt: float


def _barrier_method(prog, y0, tol, max_outer, max_newton, t0=1.0, stop=None,
                    newton_tol=1e-9, positive_cut=False):
    """Run the barrier method from a strictly feasible ``y0``.

    ``stop(y)`` may end the run early (used by Phase I once feasible).  With
    ``positive_cut`` the run also ends once the dual bound ``f0 - m/t`` of a
    centred point is positive, which certifies Phase-I infeasibility.
    """
    bar = _Barrier(prog)
    y = np.array(y0, dtype=float)
    m = prog.num_constraints
    t = t0
    steps = 0
    kkt = np.inf
    for outer in range(1, max_outer + 1):
        last_dec = np.inf
        while True:
            grad, H, g0, G, inv = bar.derivatives(y, t)
            kkt = float(np.max(np.abs(g0 + G.T @ inv / t))) if len(y) else 0.0
            dy = _newton_direction(H, grad)
            dec2 = float(-grad @ dy)
            # stop at the tolerance, or once the decrement stalls at the
            # rounding floor of the barrier gradient
            if dec2 / 2.0 <= newton_tol or (dec2 < PURE_NEWTON and dec2 >= 0.5 * last_dec):
                break
            last_dec = dec2
            if steps >= max_newton:
                return _BarrierResult(y, t, False, steps, outer, kkt)
            steps += 1
            phi = bar.value(y, t)
            step = 1.0
            # Near the centre the value change drops below rounding of
            # t*f0, so a full step is taken on the decrement alone.
            if dec2 < PURE_NEWTON and np.isfinite(bar.value(y + dy, t)):
                y = y + dy
            else:
                while step > 1e-20:
                    cand = y + step * dy
                    val = bar.value(cand, t)
                    if val <= phi + ARMIJO * step * float(grad @ dy) and val < phi:
                        break
                    step *= BACKTRACK
                else:
                    break  # no progress possible at this t
                y = cand
            if stop is not None and stop(y):
                return _BarrierResult(y, t, True, steps, outer, kkt)
        if m / t < tol or (positive_cut and prog.objective(y) - m / t > 0):
            return _BarrierResult(y, t, True, steps, outer, kkt)
        t *= MU
    return _BarrierResult(y, t, False, steps, max_outer, kkt)


def _kkt_residual(prog, y, t, barrier_value, active_tol=1e-6):
    """Stationarity residual of ``(y, lambda)`` in the log domain.

    Near the end of the barrier run ``-f_i`` is so small that the barrier
    multipliers ``1/(t (-f_i))`` carry only a few correct digits.  The
    multipliers of the nearly active constraints are therefore refitted by
    non-negative least squares; the complementary-slackness term
    ``lambda_i |f_i|`` is folded into the returned value.
    """
    bar = _Barrier(prog)
    _, _, g0, G, _ = bar.derivatives(y, t)
    f = prog.constraints(y)
    active = f > -active_tol
    if not np.any(active):
        return min(barrier_value, float(np.max(np.abs(g0))))
    lam, _ = scipy.optimize.nnls(G[active].T, -g0)
    stat = float(np.max(np.abs(g0 + G[active].T @ lam)))
    slack = float(np.max(lam * np.abs(f[active])))
    return min(barrier_value, max(stat, slack))


def _initial_t(prog, y):
    """Balance objective and barrier gradients at the start point."""
    bar = _Barrier(prog)
    _, _, g0, G, inv = bar.derivatives(y, 1.0)
    gb = G.T @ inv
    denom = float(g0 @ g0)
    if denom <= 0:
        return 1.0
    return float(np.clip(-(g0 @ gb) / denom, 1e-3, 1.0)) if g0 @ gb < 0 else 1.0


def solve(problem: GpProblem, tol: float = 1e-9, x0=None, max_outer: int = 50,
          max_newton: int = 200, box: float = BOX) -> GpSolution:
    """Solve a GP.

    Parameters
    ----------
    problem : GpProblem
    tol : float
        Target duality gap ``m / t`` of the log-domain problem (a relative
        gap on the objective value).
    x0 : array_like, optional
        Starting point; Phase I runs only if it is not strictly feasible.
    max_outer, max_newton : int
        Caps on barrier updates and on Newton steps; each phase gets its
        own Newton budget.
    """
    core = to_log_convex(problem)
    prog = _with_box(core, box)
    n = prog.num_vars
    y = np.zeros(n) if x0 is None else np.clip(np.log(np.asarray(x0, dtype=float)), -box + 1, box - 1)
    total_steps = 0
    total_outer = 0
    slack = None

    if np.max(prog.constraints(y)) >= -1e-9:
        p1 = _phase1_program(prog)
        s0 = float(np.max(prog.constraints(y))) + 1.0
        z0 = np.append(y, s0)

        def feasible(z):
            return z[-1] < 0 and np.max(prog.constraints(z[:-1])) < -1e-7

        res = _barrier_method(p1, z0, tol, max_outer, max_newton, stop=feasible,
                              positive_cut=True)
        total_steps += res.newton_steps
        total_outer += res.outer
        slack = float(np.max(prog.constraints(res.y[:-1])))
        y = res.y[:-1]
        if not feasible(res.y):
            status = Status.INFEASIBLE if res.converged else Status.MAX_ITERATIONS
            x = np.exp(y)
            return GpSolution(x, float(problem.objective(x)), status, np.inf, np.inf,
                              total_steps, total_outer, slack)

    res = _barrier_method(prog, y, tol, max_outer, max_newton, t0=_initial_t(prog, y))
    total_steps += res.newton_steps
    total_outer += res.outer
    y = res.y
    x = np.exp(y)
    if np.any(np.abs(y) > box - 1.0):
        status = Status.UNBOUNDED
    elif not res.converged:
        status = Status.MAX_ITERATIONS
    else:
        status = Status.OPTIMAL
    return GpSolution(
        values=x,
        objective=float(problem.objective(x)),
        status=status,
        kkt_residual=_kkt_residual(prog, y, res.t, res.kkt),
        duality_gap=prog.num_constraints / res.t,
        newton_steps=total_steps,
        outer_iterations=total_outer,
        phase1_slack=slack,
    )


# -- plain-text dump -------------------------------------------------------

def _format_posy(posy: Posynomial) -> list:
    lines = []
    for term in posy.terms:
        pairs = " ".join(f"{j}:{e!r}" for j, e in sorted(term.exps.items()))
        lines.append(f"{term.coef!r} {pairs}".rstrip())
    return lines


def dump_problem(problem: GpProblem, path) -> None:
    """Write a GP as text: one monomial per line, ``coef idx:exp ...``.

    Sections start with ``objective`` or ``constraint <i>`` header lines.
    """
    out = [f"vars {problem.num_vars}", "objective"]
    out += _format_posy(problem.objective)
    for i, c in enumerate(problem.constraints):
        out.append(f"constraint {i}")
        out += _format_posy(c)
    Path(path).write_text("\n".join(out) + "\n")


def load_problem(path) -> GpProblem:
    """Inverse of :func:`dump_problem`."""
    num_vars = None
    sections = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        head = line.split()[0]
        try:
            if head == "vars":
                num_vars = int(line.split()[1])
            elif head in ("objective", "constraint"):
                sections.append([])
            elif sections:
                coef, *pairs = line.split()
                exps = {int(j): float(e) for j, e in (p.split(":") for p in pairs)}
                sections[-1].append(Monomial(float(coef), exps))
            else:
                raise ValueError("monomial outside a section")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if num_vars is None or not sections:
        raise ValueError("not a GP dump")
    return GpProblem(num_vars, Posynomial(sections[0]), [Posynomial(s) for s in sections[1:]])
