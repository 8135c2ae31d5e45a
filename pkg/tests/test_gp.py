import math

import numpy as np
import pytest

from cfurllc.gp import (
    GpProblem, Monomial, Posynomial, Status, dump_problem, load_problem, solve, to_log_convex,
    variable,
)

x, y, z = variable(0), variable(1), variable(2)
LO, HI = 1e-2, 1e2
PER_DECADE = 40


# -- model and transform -------------------------------------------------------

def test_monomial_algebra():
    m = 2 * x * y ** -1
    assert m.coef == 2 and m.exps == {0: 1.0, 1: -1.0}
    assert (m / m).exps == {}
    assert m([3.0, 2.0]) == pytest.approx(3.0)


@pytest.mark.parametrize("coef", [0.0, -1.0, math.inf])
def test_monomial_coefficient_positive(coef):
    with pytest.raises(ValueError):
        Monomial(coef)


def test_empty_posynomial_rejected():
    with pytest.raises(ValueError):
        Posynomial([])


def test_log_transform_single_term():
    prog = to_log_convex(GpProblem(2, x + y, [2 * x * y ** -1]))
    np.testing.assert_array_equal(prog.A, [[1.0, -1.0]])
    assert prog.b[0] == pytest.approx(math.log(2))


def test_log_transform_lse():
    prog = to_log_convex(GpProblem(1, x, [x + x ** -1]))
    np.testing.assert_array_equal(prog.A, [[1.0], [-1.0]])
    assert prog.constraints(np.zeros(1))[0] == pytest.approx(math.log(2))
    ys = np.linspace(-3, 3, 601)
    assert min(prog.constraints(np.array([v]))[0] for v in ys) >= math.log(2) - 1e-12


def test_log_transform_matches_values():
    rng = np.random.default_rng(0)
    prob = GpProblem(3, x * y + 3 * z ** -0.5, [0.1 * x ** 2 * y + y ** -1 * z, 0.3 * z])
    prog = to_log_convex(prob)
    for _ in range(20):
        pt = rng.lognormal(size=3)
        vals = prob.constraint_values(pt)
        np.testing.assert_allclose(prog.constraints(np.log(pt)), np.log(vals), rtol=1e-12)
        assert prog.objective(np.log(pt)) == pytest.approx(math.log(prob.objective(pt)), rel=1e-12)


def test_bad_variable_index():
    with pytest.raises(ValueError):
        to_log_convex(GpProblem(1, x, [y]))


# -- analytic optima -------------------------------------------------------------

def test_tight_single_constraint():
    sol = solve(GpProblem(1, x, [2 * x ** -1]))
    assert sol.status is Status.OPTIMAL
    assert sol.values[0] == pytest.approx(2.0, rel=1e-6)
    assert sol.kkt_residual <= 1e-6


def test_am_gm():
    sol = solve(GpProblem(2, x + y, [x ** -1 * y ** -1]))
    assert sol.optimal
    np.testing.assert_allclose(sol.values, [1.0, 1.0], rtol=1e-6)
    assert sol.objective == pytest.approx(2.0, rel=1e-6)
    assert sol.kkt_residual <= 1e-6


def test_bound_hit_by_monotone_objective():
    sol = solve(GpProblem(1, x ** -1, [0.2 * x, x ** -1]))
    assert sol.optimal and sol.values[0] == pytest.approx(5.0, rel=1e-6)


def test_infeasible_reports_slack():
    sol = solve(GpProblem(1, x, [x + x ** -1]))
    assert sol.status is Status.INFEASIBLE
    assert sol.phase1_slack == pytest.approx(math.log(2), rel=1e-3)


def test_barely_infeasible_slack_small():
    sol = solve(GpProblem(1, x, [1.001 * x, 1.001 * x ** -1]))
    assert sol.status is Status.INFEASIBLE
    assert 0 < sol.phase1_slack < 2e-3


def test_unbounded():
    assert solve(GpProblem(1, x, [])).status is Status.UNBOUNDED
    assert solve(GpProblem(2, x * y ** -1, [x ** -1])).status is Status.UNBOUNDED


def test_iteration_cap():
    sol = solve(GpProblem(2, x + y, [x ** -1 * y ** -1]), max_newton=2)
    assert sol.status is Status.MAX_ITERATIONS


def test_feasible_start_skips_phase1():
    sol = solve(GpProblem(1, x, [2 * x ** -1]), x0=[10.0])
    assert sol.optimal and sol.phase1_slack is None


# -- brute force ------------------------------------------------------------------

def _eval(posy, pts):
    out = np.zeros(len(pts))
    for t in posy.terms:
        out += t.coef * np.prod([pts[:, j] ** e for j, e in t.exps.items()], axis=0)
    return out


def _grid_min(prob, axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    ok = np.all([_eval(c, pts) <= 1.0 for c in prob.constraints], axis=0)
    if not ok.any():
        return None, None
    vals = np.where(ok, _eval(prob.objective, pts), np.inf)
    i = int(np.argmin(vals))
    return vals[i], pts[i]


def brute_force(prob, rounds=12):
    """Log-grid search at 40 points per decade, then repeated zooming."""
    n = prob.num_vars
    decades = math.log10(HI / LO)
    axis = np.logspace(math.log10(LO), math.log10(HI), int(decades * PER_DECADE) + 1)
    best, at = _grid_min(prob, [axis] * n)
    if best is None:
        return None
    width = 10 ** (2.0 / PER_DECADE)
    for _ in range(rounds):
        axes = [np.clip(np.geomspace(a / width, a * width, 41), LO, HI) for a in at]
        val, pt = _grid_min(prob, axes)
        if val is not None and val <= best:
            best, at = val, pt
        width = width ** 0.4
    return best


def _random_problem(rng, n):
    star = np.exp(rng.uniform(-2, 2, n))
    def mono(scale=1.0):
        e = rng.normal(size=n)
        return Monomial(scale, {j: float(v) for j, v in enumerate(e)})
    obj = Posynomial([mono(rng.uniform(0.5, 2.0)) for _ in range(rng.integers(1, 4))])
    cons = []
    for _ in range(rng.integers(1, 4)):
        posy = Posynomial([mono(rng.uniform(0.1, 1.0)) for _ in range(rng.integers(1, 3))])
        cons.append(posy / (2.0 * posy(star)))     # strictly feasible at star
    for j in range(n):                             # box [LO, HI]
        cons.append(Monomial(1.0 / HI, {j: 1.0}))
        cons.append(Monomial(LO, {j: -1.0}))
    return GpProblem(n, obj, cons)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("seed", range(8))
def test_matches_brute_force(n, seed):
    prob = _random_problem(np.random.default_rng(100 * n + seed), n)
    sol = solve(prob)
    assert sol.status is Status.OPTIMAL
    assert sol.kkt_residual <= 1e-6
    assert np.all(prob.constraint_values(sol.values) <= 1 + 1e-8)
    ref = brute_force(prob)
    assert ref is not None
    assert sol.objective <= ref * (1 + 1e-9)
    assert abs(sol.objective - ref) / ref <= 1e-3


@pytest.mark.parametrize("c", [1e-3, 0.5, 7.0, 1e4])
def test_scaling_invariance(c):
    base = GpProblem(2, x ** -1 * y ** -2, [x + y, 0.5 * x ** -1])
    scaled = GpProblem(2, c * x ** -1 * y ** -2, base.constraints)
    a, b = solve(base), solve(scaled)
    assert a.optimal and b.optimal
    np.testing.assert_allclose(a.values, b.values, rtol=1e-6)


def test_deterministic():
    prob = _random_problem(np.random.default_rng(5), 3)
    a, b = solve(prob), solve(prob)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.objective == b.objective and a.newton_steps == b.newton_steps


def test_round_trip_log_domain():
    sol = solve(GpProblem(1, x, [2 * x ** -1]))
    assert np.exp(np.log(sol.values)) == pytest.approx(sol.values, rel=1e-12)


def test_dump_load_round_trip(tmp_path):
    prob = _random_problem(np.random.default_rng(9), 3)
    path = tmp_path / "p.gp"
    dump_problem(prob, path)
    back = load_problem(path)
    assert back.num_vars == prob.num_vars
    assert back.objective == prob.objective
    assert back.constraints == prob.constraints
    assert "objective" in path.read_text().splitlines()[1]


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.gp"
    path.write_text("hello\n")
    with pytest.raises(ValueError):
        load_problem(path)
