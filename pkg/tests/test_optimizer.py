import numpy as np
import pytest

from sparseqc.control import ControlMeasure, FrequencyGrid
from sparseqc.dynamics import ConfigurationError, TimeGrid
from sparseqc.models import build_three_level
from sparseqc.objective import ObjectiveBreakdown, Problem
from sparseqc.optimizer import (LbfgsOptions, continuation_sweep, default_initial_control, lbfgs, minimize,
                                multistart, strong_wolfe, sweep_rows, write_iteration_log, write_sweep_csv)
from sparseqc.synthesis import make_operator


def _quadratic(n, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n, n))
    a = q @ q.T + n * np.eye(n)
    b = rng.standard_normal(n)

    def fun(x):
        val = 0.5 * x @ a @ x - b @ x
        return ObjectiveBreakdown(float(val), float(val), 0.0, 0.0), a @ x - b

    return fun, np.linalg.solve(a, b)


def _small_problem(alpha=0.1):
    grid = TimeGrid(30.0, 300)
    op = make_operator("fourier", FrequencyGrid.uniform(2.0, 5.0, 13), grid)
    return Problem(build_three_level(2), op, alpha, 1e-4)


def test_options_validation():
    with pytest.raises(ConfigurationError):
        LbfgsOptions(memory=0)
    with pytest.raises(ConfigurationError):
        LbfgsOptions(c1=0.5, c2=0.4)
    with pytest.raises(ConfigurationError):
        LbfgsOptions(c2=1.0)
    with pytest.raises(ConfigurationError):
        LbfgsOptions(grad_tol_rel=0.0)


@pytest.mark.parametrize("n", [3, 8, 20])
def test_lbfgs_solves_convex_quadratic(n):
    # a tight curvature condition makes the cubic line search exact on quadratics
    fun, xstar = _quadratic(n)
    x, b, rows, reason, _ = lbfgs(fun, np.ones(n), lambda u, v: float(u @ v),
                                  LbfgsOptions(memory=n, max_iters=n, grad_tol_rel=1e-9, c1=1e-6, c2=1e-3))
    assert np.linalg.norm(x - xstar) <= 1e-8
    assert reason == "converged" and len(rows) - 1 <= n


@pytest.mark.parametrize("n", [3, 8, 20])
def test_lbfgs_default_options_decrease_monotonically(n):
    fun, xstar = _quadratic(n, seed=1)
    x, b, rows, reason, _ = lbfgs(fun, np.ones(n), lambda u, v: float(u @ v), LbfgsOptions(max_iters=10 * n))
    assert reason == "converged"
    assert np.linalg.norm(x - xstar) <= 1e-3 * np.linalg.norm(xstar)
    objective = [r["objective"] for r in rows]
    assert all(b2 <= b1 + 1e-12 * abs(b1) for b1, b2 in zip(objective, objective[1:]))


def test_lbfgs_respects_iteration_cap():
    fun, _ = _quadratic(10)
    _, _, rows, reason, _ = lbfgs(fun, np.ones(10), lambda u, v: float(u @ v), LbfgsOptions(max_iters=2))
    assert reason == "max_iters" and len(rows) == 3


def test_lbfgs_at_stationary_point_stops_immediately():
    fun, xstar = _quadratic(4)
    x, _, rows, reason, n = lbfgs(fun, xstar, lambda u, v: float(u @ v), LbfgsOptions())
    # no decrease is resolvable at roundoff level, so the run ends at once
    assert len(rows) <= 2
    assert np.linalg.norm(x - xstar) <= 1e-12


def test_line_search_failure_is_reported():
    # gradient lies about the slope: no step satisfies sufficient decrease
    def fun(x):
        val = float(x @ x)
        return ObjectiveBreakdown(val, val, 0.0, 0.0), -x - 1.0

    x0 = np.ones(3)
    x, b, rows, reason, _ = lbfgs(fun, x0, lambda u, v: float(u @ v), LbfgsOptions(max_line_search=5))
    assert reason == "line_search_failed"
    assert b.total <= 3.0


def test_strong_wolfe_on_parabola():
    def phi(t):
        return (t - 2.0) ** 2, 2 * (t - 2.0), None

    t, f, _ = strong_wolfe(phi, 4.0, -4.0, 0.1, 1e-4, 0.1, 30)
    assert abs(2 * (t - 2.0)) <= 0.1 * 4.0
    assert f <= 4.0 - 1e-4 * t * 4.0


def test_minimize_decreases_objective_and_reports():
    p = _small_problem()
    u0 = default_initial_control(p, seed=0)
    r = minimize(p, u0, LbfgsOptions(max_iters=40))
    obj = [row["objective"] for row in r.log]
    assert obj[-1] < obj[0]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(obj, obj[1:]))
    assert r.report is not None and r.iterations == len(r.log) - 1
    assert set(r.log[0]) == {"iter", "objective", "terminal_term", "cost_term", "grad_norm", "step"}
    assert r.breakdown.total == pytest.approx(obj[-1])


def test_minimize_rejects_nonconforming_start():
    p = _small_problem()
    with pytest.raises(ConfigurationError):
        minimize(p, ControlMeasure(FrequencyGrid(np.array([1.0])), p.space, np.zeros((1, 1))))


def test_minimize_is_deterministic():
    p = _small_problem()
    u0 = default_initial_control(p, seed=5)
    a = minimize(p, u0, LbfgsOptions(max_iters=15))
    b = minimize(p, u0, LbfgsOptions(max_iters=15))
    assert a.log == b.log
    assert np.array_equal(a.measure.coeffs, b.measure.coeffs)


def test_default_initial_control_refuses_baselines():
    grid = TimeGrid(10.0, 20)
    op = make_operator("identity", FrequencyGrid(np.array([0.0])), grid)
    with pytest.raises(ConfigurationError):
        default_initial_control(Problem(build_three_level(), op, 0.1, cost="squared"), 0)


def test_multistart_keeps_lowest_objective():
    p = _small_problem()
    best, runs = multistart(p, [0, 1, 2], LbfgsOptions(max_iters=5))
    assert len(runs) == 3 and [r.seed for r in runs] == [0, 1, 2]
    assert best.breakdown.total == min(r.breakdown.total for r in runs)
    with pytest.raises(ConfigurationError):
        multistart(p, [], LbfgsOptions())


def test_multistart_parallel_matches_serial():
    p = _small_problem()
    opts = LbfgsOptions(max_iters=5)
    _, serial = multistart(p, [0, 1], opts)
    _, par = multistart(p, [0, 1], opts, jobs=2)
    assert [r.log for r in serial] == [r.log for r in par]


def test_single_stage_sweep_equals_minimize():
    p = _small_problem()
    opts = LbfgsOptions(max_iters=10, seed=2)
    sweep = continuation_sweep(p, [0.1], opts)
    direct = minimize(p, default_initial_control(p, 2), opts)
    assert sweep[0].log == direct.log


def test_sweep_warm_starts_and_validates(tmp_path):
    p = _small_problem()
    with pytest.raises(ConfigurationError):
        continuation_sweep(p, [0.2, 0.1])
    with pytest.raises(ConfigurationError):
        continuation_sweep(p, [])
    res = continuation_sweep(p, [0.05, 0.1], LbfgsOptions(max_iters=10))
    assert [r.breakdown.alpha for r in res] == [0.05, 0.1]
    assert res[1].log[0]["objective"] != res[0].log[0]["objective"]
    rows = sweep_rows(res)
    assert [r["alpha"] for r in rows] == [0.05, 0.1]
    write_sweep_csv(tmp_path / "sweep.csv", res)
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "alpha,terminal_term,support_size,measure_norm" and len(lines) == 3
    write_iteration_log(tmp_path / "it.csv", res[0].log)
    assert (tmp_path / "it.csv").read_text().splitlines()[0] == "iter,objective,terminal_term,cost_term,grad_norm,step"
