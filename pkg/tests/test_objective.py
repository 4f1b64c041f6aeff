import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparseqc.control import ControlMeasure, FrequencyGrid
from sparseqc.dynamics import ConfigurationError, NumericalError, TimeGrid
from sparseqc.experiments import gradient_check, random_control
from sparseqc.models import TwoPesSpec, build_three_level, build_two_level, build_two_pes
from sparseqc.objective import (Problem, evaluate, fd_gradient_oracle, gradient, optimality_report, smooth_gradient,
                                value_and_gradient)
from sparseqc.synthesis import KINDS, make_operator

GRID = TimeGrid(10.0, 200)
BAND = FrequencyGrid.uniform(2.0, 5.0, 6)
SYSTEM = build_three_level()


def problem(kind="two_scale", alpha=0.1, theta=1e-3, system=SYSTEM, grid=GRID, identity_space="l2"):
    if kind == "gabor_tf":
        fg = FrequencyGrid(BAND.omegas, np.linspace(0, grid.t_final, 4))
        op = make_operator(kind, fg, grid, sigma=2.5)
    elif kind == "identity":
        op = make_operator(kind, FrequencyGrid(np.array([0.0])), grid, identity_space=identity_space)
    else:
        op = make_operator(kind, BAND, grid, sigma=2.0)
    return Problem(system, op, alpha, theta, "squared" if kind == "identity" else "huber")


PROBLEMS = {k: problem(k) for k in KINDS}


def test_problem_validation():
    op = PROBLEMS["fourier"].operator
    with pytest.raises(ConfigurationError):
        Problem(SYSTEM, op, -1.0)
    with pytest.raises(ConfigurationError):
        Problem(SYSTEM, op, 0.1, theta=0.0)
    with pytest.raises(ConfigurationError):
        Problem(SYSTEM, op, 0.1, cost="l1")
    with pytest.raises(ConfigurationError):
        Problem(build_two_level(0, 1), op, 0.1)


def test_zero_control_breakdown():
    for p in PROBLEMS.values():
        b, _ = evaluate(p, p.zero_control())
        assert b.terminal_term == pytest.approx(0.5, abs=1e-12)
        assert b.cost_term == 0.0 and b.total == b.terminal_term


def test_control_shape_checked():
    p = PROBLEMS["fourier"]
    with pytest.raises(ConfigurationError):
        evaluate(p, np.zeros((3, 1)))


def test_huber_cost_scaling_for_large_atoms(rng):
    p = PROBLEMS["fourier"]
    u = random_control(p, rng, 1.0)
    c1 = evaluate(p, u)[0].cost_term
    c2 = evaluate(p, 2 * u)[0].cost_term
    n = p.operator.freq_grid.n_atoms
    assert abs(c2 - 2 * c1) <= n * p.alpha * p.theta / 2 * (1 + 1e-9)


def test_squared_cost_for_baseline(rng):
    p = PROBLEMS["identity"]
    u = random_control(p, rng, 0.3)
    assert evaluate(p, u)[0].cost_term == pytest.approx(p.alpha * 0.09)


@pytest.mark.parametrize("kind", KINDS)
@given(seed=st.integers(0, 2 ** 31), norm=st.floats(1e-3, 3.0))
def test_terminal_term_is_bounded_for_projector(kind, seed, norm):
    p = PROBLEMS[kind]
    u = random_control(p, np.random.default_rng(seed), norm)
    b, _ = evaluate(p, u)
    assert -1e-12 <= b.terminal_term <= 0.5 + 1e-12
    assert b.total == b.terminal_term + b.cost_term


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_matches_finite_differences(kind):
    assert gradient_check(PROBLEMS[kind], n_directions=5, seed=3) <= 1e-5


def test_gradient_matches_finite_differences_on_two_surface_model():
    sys_ = build_two_pes(TwoPesSpec(n_x=32))
    grid = TimeGrid(600.0, 150)
    op = make_operator("fourier", FrequencyGrid.uniform(1 / 30, 1 / 10, 5), grid)
    assert gradient_check(Problem(sys_, op, 3e-3, 1e-5), n_directions=5) <= 1e-5


def test_gradient_at_zero_is_smooth_part():
    p = PROBLEMS["two_scale"]
    g = gradient(p, p.zero_control())
    bg = smooth_gradient(p, p.zero_control().coeffs)
    np.testing.assert_array_equal(g.coeffs, bg)
    np.testing.assert_allclose(g.atom_norms(), p.space.norms(bg), rtol=1e-12)


def test_zero_coupling_leaves_pure_huber_gradient(rng):
    # observable = 0 gives phi = 0, so the adjoint pairing vanishes
    from sparseqc.models import FiniteLevelSystem, THREE_LEVEL_H0, THREE_LEVEL_H1, THREE_LEVEL_PSI0

    s = FiniteLevelSystem(THREE_LEVEL_H0, THREE_LEVEL_H1, np.zeros((3, 3)), psi0=THREE_LEVEL_PSI0)
    base = PROBLEMS["dual_gabor"]
    p = Problem(s, base.operator, base.alpha, base.theta)
    u = random_control(p, rng, 0.1)
    g = gradient(p, u)
    norms = p.space.norms(u)
    np.testing.assert_allclose(g.coeffs, p.alpha / np.maximum(norms, p.theta)[:, None] * u, atol=1e-15)


def test_value_and_gradient_is_consistent_with_evaluate(rng):
    p = PROBLEMS["kernel_space"]
    u = random_control(p, rng, 0.05)
    b1, _ = evaluate(p, u)
    b2, _, cache = value_and_gradient(p, u)
    assert b1 == b2
    np.testing.assert_allclose(cache.phi[-1], p.system.observable_apply(cache.psi[-1]))


def test_non_finite_control_raises():
    p = PROBLEMS["fourier"]
    u = np.full((p.operator.freq_grid.n_atoms, 1), np.nan, complex)
    with pytest.raises(Exception):
        evaluate(p, u)


# -- optimality report --

def test_zero_is_kkt_point_for_large_alpha():
    p = PROBLEMS["two_scale"]
    d0 = p.space.norms(smooth_gradient(p, p.zero_control().coeffs)).max()
    q = p.with_alpha(2 * d0)
    rep = optimality_report(q, q.zero_control())
    assert rep.ok and rep.support.size == 0
    assert rep.max_dual == pytest.approx(d0)


def test_report_flags_dual_bound_violation():
    p = PROBLEMS["two_scale"]
    d0 = p.space.norms(smooth_gradient(p, p.zero_control().coeffs)).max()
    rep = optimality_report(p.with_alpha(0.5 * d0), p.zero_control())
    assert not rep.ok and rep.dual_bound_violations.size > 0


def test_report_flags_misaligned_support(rng):
    p = PROBLEMS["fourier"]
    u = random_control(p, rng, 10 * p.theta)
    rep = optimality_report(p, u)
    assert rep.support.size == p.operator.freq_grid.n_atoms
    assert rep.direction_violations.size > 0 or rep.support_rule_violations.size > 0


def test_report_json(tmp_path, rng):
    p = PROBLEMS["gabor_tf"]
    rep = optimality_report(p, random_control(p, rng, 1e-2))
    rep.to_json(tmp_path / "o.json")
    data = json.loads((tmp_path / "o.json").read_text())
    assert len(data["omega"]) == len(data["dual_norm"]) == len(data["t_center"]) == p.operator.freq_grid.n_atoms
    assert data["ok"] == rep.ok


def test_report_for_squared_cost_checks_stationarity(rng):
    p = PROBLEMS["identity"]
    rep = optimality_report(p, p.zero_control())
    assert rep.support.size == 0 and rep.ok


# -- finite-difference oracle --

def test_fd_oracle_is_exact_on_quadratic(rng):
    a = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    u = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    d = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))

    def f(x):
        return float(np.sum(np.abs(x) ** 2) + np.real(np.vdot(a, x)))

    exact = float(2 * np.real(np.vdot(u, d)) + np.real(np.vdot(a, d)))
    assert fd_gradient_oracle(f, u, d, steps=(1e-2, 5e-3)) == pytest.approx(exact, rel=1e-12)


def test_fd_oracle_checks_shapes_and_finiteness():
    with pytest.raises(ConfigurationError):
        fd_gradient_oracle(lambda x: 0.0, np.zeros(3), np.zeros(4))
    with pytest.raises(NumericalError):
        fd_gradient_oracle(lambda x: np.nan, np.zeros(3), np.ones(3))
