import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparseqc.dynamics import (ConfigurationError, InputError, TimeGrid, coupling_pairing, propagate,
                               propagate_adjoint, read_trajectory_csv, write_trajectory_csv)
from sparseqc.models import build_three_level, build_two_level, build_two_pes, TwoPesSpec

SYSTEMS = {
    "three_level": build_three_level(),
    "two_level": build_two_level(0.0, 3.0),
    "two_pes": build_two_pes(TwoPesSpec(n_x=32)),
}


def _field(system, grid, rng, scale):
    return scale * rng.standard_normal((grid.n_steps, system.n_controls))


# -- grid --

def test_time_grid_nodes_include_ends():
    g = TimeGrid(3.0, 6)
    t = g.nodes()
    assert t[0] == 0.0 and t[-1] == 3.0
    np.testing.assert_allclose(np.diff(t), 0.5)
    np.testing.assert_allclose(g.midpoints(), t[:-1] + 0.25)


@pytest.mark.parametrize("t_final,n", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5)])
def test_time_grid_rejects_bad_sizes(t_final, n):
    with pytest.raises(ConfigurationError):
        TimeGrid(t_final, n)


# -- propagation --

def test_zero_field_keeps_eigenstate_up_to_phase():
    s = SYSTEMS["three_level"]
    g = TimeGrid(100.0, 200)
    psi = propagate(s, np.zeros(g.n_steps), s.psi0, g)
    expected = np.exp(2j * 100.0) * s.psi0
    np.testing.assert_allclose(psi[-1], expected, atol=1e-12)
    assert abs(abs(np.vdot(s.psi0, psi[-1])) - 1) < 1e-12


@pytest.mark.parametrize("name", sorted(SYSTEMS))
@given(seed=st.integers(0, 2 ** 31), scale=st.floats(0.0, 5.0))
def test_norm_is_preserved(name, seed, scale):
    s = SYSTEMS[name]
    g = TimeGrid(10.0 if name != "two_pes" else 300.0, 50)
    rng = np.random.default_rng(seed)
    psi = propagate(s, _field(s, g, rng, scale), s.psi0, g)
    assert np.max(np.abs(np.linalg.norm(psi, axis=1) - 1)) <= 1e-10
    np.testing.assert_array_equal(psi[0], s.psi0)


@pytest.mark.parametrize("name", sorted(SYSTEMS))
def test_adjoint_retraces_state_for_identity_observable(name, rng):
    s = SYSTEMS[name]
    g = TimeGrid(10.0, 80)
    v = _field(s, g, rng, 1.0)
    psi = propagate(s, v, s.psi0, g)
    phi = propagate_adjoint(s, v, psi[-1], g)
    assert np.linalg.norm(phi[0] - s.psi0) <= 1e-10
    np.testing.assert_allclose(phi, psi, atol=1e-10)


@pytest.mark.parametrize("name", sorted(SYSTEMS))
def test_pairing_is_conserved_by_adjoint_sweep(name, rng):
    s = SYSTEMS[name]
    g = TimeGrid(10.0, 60)
    v = _field(s, g, rng, 1.0)
    psi = propagate(s, v, s.psi0, g)
    phi_t = rng.standard_normal(s.dimension) + 1j * rng.standard_normal(s.dimension)
    phi = propagate_adjoint(s, v, phi_t, g)
    pair = np.einsum("ij,ij->i", phi.conj(), psi)
    assert np.max(np.abs(pair - pair[-1])) <= 1e-10


@pytest.mark.parametrize("name", sorted(SYSTEMS))
def test_single_step_is_exactly_adjoint(name, rng):
    s = SYSTEMS[name]
    g = TimeGrid(5.0, 10)
    st_ = s.stepper(_field(s, g, rng, 2.0), g.step)
    d = s.dimension
    a = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    b = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    for j in (0, 5, 9):
        lhs = np.vdot(st_.forward(j, a), b)
        rhs = np.vdot(a, st_.backward(j, b))
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(a) * np.linalg.norm(b)


def test_strang_is_second_order():
    s = SYSTEMS["three_level"]
    T = 10.0

    def smooth(t):
        return 0.8 * np.sin(4.0 * t) + 0.5 * np.cos(3.0 * t) * np.sin(np.pi * t / T)

    def final(n):
        g = TimeGrid(T, n)
        return propagate(s, smooth(g.midpoints()), s.psi0, g)[-1]

    n = 200
    ref = final(16 * n)
    e1 = np.linalg.norm(final(n) - ref)
    e2 = np.linalg.norm(final(2 * n) - ref)
    assert 3.0 <= e1 / e2 <= 5.0


def test_rabi_transfer_matches_analytic_population():
    # v = A exp(i w t) with w = E1 - E2 is constant in the interaction frame: P2 = sin^2(A t)
    s = SYSTEMS["two_level"]
    A = 0.5
    T = np.pi / (2 * A)
    g = TimeGrid(T, 400)
    t = g.midpoints()
    w = 0.0 - 3.0
    psi = propagate(s, np.stack([A * np.cos(w * t), A * np.sin(w * t)], axis=1), s.psi0, g)
    np.testing.assert_allclose(np.abs(psi[:, 1]) ** 2, np.sin(A * g.nodes()) ** 2, atol=1e-9)


# -- errors --

def test_field_shape_mismatch_is_configuration_error():
    s = SYSTEMS["three_level"]
    with pytest.raises(ConfigurationError):
        propagate(s, np.zeros(7), s.psi0, TimeGrid(1.0, 8))
    with pytest.raises(ConfigurationError):
        propagate(SYSTEMS["two_level"], np.zeros(8), SYSTEMS["two_level"].psi0, TimeGrid(1.0, 8))


def test_non_finite_field_is_input_error():
    s = SYSTEMS["three_level"]
    v = np.zeros(8)
    v[3] = np.nan
    with pytest.raises(InputError):
        propagate(s, v, s.psi0, TimeGrid(1.0, 8))


def test_unnormalized_initial_state_is_input_error():
    s = SYSTEMS["three_level"]
    with pytest.raises(InputError):
        propagate(s, np.zeros(8), 2 * s.psi0, TimeGrid(1.0, 8))
    with pytest.raises(ConfigurationError):
        propagate(s, np.zeros(8), np.ones(2) / np.sqrt(2), TimeGrid(1.0, 8))


# -- pairing --

def test_coupling_pairing_vanishes_on_diagonal(rng):
    s = SYSTEMS["three_level"]
    psi = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
    np.testing.assert_allclose(coupling_pairing(s, psi, psi), 0.0, atol=1e-14)


def test_coupling_pairing_matrix_entries():
    s = SYSTEMS["three_level"]
    e1, e3 = np.eye(3, dtype=complex)[0], np.eye(3, dtype=complex)[2]
    assert coupling_pairing(s, e1, e3)[0] == pytest.approx(0.0, abs=1e-15)
    # Re(conj(i) * (-i) * (H1)_31) = Re(-1)
    assert coupling_pairing(s, e1, 1j * e3)[0] == pytest.approx(-1.0)


def test_coupling_pairing_rejects_mismatched_shapes():
    s = SYSTEMS["three_level"]
    with pytest.raises(ConfigurationError):
        coupling_pairing(s, np.zeros((4, 3)), np.zeros((5, 3)))


def test_sensitivity_approaches_node_pairing_under_refinement(rng):
    s = SYSTEMS["three_level"]
    T = 5.0
    errs = []
    for n in (100, 400):
        g = TimeGrid(T, n)
        v = np.sin(2.0 * g.midpoints())
        stp = s.stepper(v[:, None], g.step)
        psi = stp.run_forward(s.psi0)
        phi = stp.run_backward(s.observable_apply(psi[-1]))
        exact = stp.sensitivity(psi, phi)[:, 0]
        nodal = coupling_pairing(s, psi, phi)[:, 0]
        errs.append(np.max(np.abs(exact - 0.5 * (nodal[:-1] + nodal[1:]))))
    assert errs[1] < errs[0] / 8


# -- export --

def test_trajectory_csv_round_trip(tmp_path, rng):
    g = TimeGrid(1.0, 4)
    states = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, g, states)
    header = path.read_text().splitlines()[0]
    assert header == "t,re_0,im_0,re_1,im_1,re_2,im_2"
    t, back = read_trajectory_csv(path)
    np.testing.assert_allclose(t, g.nodes())
    np.testing.assert_array_equal(back, states)
