"""Time grids, the quantum-system interface and the Strang-split propagators.

One step of the forward propagator is

    psi_{j+1} = D C_j D psi_j,   D = exp(-i H0 dt/2),   C_j = exp(-i dt sum_l v_l(t_{j+1/2}) H_l)

and the backward (adjoint) propagator applies the conjugate transpose of the
same step, so gradients computed from the pair are exact derivatives of the
discrete forward map.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfigurationError(ValueError):
    """Shapes or sizes of inputs do not fit together."""


class InputError(ValueError):
    """Input values are not admissible (non-finite, unnormalized, ...)."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values or failed to make progress."""


@dataclass(frozen=True)
class TimeGrid:
    t_final: float
    n_steps: int

    def __post_init__(self):
        if not (self.t_final > 0 and np.isfinite(self.t_final)):
            raise ConfigurationError(f"t_final must be positive, got {self.t_final}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def step(self) -> float:
        return self.t_final / self.n_steps

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_steps + 1)

    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self.step


class QuantumSystem:
    """Bilinear dynamics ``i psi' = (H0 + sum_l v_l(t) H_l) psi``.

    Subclasses provide the operator actions and a `stepper` that realizes the
    Strang step for a whole sampled field.
    """

    dimension: int
    n_controls: int

    def apply_h0(self, psi):
        raise NotImplementedError

    def apply_coupling(self, l, psi):
        raise NotImplementedError

    def drift_step(self, dt, psi):
        raise NotImplementedError

    def observable_apply(self, psi):
        raise NotImplementedError

    def stepper(self, field, dt) -> "Stepper":
        raise NotImplementedError


class Stepper:
    """Forward/backward Strang steps for one fixed sampled field."""

    n_steps: int

    def forward(self, j, psi):
        raise NotImplementedError

    def backward(self, j, phi):
        """Apply the conjugate transpose of forward step ``j``."""
        raise NotImplementedError

    def run_forward(self, psi0):
        out = np.empty((self.n_steps + 1, psi0.shape[0]), dtype=complex)
        out[0] = psi = psi0
        for j in range(self.n_steps):
            out[j + 1] = psi = self.forward(j, psi)
        return out

    def run_backward(self, phi_final):
        out = np.empty((self.n_steps + 1, phi_final.shape[0]), dtype=complex)
        out[-1] = phi = phi_final
        for j in range(self.n_steps - 1, -1, -1):
            out[j] = phi = self.backward(j, phi)
        return out

    def sensitivity(self, psi, phi):
        """Exact field derivative of ``Re<phi_N, psi_N>`` per step.

        ``psi`` and ``phi`` are forward and backward node trajectories.  Returns
        ``g`` of shape (n_steps, L) with ``d Re<phi_N, psi_N> = sum_j g_j . dv_j dt``,
        i.e. an L2 density on the step midpoints.
        """
        raise NotImplementedError


def check_field(field, grid: TimeGrid, n_controls: int) -> np.ndarray:
    v = np.asarray(field, dtype=float)
    if v.ndim == 1 and n_controls == 1:
        v = v[:, None]
    if v.shape != (grid.n_steps, n_controls):
        raise ConfigurationError(
            f"field shape {v.shape} does not match (n_steps, L) = ({grid.n_steps}, {n_controls})"
        )
    if not np.all(np.isfinite(v)):
        raise InputError("field contains non-finite values")
    return v


def _check_state(system, psi0, normalized=True):
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (system.dimension,):
        raise ConfigurationError(f"state has shape {psi0.shape}, system dimension is {system.dimension}")
    if not np.all(np.isfinite(psi0)):
        raise InputError("state contains non-finite values")
    if normalized and abs(np.linalg.norm(psi0) - 1.0) > 1e-9:
        raise InputError(f"initial state must be normalized, norm = {np.linalg.norm(psi0)}")
    return psi0


def propagate(system: QuantumSystem, field, psi0, grid: TimeGrid, stepper=None) -> np.ndarray:
    """Forward trajectory, shape (n_steps + 1, dimension)."""
    psi0 = _check_state(system, psi0)
    if stepper is None:
        stepper = system.stepper(check_field(field, grid, system.n_controls), grid.step)
    return stepper.run_forward(psi0)


def propagate_adjoint(system: QuantumSystem, field, phi_final, grid: TimeGrid, stepper=None) -> np.ndarray:
    """Backward trajectory with ``phi[-1] = phi_final``, shape (n_steps + 1, dimension)."""
    phi_final = _check_state(system, phi_final, normalized=False)
    if stepper is None:
        stepper = system.stepper(check_field(field, grid, system.n_controls), grid.step)
    return stepper.run_backward(phi_final)


def coupling_pairing(system: QuantumSystem, psi: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Node-wise ``g_l(t_j) = Re<phi(t_j), -i H_l psi(t_j)>``, shape (n_nodes, L).

    This is the continuous-time integrand of the field derivative evaluated on
    the nodes.  The optimizer uses `Stepper.sensitivity` instead, which is the
    exact derivative of the discrete propagator.
    """
    psi = np.asarray(psi)
    phi = np.asarray(phi)
    if psi.shape != phi.shape:
        raise ConfigurationError(f"trajectory shapes differ: {psi.shape} vs {phi.shape}")
    psi2 = np.atleast_2d(psi)
    phi2 = np.atleast_2d(phi)
    g = np.empty((psi2.shape[0], system.n_controls))
    for l in range(system.n_controls):
        h_psi = np.array([system.apply_coupling(l, p) for p in psi2])
        g[:, l] = np.real(np.sum(np.conj(phi2) * (-1j) * h_psi, axis=1))
    return g if psi.ndim == 2 else g[0]


def write_trajectory_csv(path, grid: TimeGrid, states: np.ndarray) -> None:
    """CSV with columns t, re_0, im_0, re_1, im_1, ..."""
    states = np.asarray(states)
    header = ["t"]
    for k in range(states.shape[1]):
        header += [f"re_{k}", f"im_{k}"]
    rows = np.empty((states.shape[0], 1 + 2 * states.shape[1]))
    rows[:, 0] = grid.nodes()
    rows[:, 1::2] = states.real
    rows[:, 2::2] = states.imag
    from .io import atomic_writer

    with atomic_writer(Path(path)) as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows.tolist())


def read_trajectory_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1::2] + 1j * data[:, 2::2]
