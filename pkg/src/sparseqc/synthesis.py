"""Control operators B (measure -> real field on step midpoints) and their exact adjoints.

The adjoint is taken with respect to the discrete L2 pairing ``sum_j f_j v_j dt``
on fields and the envelope-space inner product on atoms, so that

    sum_w <(B* f)_w, u_w>_U == sum_j f_j (B u)_j dt

holds to roundoff for every kind.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .control import ControlMeasure, EnvelopeSpace, FrequencyGrid
from .dynamics import ConfigurationError, TimeGrid
from .io import atomic_writer

KINDS = ("two_scale", "dual_gabor", "kernel_space", "fourier", "gabor_tf", "identity")

# kind -> admissible envelope spaces
PAIRINGS = {
    "two_scale": ("h1_0",),
    "dual_gabor": ("l2",),
    "kernel_space": ("kernel_weighted",),
    "fourier": ("scalar",),
    "gabor_tf": ("scalar",),
    "identity": ("l2", "h1_0"),
}


@dataclass(frozen=True)
class GaborWindow:
    """Gaussian window ``k(t, s) = exp(-(t - s)^2 / (2 sigma^2))`` on [0, T].

    With ``taper`` the kernel becomes ``b(t) k(t, s) b(s)`` where ``b`` rises as a
    quarter sine from 0 at the interval ends to 1 over a width of 2 sigma, so
    windowed envelopes vanish at t = 0 and t = T.
    """

    sigma: float
    t_final: float
    taper: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError(f"window width sigma must be positive, got {self.sigma}")

    def boundary_factor(self, t):
        t = np.asarray(t, dtype=float)
        if not self.taper:
            return np.ones_like(t)
        ramp = min(2 * self.sigma, 0.5 * self.t_final)
        x = np.clip(np.minimum(t, self.t_final - t) / ramp, 0.0, 1.0)
        return np.sin(0.5 * np.pi * x)

    def __call__(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        k = np.exp(-((t - s) ** 2) / (2 * self.sigma ** 2))
        if self.taper:
            k = k * (self.boundary_factor(t) * self.boundary_factor(s))
        return k

    def matrix(self, t, s=None) -> np.ndarray:
        s = t if s is None else s
        return self(np.asarray(t)[:, None], np.asarray(s)[None, :])


def build_window(grid: TimeGrid, sigma: float, taper: bool = False) -> GaborWindow:
    return GaborWindow(float(sigma), grid.t_final, taper)


def trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    q = np.full(grid.n_steps + 1, grid.step)
    q[[0, -1]] *= 0.5
    return q


class SynthesisOperator:
    """Linear map from `ControlMeasure` to a real field sampled at step midpoints."""

    def __init__(self, kind: str, freq_grid: FrequencyGrid, time_grid: TimeGrid, space: EnvelopeSpace,
                 window: Optional[GaborWindow] = None):
        if kind not in KINDS:
            raise ConfigurationError(f"unknown operator kind {kind!r}; expected one of {KINDS}")
        if space.kind not in PAIRINGS[kind]:
            raise ConfigurationError(
                f"operator {kind!r} cannot be paired with envelope space {space.kind!r} "
                f"(allowed: {PAIRINGS[kind]})")
        if (kind == "gabor_tf") != freq_grid.is_tensor:
            raise ConfigurationError("gabor_tf needs a frequency x time grid; other kinds a frequency grid")
        if kind == "identity" and freq_grid.n_atoms != 1:
            raise ConfigurationError("identity operator carries exactly one atom (the field itself)")
        if kind in ("dual_gabor", "gabor_tf") and window is None:
            raise ConfigurationError(f"operator {kind!r} needs a window")
        if space.kind != "scalar" and space.grid != time_grid:
            raise ConfigurationError("envelope space and operator use different time grids")
        self.kind = kind
        self.freq_grid = freq_grid
        self.time_grid = time_grid
        self.space = space
        self.window = window
        tm = time_grid.midpoints()
        self.dt = time_grid.step
        if kind in ("two_scale", "dual_gabor", "kernel_space", "fourier"):
            self._phase = np.exp(1j * np.outer(freq_grid.omegas, tm))  # (K, N)
            self._phase_c = self._phase.conj()
        if kind == "dual_gabor":
            nodes = time_grid.nodes()
            self._smooth = window.matrix(tm, nodes) * trapezoid_weights(time_grid)[None, :]  # (N, N+1)
        if kind == "gabor_tf":
            om = freq_grid.atom_omegas()[:, None]
            sc = freq_grid.atom_centers()[:, None]
            self._packets = window(tm[None, :], sc) * np.exp(1j * om * (tm[None, :] - sc))  # (A, N)

    def __repr__(self):
        return f"SynthesisOperator({self.kind!r}, atoms={self.freq_grid.n_atoms}, space={self.space.kind!r})"

    def _midpoint_values(self, u):
        return 0.5 * (u[:, :-1] + u[:, 1:])

    def apply(self, coeffs) -> np.ndarray:
        """Field values at the step midpoints, shape (n_steps,)."""
        u = np.asarray(coeffs)
        k = self.kind
        if k == "fourier":
            return np.real(u[:, 0] @ self._phase)
        if k == "gabor_tf":
            return np.real(u[:, 0] @ self._packets)
        if k == "identity":
            return np.real(self._midpoint_values(u)[0])
        if k == "dual_gabor":
            env = u @ self._smooth.T
        else:
            env = self._midpoint_values(u)
        return np.real(np.sum(env * self._phase, axis=0))

    def covector(self, f) -> np.ndarray:
        """``c`` with ``sum_j f_j (B du)_j dt = Re sum conj(c) du`` for all ``du``."""
        fd = np.asarray(f, dtype=float).reshape(-1) * self.dt
        if fd.shape != (self.time_grid.n_steps,):
            raise ConfigurationError(f"field has {fd.size} samples, expected {self.time_grid.n_steps}")
        k = self.kind
        if k == "fourier":
            return (self._phase_c @ fd)[:, None]
        if k == "gabor_tf":
            return (self._packets.conj() @ fd)[:, None]
        if k == "identity":
            w = fd[None, :].astype(complex)
        else:
            w = self._phase_c * fd[None, :]
        if k == "dual_gabor":
            return w @ self._smooth
        c = np.zeros((w.shape[0], w.shape[1] + 1), dtype=complex)
        c[:, :-1] += 0.5 * w
        c[:, 1:] += 0.5 * w
        return c

    def adjoint(self, f) -> np.ndarray:
        """Riesz representatives ``(B* f)_w`` in U, shape (n_atoms, n_nodes)."""
        c = self.covector(f)
        if self.kind == "identity":
            c = c.real.astype(complex)
        return self.space.riesz(c)


def make_operator(kind: str, freq_grid: FrequencyGrid, time_grid: TimeGrid, sigma: Optional[float] = None,
                  identity_space: str = "l2", kernel_nugget: float = 1e-8) -> SynthesisOperator:
    """Build an operator with its sanctioned envelope space."""
    window = None
    if kind == "two_scale":
        space = EnvelopeSpace("h1_0", time_grid)
    elif kind == "dual_gabor":
        window = build_window(time_grid, sigma, taper=True)
        space = EnvelopeSpace("l2", time_grid)
    elif kind == "kernel_space":
        window = build_window(time_grid, sigma)
        space = EnvelopeSpace("kernel_weighted", time_grid, kernel=kernel_matrix(time_grid, window, kernel_nugget))
    elif kind in ("fourier", "gabor_tf"):
        if kind == "gabor_tf":
            window = build_window(time_grid, sigma)
        space = EnvelopeSpace("scalar")
    elif kind == "identity":
        space = EnvelopeSpace(identity_space, time_grid)
    else:
        raise ConfigurationError(f"unknown operator kind {kind!r}")
    return SynthesisOperator(kind, freq_grid, time_grid, space, window)


def kernel_matrix(grid: TimeGrid, window: GaborWindow, nugget: float = 1e-8) -> np.ndarray:
    """Discretized convolution ``dt k(t_i, t_j)`` plus a relative diagonal shift.

    The sampled Gaussian is numerically singular; the shift ``nugget * ||K||``
    keeps the Cholesky factor (and hence the U inner product) well defined.
    """
    t = grid.nodes()
    k = window.matrix(t) * grid.step
    lam_max = np.abs(k).sum(axis=1).max()
    return k + nugget * lam_max * np.eye(t.size)


def synthesize(op: SynthesisOperator, u: ControlMeasure) -> np.ndarray:
    if u.grid is not op.freq_grid and not np.array_equal(u.grid.atom_omegas(), op.freq_grid.atom_omegas()):
        raise ConfigurationError("measure lives on a different frequency grid than the operator")
    if u.space.n_nodes != op.space.n_nodes or not op.space.conforms(u.coeffs):
        raise ConfigurationError("measure does not conform to the operator's envelope space")
    return op.apply(u.coeffs)


def adjoint_synthesize(op: SynthesisOperator, f) -> ControlMeasure:
    return ControlMeasure(op.freq_grid, op.space, op.adjoint(f))


def fourier_coefficients(field, grid: TimeGrid, omegas) -> np.ndarray:
    """``int_0^T f(t) exp(-i w t) dt`` by the midpoint rule."""
    tm = grid.midpoints()
    return np.exp(-1j * np.outer(omegas, tm)) @ (np.asarray(field, dtype=float).reshape(-1) * grid.step)


def spectrogram(field, grid: TimeGrid, omegas, centers, sigma) -> np.ndarray:
    """``|(B* f)(w, s)|`` for the Gabor wave-packet operator, shape (len(omegas), len(centers))."""
    fg = FrequencyGrid(np.asarray(omegas, dtype=float), np.asarray(centers, dtype=float))
    op = make_operator("gabor_tf", fg, grid, sigma=sigma)
    return np.abs(op.adjoint(field)[:, 0]).reshape(len(omegas), len(centers))


def write_spectrogram_csv(path, omegas, centers, values) -> None:
    """Matrix CSV: header ``omega, <centres...>``, one row per frequency."""
    with atomic_writer(path) as fh:
        w = csv.writer(fh)
        w.writerow(["omega"] + [repr(float(c)) for c in centers])
        for om, row in zip(omegas, values):
            w.writerow([repr(float(om))] + [repr(float(x)) for x in row])
