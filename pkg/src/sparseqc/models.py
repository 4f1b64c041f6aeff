"""Concrete quantum systems: finite-level atoms/spins and a 1-D two-surface molecule."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import ConfigurationError, InputError, QuantumSystem, Stepper


def _herm_exp(eigvals, eigvecs, scale):
    """``exp(scale * A)`` for ``A = V diag(eigvals) V^H``."""
    return (eigvecs * np.exp(scale * eigvals)) @ eigvecs.conj().T


class FiniteLevelSystem(QuantumSystem):
    """Dense finite-dimensional system with Hermitian H0, couplings and observable."""

    def __init__(self, h0, couplings, observable, psi0=None, name="finite"):
        self.h0 = np.asarray(h0, dtype=complex)
        self.couplings = np.asarray(couplings, dtype=complex)
        if self.couplings.ndim == 2:
            self.couplings = self.couplings[None]
        self.observable = np.asarray(observable, dtype=complex)
        d = self.h0.shape[0]
        if self.h0.shape != (d, d) or self.couplings.shape[1:] != (d, d) or self.observable.shape != (d, d):
            raise ConfigurationError("operator shapes are inconsistent")
        for name_, op in [("H0", self.h0), ("observable", self.observable), *[
                (f"H{l + 1}", c) for l, c in enumerate(self.couplings)]]:
            if not np.allclose(op, op.conj().T, atol=1e-14):
                raise InputError(f"{name_} is not Hermitian")
        self.dimension = d
        self.n_controls = self.couplings.shape[0]
        self.psi0 = None if psi0 is None else np.asarray(psi0, dtype=complex)
        self.name = name
        self._e0, self._v0 = np.linalg.eigh(self.h0)
        self._diag_h0 = np.allclose(self.h0, np.diag(np.diag(self.h0)))
        if self.n_controls == 1:
            self._e1, self._v1 = np.linalg.eigh(self.couplings[0])

    def apply_h0(self, psi):
        return self.h0 @ psi

    def apply_coupling(self, l, psi):
        return self.couplings[l] @ psi

    def drift_step(self, dt, psi):
        if self._diag_h0:
            return np.exp(-1j * dt * np.diag(self.h0).real) * psi
        return _herm_exp(self._e0, self._v0, -1j * dt) @ psi

    def observable_apply(self, psi):
        return self.observable @ psi

    def energies(self):
        return self._e0.copy()

    def stepper(self, field, dt):
        return _DenseStepper(self, np.asarray(field, dtype=float), dt)


class _DenseStepper(Stepper):
    def __init__(self, system: FiniteLevelSystem, field, dt):
        self.system = system
        self.field = field
        self.dt = dt
        self.n_steps = field.shape[0]
        self.half = _herm_exp(system._e0, system._v0, -0.5j * dt)
        if system.n_controls == 1:
            w, e = system._v1, system._e1
            phases = np.exp(-1j * dt * field[:, 0:1] * e[None, :])  # (N, d)
            self.coupling = np.einsum("ik,nk,jk->nij", w, phases, w.conj())
            self._eig = None
        else:
            m = np.einsum("nl,lij->nij", field, system.couplings)
            lam, vec = np.linalg.eigh(m)
            self._eig = (lam, vec)
            self.coupling = np.einsum("nik,nk,njk->nij", vec, np.exp(-1j * dt * lam), vec.conj())
        self.steps = self.half @ self.coupling @ self.half
        self.steps_h = np.conj(np.swapaxes(self.steps, 1, 2))

    def forward(self, j, psi):
        return self.steps[j] @ psi

    def backward(self, j, phi):
        return self.steps_h[j] @ phi

    def sensitivity(self, psi, phi):
        sysm = self.system
        a = psi[:-1] @ self.half.T  # D psi_j
        x = phi[1:] @ self.half.conj()  # D^H phi_{j+1}
        if self._eig is None:
            b = np.einsum("nij,nj->ni", self.coupling, a)
            hb = b @ sysm.couplings[0].T
            return np.real(np.sum(np.conj(x) * (-1j) * hb, axis=1))[:, None]
        # Daleckii-Krein derivative of exp(-i dt M) in the eigenbasis of M
        lam, vec = self._eig
        f = np.exp(-1j * self.dt * lam)
        diff = lam[:, :, None] - lam[:, None, :]
        same = np.abs(diff) < 1e-12
        safe = np.where(same, 1.0, diff)
        ratio = np.where(same, -1j * self.dt * f[:, :, None], (f[:, :, None] - f[:, None, :]) / safe)
        xa = np.einsum("nki,nk->ni", vec.conj(), x)
        aa = np.einsum("nki,nk->ni", vec.conj(), a)
        g = np.empty((self.n_steps, sysm.n_controls))
        for l in range(sysm.n_controls):
            hl = np.einsum("nki,kl,nlj->nij", vec.conj(), sysm.couplings[l], vec)
            g[:, l] = np.real(np.einsum("ni,nij,nj->n", xa.conj(), ratio * hl, aa)) / self.dt
        return g


THREE_LEVEL_H0 = np.diag([-2.0, -1.0, 2.0])
THREE_LEVEL_H1 = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
THREE_LEVEL_PSI0 = np.array([1.0, 0.0, 0.0], dtype=complex)
THREE_LEVEL_OBSERVABLE = np.diag([1.0, 1.0, 0.0])


def build_three_level(target_level: int = 3) -> FiniteLevelSystem:
    """1s, 2s, 3p model: forbidden 1<->2, allowed 1<->3 and 2<->3 transitions.

    The observable penalizes every level except ``target_level`` (1-based).
    The default target 3 gives ``diag(1, 1, 0)``; target 2 gives ``diag(1, 0, 1)``,
    which is reached from level 1 only through the ladder 1 -> 3 -> 2 and so
    needs both Bohr frequencies 4 and 3.
    """
    if target_level not in (1, 2, 3):
        raise ConfigurationError(f"target_level must be 1, 2 or 3, got {target_level}")
    obs = np.eye(3)
    obs[target_level - 1, target_level - 1] = 0.0
    return FiniteLevelSystem(THREE_LEVEL_H0, THREE_LEVEL_H1, obs,
                             psi0=THREE_LEVEL_PSI0, name="three_level")


PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, -1j], [1j, 0.0]])


def build_two_level(e1: float, e2: float) -> FiniteLevelSystem:
    """Spin/two-level model with complex control split as ``v = v_1 + i v_2``.

    The coupling ``[[0, conj(v)], [v, 0]]`` equals ``v_1 sigma_x + v_2 sigma_y``.
    The observable projects onto the lower level.
    """
    if e1 == e2:
        raise InputError("two-level energies must differ")
    return FiniteLevelSystem(np.diag([e1, e2]), np.stack([PAULI_X, PAULI_Y]),
                             np.diag([1.0, 0.0]), psi0=np.array([1.0, 0.0], dtype=complex),
                             name="two_level")


@dataclass
class TwoPesSpec:
    """Two diabatic surfaces on a 1-D nuclear coordinate.

    Lower surface: tilted double well ``a (x^2 - b^2)^2 + tilt x`` with
    ``a = barrier / b^4``.  Upper surface: harmonic well ``e0 + k (x - x0)^2 / 2``
    whose offset ``e0`` and centre ``x0`` are calibrated so that the vertical
    gaps at the two grid minima of the lower surface hit ``gap_left`` and
    ``gap_right``.
    """

    x_min: float = -4.0
    x_max: float = 4.0
    n_x: int = 256
    mass: float = 2000.0
    barrier: float = 0.016
    well_position: float = 2.0
    tilt: float = 0.0015
    upper_curvature: float = 0.015
    gap_left: float = 0.074
    gap_right: float = 0.048
    mu11: float = 0.0
    mu12: float = 1.0
    mu22: float = 0.0
    psi0_center: Optional[float] = None
    psi0_width: Optional[float] = None
    lower_surface_csv: Optional[str] = None
    upper_surface_csv: Optional[str] = None

    def __post_init__(self):
        if self.n_x < 16:
            raise ConfigurationError(f"n_x must be at least 16, got {self.n_x}")
        if not self.x_max > self.x_min:
            raise ConfigurationError("x_max must exceed x_min")
        if self.mass <= 0:
            raise ConfigurationError("mass must be positive")

    def grid(self) -> np.ndarray:
        """Interior nodes; the Dirichlet nodes ``x_min`` and ``x_max`` are excluded."""
        h = (self.x_max - self.x_min) / (self.n_x + 1)
        return self.x_min + h * np.arange(1, self.n_x + 1)

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x + 1)

    def lower_surface(self) -> np.ndarray:
        x = self.grid()
        if self.lower_surface_csv:
            return load_surface_csv(self.lower_surface_csv, x)
        a = self.barrier / self.well_position ** 4
        return a * (x ** 2 - self.well_position ** 2) ** 2 + self.tilt * x

    def upper_surface(self) -> np.ndarray:
        x = self.grid()
        if self.upper_surface_csv:
            return load_surface_csv(self.upper_surface_csv, x)
        e0, x0 = self.calibration()
        return e0 + 0.5 * self.upper_curvature * (x - x0) ** 2

    def calibration(self) -> tuple[float, float]:
        """Offset ``e0`` and centre ``x0`` of the upper well (linear solve)."""
        x = self.grid()
        e1 = self.lower_surface()
        il, ir = lower_minima(e1)[:2]
        xl, xr = x[il], x[ir]
        k = self.upper_curvature
        x0 = 0.5 * (xl + xr) - (self.gap_left - self.gap_right + e1[il] - e1[ir]) / (k * (xl - xr))
        e0 = self.gap_left + e1[il] - 0.5 * k * (xl - x0) ** 2
        return float(e0), float(x0)

    def dipoles(self):
        n = self.n_x
        return (np.full(n, self.mu11), np.full(n, self.mu12), np.full(n, self.mu22))

    def barrier_index(self) -> int:
        e1 = self.lower_surface()
        il, ir = lower_minima(e1)[:2]
        return il + int(np.argmax(e1[il:ir + 1]))

    def initial_state(self) -> np.ndarray:
        """Gaussian on the lower surface centred in the left well."""
        x = self.grid()
        e1 = self.lower_surface()
        il = lower_minima(e1)[0]
        center = x[il] if self.psi0_center is None else self.psi0_center
        width = self.psi0_width
        if width is None:
            # harmonic ground state width from the discrete curvature at the minimum
            h = self.spacing
            curv = (e1[il + 1] - 2 * e1[il] + e1[il - 1]) / h ** 2
            width = (self.mass * np.sqrt(curv / self.mass)) ** -0.5
        phi = np.exp(-0.5 * ((x - center) / width) ** 2)
        psi = np.concatenate([phi, np.zeros_like(phi)]).astype(complex)
        return psi / np.linalg.norm(psi)

    def observable_mask(self) -> np.ndarray:
        """Diagonal of the projector: zero on lower-surface nodes right of the barrier."""
        n = self.n_x
        mask = np.ones(2 * n)
        mask[self.barrier_index() + 1:n] = 0.0
        return mask

    def replace(self, **changes) -> "TwoPesSpec":
        return dataclasses.replace(self, **changes)


def load_surface_csv(path, x) -> np.ndarray:
    """Two-column CSV (x, E), linearly interpolated onto ``x``."""
    data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    if data.shape[1] < 2:
        raise InputError(f"{path}: expected two columns (x, E)")
    order = np.argsort(data[:, 0])
    vals = np.interp(x, data[order, 0], data[order, 1])
    if not np.all(np.isfinite(vals)):
        raise InputError(f"{path}: non-finite surface values")
    return vals


def lower_minima(e1) -> list[int]:
    """Indices of strict interior local minima, left to right."""
    e1 = np.asarray(e1)
    idx = [k for k in range(1, len(e1) - 1) if e1[k] < e1[k - 1] and e1[k] <= e1[k + 1]]
    if len(idx) < 2:
        raise ConfigurationError(f"expected two local minima on the lower surface, found {len(idx)}")
    return idx


def kinetic_matrix(n_x, spacing, mass) -> np.ndarray:
    """``-(1/2m) d^2/dx^2`` with the 3-point stencil and Dirichlet ends."""
    lap = (np.diag(np.full(n_x - 1, 1.0), -1) - 2 * np.eye(n_x) + np.diag(np.full(n_x - 1, 1.0), 1))
    return -lap / (2.0 * mass * spacing ** 2)


class TwoPesSystem(QuantumSystem):
    """State layout ``[Phi_1 (lower), Phi_2 (upper)]`` on the interior grid."""

    def __init__(self, spec: TwoPesSpec):
        self.spec = spec
        n = spec.n_x
        self.x = spec.grid()
        self.e_lower = spec.lower_surface()
        self.e_upper = spec.upper_surface()
        if not (np.all(np.isfinite(self.e_lower)) and np.all(np.isfinite(self.e_upper))):
            raise InputError("surface values must be finite")
        self.mu11, self.mu12, self.mu22 = spec.dipoles()
        self.kinetic = kinetic_matrix(n, spec.spacing, spec.mass)
        blocks = [self.kinetic + np.diag(self.e_lower), self.kinetic + np.diag(self.e_upper)]
        eig = [np.linalg.eigh(b) for b in blocks]
        self.block_energies = np.stack([e for e, _ in eig])  # (2, n)
        self.block_vectors = np.stack([v for _, v in eig])  # (2, n, n)
        self._vt = np.ascontiguousarray(np.swapaxes(self.block_vectors, 1, 2))
        self.mask = spec.observable_mask()
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise InputError("observable is not a projector")
        self.psi0 = spec.initial_state()
        self.dimension = 2 * n
        self.n_controls = 1
        self.n_x = n
        self.name = "two_pes"

    def apply_h0(self, psi):
        p = psi.reshape(2, self.n_x)
        out = p @ self.kinetic.T + np.stack([self.e_lower, self.e_upper]) * p
        return out.reshape(-1)

    def apply_coupling(self, l, psi):
        if l != 0:
            raise IndexError(l)
        p1, p2 = psi[:self.n_x], psi[self.n_x:]
        return np.concatenate([self.mu11 * p1 + self.mu12 * p2, self.mu12 * p1 + self.mu22 * p2])

    def observable_apply(self, psi):
        return self.mask * psi

    def to_eigen(self, psi):
        """Coefficients in the eigenbases of the two surface Hamiltonians."""
        return self._transform(psi, self._vt)

    def from_eigen(self, coef):
        return self._transform(coef, self.block_vectors)

    def _transform(self, psi, mats):
        n = self.n_x
        if psi.ndim == 1:
            # (2, n, n) @ (2, n, 2) on the real/imag columns
            p = np.ascontiguousarray(psi).view(float).reshape(2, n, 2)
            return np.matmul(mats, p).reshape(-1).view(complex)
        p = psi.reshape(psi.shape[0], 2, n)
        out = np.empty_like(p)
        for s in (0, 1):
            out[:, s] = _rmul(p[:, s], mats[s].T)
        return out.reshape(psi.shape)

    def _drift(self, phases, psi):
        """``V diag(phases) V^T`` per surface; ``psi`` may be (dim,) or (m, dim)."""
        return self.from_eigen(self.to_eigen(psi) * phases.reshape(-1))


    def drift_step(self, dt, psi):
        return self._drift(np.exp(-1j * dt * self.block_energies), psi)

    def stepper(self, field, dt):
        return _TwoPesStepper(self, np.asarray(field, dtype=float), dt)

    def surface_hamiltonian(self, surface: int) -> np.ndarray:
        e = self.e_lower if surface == 0 else self.e_upper
        return self.kinetic + np.diag(e)


def _rmul(p, m):
    """Row vectors ``p`` (complex) times the real matrix ``m``."""
    out = np.ascontiguousarray(p.real) @ m + 1j * (np.ascontiguousarray(p.imag) @ m)
    return out


class _TwoPesStepper(Stepper):
    def __init__(self, system: TwoPesSystem, field, dt):
        self.system = system
        self.dt = dt
        self.n_steps = field.shape[0]
        self.half = np.exp(-0.5j * dt * system.block_energies)
        v = field[:, 0:1]
        m0 = 0.5 * (system.mu11 + system.mu22) * v
        mz = 0.5 * (system.mu11 - system.mu22) * v
        mx = system.mu12 * v
        r = np.hypot(mx, mz)
        phase = np.exp(-1j * dt * m0)
        s = dt * np.sinc(dt * r / np.pi)  # sin(dt r) / r
        c = np.cos(dt * r)
        # exp(-i dt M) = phase (c I - i s (mz sz + mx sx)) per node
        self.c11 = phase * (c - 1j * s * mz)
        self.c22 = phase * (c + 1j * s * mz)
        self.c12 = phase * (-1j * s * mx)

    def _couple(self, j, psi, sign=1):
        n = self.system.n_x
        p1, p2 = psi[..., :n], psi[..., n:]
        c11, c22, c12 = self.c11[j], self.c22[j], self.c12[j]
        if sign < 0:
            c11, c22, c12 = c11.conj(), c22.conj(), c12.conj()
        return np.concatenate([c11 * p1 + c12 * p2, c12 * p1 + c22 * p2], axis=-1)

    def forward(self, j, psi):
        s = self.system
        return s._drift(self.half, self._couple(j, s._drift(self.half, psi)))

    def backward(self, j, phi):
        s = self.system
        h = self.half.conj()
        return s._drift(h, self._couple(j, s._drift(h, phi), sign=-1))

    def run_forward(self, psi0):
        s = self.system
        half = self.half.reshape(-1)
        coef = np.empty((self.n_steps + 1, s.dimension), dtype=complex)
        c = s.to_eigen(psi0)
        coef[0] = c
        for j in range(self.n_steps):
            c = half * s.to_eigen(self._couple(j, s.from_eigen(half * c)))
            coef[j + 1] = c
        out = s.from_eigen(coef)
        out[0] = psi0
        return out

    def run_backward(self, phi_final):
        s = self.system
        half = self.half.reshape(-1).conj()
        coef = np.empty((self.n_steps + 1, s.dimension), dtype=complex)
        c = s.to_eigen(phi_final)
        coef[-1] = c
        for j in range(self.n_steps - 1, -1, -1):
            c = half * s.to_eigen(self._couple(j, s.from_eigen(half * c), sign=-1))
            coef[j] = c
        out = s.from_eigen(coef)
        out[-1] = phi_final
        return out

    def sensitivity(self, psi, phi):
        s = self.system
        n = s.n_x
        a = s._drift(self.half, psi[:-1])
        x = s._drift(self.half.conj(), phi[1:])
        idx = np.arange(self.n_steps)
        b = self._couple(idx, a)
        b1, b2 = b[:, :n], b[:, n:]
        hb = np.concatenate([s.mu11 * b1 + s.mu12 * b2, s.mu12 * b1 + s.mu22 * b2], axis=1)
        return np.real(np.sum(np.conj(x) * (-1j) * hb, axis=1))[:, None]


def build_two_pes(spec: Optional[TwoPesSpec] = None) -> TwoPesSystem:
    return TwoPesSystem(spec or TwoPesSpec())


def eigen_gaps(system) -> list[tuple[str, float]]:
    """Bohr frequencies.

    Finite-level systems: all distinct pairwise eigenvalue differences.
    Two-surface specs/systems: vertical gaps ``E2 - E1`` at the lower-surface minima.
    """
    if isinstance(system, TwoPesSystem):
        system = system.spec
    if isinstance(system, TwoPesSpec):
        e1, e2 = system.lower_surface(), system.upper_surface()
        names = ["left", "right"] + [f"min{k}" for k in range(2, 10)]
        return [(names[i], float(e2[k] - e1[k])) for i, k in enumerate(lower_minima(e1))]
    e = np.linalg.eigvalsh(system.h0)
    out = {}
    for i in range(len(e)):
        for j in range(i + 1, len(e)):
            gap = round(float(abs(e[j] - e[i])), 12)
            out.setdefault(gap, f"{i + 1}-{j + 1}")
    return sorted(((label, gap) for gap, label in out.items()), key=lambda p: p[1])
