"""Discrete measure-valued controls.

A control is a finite sum of Dirac atoms on a frequency (or frequency x time)
grid.  Each atom carries an envelope from a Hilbert space U:

* ``h1_0``      piecewise-linear nodal values, Dirichlet ends, ``<a,b> = Re sum da conj(db) / dt``
* ``l2``        piecewise-linear nodal values with the P1 mass matrix
* ``scalar``    one complex number, ``<a,b> = Re(a conj(b))``
* ``kernel_weighted``  nodal values with ``<a,b> = Re(a^H K^{-1} b)`` for an SPD kernel matrix K

All inner products are real (R-bilinear).  Storage is dense: every grid point
holds an atom and sparsity shows up in the values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .dynamics import ConfigurationError, TimeGrid
from .io import atomic_writer

SPACE_KINDS = ("h1_0", "l2", "scalar", "kernel_weighted")


@dataclass(frozen=True)
class FrequencyGrid:
    omegas: np.ndarray
    centers: Optional[np.ndarray] = None

    def __post_init__(self):
        om = np.asarray(self.omegas, dtype=float)
        object.__setattr__(self, "omegas", om)
        if om.ndim != 1 or om.size < 1:
            raise ConfigurationError("frequency grid must be a non-empty vector")
        if np.any(np.diff(om) <= 0) or np.any(om < 0):
            raise ConfigurationError("frequencies must be nonnegative and strictly increasing")
        if self.centers is not None:
            c = np.asarray(self.centers, dtype=float)
            object.__setattr__(self, "centers", c)
            if c.ndim != 1 or np.any(np.diff(c) <= 0):
                raise ConfigurationError("time centres must be strictly increasing")

    @classmethod
    def uniform(cls, omega_min, omega_max, n, centers=None):
        return cls(np.linspace(omega_min, omega_max, n), centers)

    @property
    def n_atoms(self) -> int:
        return self.omegas.size * (1 if self.centers is None else self.centers.size)

    @property
    def is_tensor(self) -> bool:
        return self.centers is not None

    def atom_omegas(self) -> np.ndarray:
        """Frequency of each atom (frequency-major ordering)."""
        if self.centers is None:
            return self.omegas
        return np.repeat(self.omegas, self.centers.size)

    def atom_centers(self) -> Optional[np.ndarray]:
        if self.centers is None:
            return None
        return np.tile(self.centers, self.omegas.size)

    @property
    def spacing(self) -> float:
        return float(self.omegas[1] - self.omegas[0]) if self.omegas.size > 1 else 0.0


class EnvelopeSpace:
    """Hilbert space U of atom values, with Gram application and Riesz map.

    For a covector ``c`` acting as ``du -> Re(c^H du)`` the Riesz map returns
    the representative ``r`` with ``<r, du>_U = Re(c^H du)``.
    """

    def __init__(self, kind: str, grid: Optional[TimeGrid] = None, kernel=None):
        if kind not in SPACE_KINDS:
            raise ConfigurationError(f"unknown envelope space {kind!r}; expected one of {SPACE_KINDS}")
        if kind != "scalar" and grid is None:
            raise ConfigurationError(f"envelope space {kind!r} needs a time grid")
        self.kind = kind
        self.grid = grid
        if kind == "scalar":
            self.n_nodes = 1
        else:
            self.n_nodes = grid.n_steps + 1
            self.dt = grid.step
        if kind == "h1_0":
            if self.n_nodes < 3:
                raise ConfigurationError("H1_0 envelopes need at least two steps")
            m = self.n_nodes - 2
            ab = np.zeros((2, m))
            ab[0, 1:] = -1.0 / self.dt
            ab[1, :] = 2.0 / self.dt
            self._chol = linalg.cholesky_banded(ab)
        elif kind == "l2":
            self._mass_diag = np.full(self.n_nodes, 2 * self.dt / 3)
            self._mass_diag[[0, -1]] = self.dt / 3
            ab = np.zeros((2, self.n_nodes))
            ab[0, 1:] = self.dt / 6
            ab[1, :] = self._mass_diag
            self._chol = linalg.cholesky_banded(ab)
        elif kind == "kernel_weighted":
            if kernel is None:
                raise ConfigurationError("kernel_weighted space needs a kernel matrix")
            k = np.asarray(kernel, dtype=float)
            if k.shape != (self.n_nodes, self.n_nodes):
                raise ConfigurationError(f"kernel shape {k.shape} does not match {self.n_nodes} nodes")
            if not np.allclose(k, k.T, rtol=0, atol=1e-14 * np.abs(k).max()):
                raise ConfigurationError("kernel matrix must be symmetric")
            try:
                self._kchol = linalg.cho_factor(k, lower=True)
            except linalg.LinAlgError as exc:
                raise ConfigurationError("kernel matrix is not positive definite") from exc
            self.kernel = k

    def __repr__(self):
        return f"EnvelopeSpace({self.kind!r}, n_nodes={self.n_nodes})"

    # -- linear algebra on atom arrays of shape (n_atoms, n_nodes) --

    def gram(self, u):
        u = np.asarray(u)
        if self.kind == "scalar":
            return u.copy()
        if self.kind == "h1_0":
            out = np.zeros_like(u)
            out[:, 1:-1] = (2 * u[:, 1:-1] - u[:, :-2] - u[:, 2:]) / self.dt
            return out
        if self.kind == "l2":
            out = self._mass_diag * u
            out[:, 1:] += self.dt / 6 * u[:, :-1]
            out[:, :-1] += self.dt / 6 * u[:, 1:]
            return out
        return linalg.cho_solve(self._kchol, u.T).T

    def riesz(self, c):
        c = np.asarray(c)
        if self.kind == "scalar":
            return c.copy()
        if self.kind == "h1_0":
            out = np.zeros(c.shape, dtype=complex)
            if c.shape[0]:
                out[:, 1:-1] = _banded_solve(self._chol, c[:, 1:-1])
            return out
        if self.kind == "l2":
            return _banded_solve(self._chol, c)
        return (self.kernel @ c.T).T

    def atom_inner(self, a, b) -> np.ndarray:
        """Per-atom real inner products, shape (n_atoms,)."""
        a = np.asarray(a)
        b = np.asarray(b)
        if self.kind == "scalar":
            return np.real(np.conj(a[:, 0]) * b[:, 0])
        if self.kind == "h1_0":
            # real and imaginary parts interleaved: differences of stride 2
            av, bv = _as_real(a), _as_real(b)
            da = av[:, 2:] - av[:, :-2]
            db = bv[:, 2:] - bv[:, :-2]
            return np.einsum("ij,ij->i", da, db) / self.dt
        return np.einsum("ij,ij->i", _as_real(a), _as_real(self.gram(b)))

    def inner(self, a, b) -> float:
        return float(np.sum(self.atom_inner(a, b)))

    def norms(self, u) -> np.ndarray:
        return np.sqrt(np.maximum(self.atom_inner(u, u), 0.0))

    def conforms(self, u) -> bool:
        u = np.asarray(u)
        if u.ndim != 2 or u.shape[1] != self.n_nodes:
            return False
        if self.kind == "h1_0" and (np.any(u[:, 0] != 0) or np.any(u[:, -1] != 0)):
            return False
        return True

    def half_sine(self, norm: float) -> np.ndarray:
        """Base envelope ``sin(pi t / T)`` scaled to the given U-norm (modulus for scalars)."""
        if self.kind == "scalar":
            return np.array([complex(norm)])
        t = self.grid.nodes()
        b = np.sin(np.pi * t / t[-1]).astype(complex)
        b[[0, -1]] = 0.0
        return b * (norm / self.norms(b[None])[0])


def _as_real(z):
    z = np.ascontiguousarray(z, dtype=complex)
    return z.view(float).reshape(z.shape[0], -1)


def _banded_solve(chol, c):
    """Solve with a real banded Cholesky factor for complex right-hand rows."""
    c = np.asarray(c, dtype=complex)
    n = c.shape[0]
    rhs = np.empty((c.shape[1], 2 * n), order="F")
    rhs[:, :n] = c.real.T
    rhs[:, n:] = c.imag.T
    x = linalg.cho_solve_banded((chol, False), rhs, check_finite=False)
    return (x[:, :n] + 1j * x[:, n:]).T


def envelope_inner(space: EnvelopeSpace, a, b) -> float:
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    b = np.atleast_2d(np.asarray(b, dtype=complex))
    if a.shape != b.shape or a.shape[1] != space.n_nodes:
        raise ConfigurationError(f"envelopes of shape {a.shape}/{b.shape} do not fit {space}")
    return space.inner(a, b)


@dataclass
class ControlMeasure:
    grid: FrequencyGrid
    space: EnvelopeSpace
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        expected = (self.grid.n_atoms, self.space.n_nodes)
        if self.coeffs.shape != expected:
            raise ConfigurationError(f"measure coefficients have shape {self.coeffs.shape}, expected {expected}")

    @classmethod
    def zeros(cls, grid, space):
        return cls(grid, space, np.zeros((grid.n_atoms, space.n_nodes), dtype=complex))

    def with_coeffs(self, coeffs) -> "ControlMeasure":
        return ControlMeasure(self.grid, self.space, coeffs)

    def atom_norms(self) -> np.ndarray:
        return self.space.norms(self.coeffs)


def measure_norm(u: ControlMeasure) -> float:
    """Discrete mass norm: the l1 sum of atom U-norms."""
    return float(np.sum(u.atom_norms()))


@dataclass(frozen=True)
class HuberParams:
    theta: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ConfigurationError(f"Huber theta must be positive, got {self.theta}")


def huber(norms, theta):
    """Elementwise h(|z|): quadratic ``|z|^2/(2 theta)`` below theta, ``|z| - theta/2`` above."""
    if not theta > 0:
        raise ConfigurationError(f"Huber theta must be positive, got {theta}")
    norms = np.asarray(norms, dtype=float)
    return np.where(norms > theta, norms - 0.5 * theta, norms ** 2 / (2 * theta))


def huber_scale(norms, theta):
    """Multiplier ``s`` with grad h(z) = s z (gradient in the U inner product)."""
    if not theta > 0:
        raise ConfigurationError(f"Huber theta must be positive, got {theta}")
    norms = np.asarray(norms, dtype=float)
    return 1.0 / np.maximum(norms, theta)


def huber_value(u: ControlMeasure, p: HuberParams) -> float:
    return float(np.sum(huber(u.atom_norms(), p.theta)))


def random_initial_control(grid: FrequencyGrid, space: EnvelopeSpace, base, seed: int) -> ControlMeasure:
    """Every atom equals ``exp(i theta_w) * base`` with theta_w ~ U[0, 2 pi)."""
    base = np.asarray(base, dtype=complex).reshape(-1)
    if base.shape != (space.n_nodes,) or not space.conforms(base[None]):
        raise ConfigurationError("base envelope does not conform to the envelope space")
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2 * np.pi, grid.n_atoms)
    return ControlMeasure(grid, space, np.exp(1j * phases)[:, None] * base[None, :])


def support(u: ControlMeasure, p: HuberParams) -> np.ndarray:
    """Indices of atoms with U-norm strictly above theta."""
    return np.flatnonzero(u.atom_norms() > p.theta)


def _grid_columns(grid: FrequencyGrid):
    cols = [("omega", grid.atom_omegas())]
    if grid.is_tensor:
        cols.append(("t_center", grid.atom_centers()))
    return cols


def write_measure_csv(path, u: ControlMeasure) -> None:
    """One row per (atom, node): omega[, t_center], atom, node, re, im."""
    cols = _grid_columns(u.grid)
    n_atoms, n_nodes = u.coeffs.shape
    with atomic_writer(path) as fh:
        w = csv.writer(fh)
        w.writerow([c for c, _ in cols] + ["atom", "node", "re", "im"])
        for a in range(n_atoms):
            lead = [repr(float(v[a])) for _, v in cols]
            for k in range(n_nodes):
                z = u.coeffs[a, k]
                w.writerow(lead + [a, k, repr(float(z.real)), repr(float(z.imag))])


def read_measure_csv(path, grid: FrequencyGrid, space: EnvelopeSpace) -> ControlMeasure:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        coeffs = np.zeros((grid.n_atoms, space.n_nodes), dtype=complex)
        seen = 0
        for row in reader:
            a, k = int(row["atom"]), int(row["node"])
            if a >= grid.n_atoms or k >= space.n_nodes:
                raise ConfigurationError(f"{path}: atom/node index ({a}, {k}) out of range")
            if abs(float(row["omega"]) - grid.atom_omegas()[a]) > 1e-9 * max(1.0, abs(float(row["omega"]))):
                raise ConfigurationError(f"{path}: frequency of atom {a} does not match the grid")
            coeffs[a, k] = float(row["re"]) + 1j * float(row["im"])
            seen += 1
    if seen != coeffs.size:
        raise ConfigurationError(f"{path}: expected {coeffs.size} rows, found {seen}")
    return ControlMeasure(grid, space, coeffs)


def write_measure_summary_csv(path, u: ControlMeasure) -> None:
    cols = _grid_columns(u.grid)
    norms = u.atom_norms()
    with atomic_writer(path) as fh:
        w = csv.writer(fh)
        w.writerow([c for c, _ in cols] + ["norm"])
        for a in range(u.grid.n_atoms):
            w.writerow([repr(float(v[a])) for _, v in cols] + [repr(float(norms[a]))])
