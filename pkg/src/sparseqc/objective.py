"""Reduced cost ``j(u) = 1/2 <psi(T), O psi(T)> + alpha * R(u)``, its gradient and KKT diagnostics.

``R`` is the Huber-smoothed measure norm ``sum_w h(||u_w||_U)`` for sparse
problems, or the squared norm ``||u||_U^2`` for the direct-field baselines.
Gradients are Riesz representatives in the atom-wise U inner product.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .control import ControlMeasure, huber, huber_scale
from .dynamics import (ConfigurationError, NumericalError, QuantumSystem, TimeGrid, _check_state,
                       check_field)
from .io import atomic_writer
from .synthesis import SynthesisOperator

log = logging.getLogger(__name__)

COSTS = ("huber", "squared")
_ABS_FLOOR = 1e-12


@dataclass(frozen=True)
class Problem:
    system: QuantumSystem
    operator: SynthesisOperator
    alpha: float
    theta: float = 1e-4
    cost: str = "huber"
    psi0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.system.n_controls != 1:
            raise ConfigurationError("the synthesis operator produces one field; system must have one coupling")
        if not (self.alpha >= 0 and np.isfinite(self.alpha)):
            raise ConfigurationError(f"alpha must be nonnegative, got {self.alpha}")
        if not self.theta > 0:
            raise ConfigurationError(f"theta must be positive, got {self.theta}")
        if self.cost not in COSTS:
            raise ConfigurationError(f"cost must be one of {COSTS}, got {self.cost!r}")
        psi0 = self.system.psi0 if self.psi0 is None else self.psi0
        if psi0 is None:
            raise ConfigurationError("no initial state: system has none and psi0 was not given")
        object.__setattr__(self, "psi0", _check_state(self.system, psi0))

    @property
    def grid(self) -> TimeGrid:
        return self.operator.time_grid

    @property
    def space(self):
        return self.operator.space

    def with_alpha(self, alpha: float) -> "Problem":
        return replace(self, alpha=float(alpha))

    def zero_control(self) -> ControlMeasure:
        return ControlMeasure.zeros(self.operator.freq_grid, self.space)


@dataclass(frozen=True)
class ObjectiveBreakdown:
    total: float
    terminal_term: float
    cost_term: float
    alpha: float

    @property
    def achievement(self) -> float:
        """Population outside the penalized subspace (meaningful for projector observables)."""
        return 1.0 - 2.0 * self.terminal_term

    def as_dict(self) -> dict:
        return {"total": self.total, "terminal_term": self.terminal_term, "cost_term": self.cost_term,
                "alpha": self.alpha, "achievement": self.achievement}


@dataclass
class AdjointCache:
    field: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    pairing: np.ndarray


def _coeffs(problem: Problem, u) -> np.ndarray:
    c = u.coeffs if isinstance(u, ControlMeasure) else np.asarray(u, dtype=complex)
    if c.shape != (problem.operator.freq_grid.n_atoms, problem.space.n_nodes):
        raise ConfigurationError(f"control of shape {c.shape} does not fit the problem's operator")
    return c


def regularizer(problem: Problem, coeffs, norms=None) -> float:
    if norms is None:
        norms = problem.space.norms(coeffs)
    if problem.cost == "huber":
        return float(np.sum(huber(norms, problem.theta)))
    return float(np.sum(norms ** 2))


def regularizer_gradient(problem: Problem, coeffs, norms=None) -> np.ndarray:
    if problem.cost == "huber":
        if norms is None:
            norms = problem.space.norms(coeffs)
        return huber_scale(norms, problem.theta)[:, None] * coeffs
    out = 2.0 * coeffs
    if problem.operator.kind == "identity":
        out = out.real.astype(complex)
    return out


def _run(problem: Problem, coeffs, adjoint: bool):
    v = check_field(problem.operator.apply(coeffs), problem.grid, 1)
    stepper = problem.system.stepper(v, problem.grid.step)
    psi = stepper.run_forward(problem.psi0)
    o_psi = problem.system.observable_apply(psi[-1])
    terminal = 0.5 * float(np.real(np.vdot(psi[-1], o_psi)))
    if not np.isfinite(terminal):
        raise NumericalError("terminal term is not finite")
    if not adjoint:
        return v, terminal, None
    phi = stepper.run_backward(o_psi)
    g = stepper.sensitivity(psi, phi)
    if not np.all(np.isfinite(g)):
        raise NumericalError("adjoint pairing is not finite")
    return v, terminal, AdjointCache(v[:, 0], psi, phi, g[:, 0])


def evaluate(problem: Problem, u, with_cache: bool = False):
    """Return ``(ObjectiveBreakdown, AdjointCache | None)``."""
    c = _coeffs(problem, u)
    _, terminal, cache = _run(problem, c, with_cache)
    cost = problem.alpha * regularizer(problem, c)
    b = ObjectiveBreakdown(terminal + cost, terminal, cost, problem.alpha)
    return b, cache


def value_and_gradient(problem: Problem, u):
    """``(ObjectiveBreakdown, gradient coefficients, AdjointCache)`` from one forward/backward sweep."""
    c = _coeffs(problem, u)
    _, terminal, cache = _run(problem, c, True)
    norms = problem.space.norms(c)
    cost = problem.alpha * regularizer(problem, c, norms)
    grad = problem.operator.adjoint(cache.pairing) + problem.alpha * regularizer_gradient(problem, c, norms)
    return ObjectiveBreakdown(terminal + cost, terminal, cost, problem.alpha), grad, cache


def gradient(problem: Problem, u) -> ControlMeasure:
    _, grad, _ = value_and_gradient(problem, u)
    return ControlMeasure(problem.operator.freq_grid, problem.space, grad)


def smooth_gradient(problem: Problem, u) -> np.ndarray:
    """``B* g`` with ``g`` the adjoint pairing: the gradient of the terminal term alone."""
    _, _, cache = _run(problem, _coeffs(problem, u), True)
    return problem.operator.adjoint(cache.pairing)


@dataclass
class OptimalityReport:
    omegas: np.ndarray
    centers: Optional[np.ndarray]
    dual_norms: np.ndarray
    atom_norms: np.ndarray
    alpha: float
    theta: float
    tol: float
    support: np.ndarray
    alignment: np.ndarray
    complementarity_gap: float
    dual_bound_violations: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    direction_violations: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    support_rule_violations: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    @property
    def max_dual(self) -> float:
        return float(np.max(self.dual_norms)) if self.dual_norms.size else 0.0

    @property
    def max_alignment(self) -> float:
        return float(np.max(self.alignment)) if self.alignment.size else 0.0

    @property
    def ok(self) -> bool:
        return not (self.dual_bound_violations.size or self.direction_violations.size
                    or self.support_rule_violations.size)

    def as_dict(self) -> dict:
        d = {
            "alpha": self.alpha,
            "theta": self.theta,
            "tol": self.tol,
            "max_dual": self.max_dual,
            "max_alignment": self.max_alignment,
            "complementarity_gap": self.complementarity_gap,
            "ok": self.ok,
            "omega": self.omegas.tolist(),
            "dual_norm": self.dual_norms.tolist(),
            "atom_norm": self.atom_norms.tolist(),
            "support": self.support.tolist(),
            "alignment": self.alignment.tolist(),
            "dual_bound_violations": self.dual_bound_violations.tolist(),
            "direction_violations": self.direction_violations.tolist(),
            "support_rule_violations": self.support_rule_violations.tolist(),
        }
        if self.centers is not None:
            d["t_center"] = self.centers.tolist()
        return d

    def to_json(self, path) -> None:
        with atomic_writer(path) as fh:
            json.dump(self.as_dict(), fh, indent=1)


def optimality_report(problem: Problem, u, tol: float = 0.05) -> OptimalityReport:
    """Check the first-order conditions of the sparse problem at ``u``.

    * dual bound: ``d(w) = ||(B* g)(w)||_U <= alpha (1 + tol)``
    * direction: ``||alpha u_w/||u_w|| + (B* g)(w)||_U <= tol alpha`` on the support
    * relaxed support rule: ``d(w) < alpha (1 - tol)`` implies ``||u_w||_U <= theta``

    For squared-norm costs only stationarity applies: the alignment entry is
    ``||2 alpha u + B* g||_U`` and is flagged above ``tol * ||2 alpha u||_U``
    (plus a roundoff floor).
    """
    c = _coeffs(problem, u)
    space = problem.space
    bg = smooth_gradient(problem, c)
    d = space.norms(bg)
    norms = space.norms(c)
    a = problem.alpha
    fg = problem.operator.freq_grid
    centers = None if fg.atom_centers() is None else fg.atom_centers().copy()
    if problem.cost == "squared":
        sup = np.flatnonzero(norms > 0)
        align = space.norms(2 * a * c + bg)
        return OptimalityReport(
            omegas=fg.atom_omegas().copy(), centers=centers, dual_norms=d, atom_norms=norms, alpha=a,
            theta=problem.theta, tol=tol, support=sup, alignment=align[sup],
            complementarity_gap=abs(2 * a * space.inner(c, c) + space.inner(bg, c)),
            direction_violations=np.flatnonzero(align > tol * 2 * a * norms + _ABS_FLOOR))
    sup = np.flatnonzero(norms > problem.theta)
    if sup.size:
        unit = c[sup] / norms[sup, None]
        align = space.norms(a * unit + bg[sup])
    else:
        align = np.zeros(0)
    gap = abs(a * float(np.sum(norms[sup])) + space.inner(bg, c))
    return OptimalityReport(
        omegas=fg.atom_omegas().copy(),
        centers=centers,
        dual_norms=d,
        atom_norms=norms,
        alpha=a,
        theta=problem.theta,
        tol=tol,
        support=sup,
        alignment=align,
        complementarity_gap=gap,
        dual_bound_violations=np.flatnonzero(d > a * (1 + tol)),
        direction_violations=sup[align > tol * a],
        support_rule_violations=np.flatnonzero((d < a * (1 - tol)) & (norms > problem.theta)),
    )


def fd_gradient_oracle(problem: Union[Problem, Callable], u, direction, steps=(1e-4, 5e-5)) -> float:
    """Central-difference directional derivative, Richardson-extrapolated over two step sizes.

    ``problem`` may be a `Problem` or any callable mapping coefficient arrays to
    a real number.  Steps are absolute (scale the direction accordingly).
    """
    if isinstance(problem, Problem):
        c = _coeffs(problem, u)
        fun = lambda x: evaluate(problem, x)[0].total  # noqa: E731
    else:
        c = u.coeffs if isinstance(u, ControlMeasure) else np.asarray(u, dtype=complex)
        fun = problem
    dirn = direction.coeffs if isinstance(direction, ControlMeasure) else np.asarray(direction, dtype=complex)
    if dirn.shape != c.shape:
        raise ConfigurationError(f"direction shape {dirn.shape} does not match control shape {c.shape}")
    h1, h2 = steps
    est = []
    for h in (h1, h2):
        fp, fm = fun(c + h * dirn), fun(c - h * dirn)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError("objective is not finite along the difference stencil")
        est.append((fp - fm) / (2 * h))
    r = (h1 / h2) ** 2
    rich = (r * est[1] - est[0]) / (r - 1)
    log.debug("fd steps %s: %r, %r -> %r", steps, est[0], est[1], rich)
    return float(rich)
