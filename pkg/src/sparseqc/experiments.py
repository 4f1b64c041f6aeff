"""Named, config-driven scenarios: the three-level run and the six two-surface setups.

A `ScenarioConfig` is a flat JSON-serializable record.  `run_scenario` builds
the model, operator and problem, runs the multi-seed optimization and writes
the artifacts into the output directory:

    field.csv, spectrum.csv, spectrogram.csv, measure.csv, measure_summary.csv,
    optimality.json, iterations.csv, summary.json
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .control import ControlMeasure, FrequencyGrid, measure_norm, write_measure_csv, write_measure_summary_csv
from .dynamics import ConfigurationError, TimeGrid
from .io import atomic_writer
from .models import TwoPesSpec, build_three_level, build_two_pes, eigen_gaps
from .objective import Problem
from .optimizer import LbfgsOptions, RunResult, multistart, write_iteration_log
from .synthesis import PAIRINGS, fourier_coefficients, make_operator, spectrogram, write_spectrogram_csv

log = logging.getLogger(__name__)

MODELS = ("three_level", "two_pes")
_LBFGS_KEYS = {f.name for f in dataclasses.fields(LbfgsOptions)} - {"seed"}
_PES_KEYS = {f.name for f in dataclasses.fields(TwoPesSpec)}


@dataclass
class ScenarioConfig:
    name: str
    model: str = "three_level"
    target_level: int = 3
    two_pes: dict = field(default_factory=dict)
    kind: str = "two_scale"
    space: str = "h1_0"
    omega_min: float = 2.0
    omega_max: float = 5.0
    n_omega: int = 100
    n_centers: int = 0
    t_final: float = 100.0
    n_steps: int = 4096
    sigma: Optional[float] = None
    alpha: float = 0.1
    theta: float = 1e-4
    cost: str = "huber"
    init_norm: float = 1e-3
    restarts: int = 5
    seed: int = 0
    optimizer: dict = field(default_factory=dict)
    spectrogram_centers: int = 32
    spectrogram_sigma: Optional[float] = None
    reduced: bool = False
    output_dir: str = "out"
    notes: str = ""

    def __post_init__(self):
        self.validate()

    def _fail(self, key, msg):
        raise ConfigurationError(f"config {self.name!r}, field {key!r}: {msg}")

    def validate(self) -> None:
        if self.model not in MODELS:
            self._fail("model", f"must be one of {MODELS}, got {self.model!r}")
        if self.kind not in PAIRINGS:
            self._fail("kind", f"must be one of {tuple(PAIRINGS)}, got {self.kind!r}")
        if self.space not in PAIRINGS[self.kind]:
            self._fail("space", f"{self.space!r} cannot be paired with kind {self.kind!r} "
                                f"(allowed: {PAIRINGS[self.kind]})")
        if self.target_level not in (1, 2, 3):
            self._fail("target_level", "must be 1, 2 or 3")
        unknown = set(self.two_pes) - _PES_KEYS
        if unknown:
            self._fail("two_pes", f"unknown keys {sorted(unknown)}")
        unknown = set(self.optimizer) - _LBFGS_KEYS
        if unknown:
            self._fail("optimizer", f"unknown keys {sorted(unknown)}")
        if not 0 <= self.omega_min < self.omega_max:
            self._fail("omega_min", "need 0 <= omega_min < omega_max")
        if self.n_omega < 2:
            self._fail("n_omega", "grid needs at least 2 points")
        if self.kind == "gabor_tf" and self.n_centers < 2:
            self._fail("n_centers", "gabor_tf needs at least 2 time centres")
        if self.kind != "gabor_tf" and self.n_centers:
            self._fail("n_centers", "only gabor_tf uses time centres")
        if not self.t_final > 0:
            self._fail("t_final", "must be positive")
        if self.n_steps < 2:
            self._fail("n_steps", "grid needs at least 2 steps")
        if self.kind in ("dual_gabor", "gabor_tf", "kernel_space") and not (self.sigma and self.sigma > 0):
            self._fail("sigma", f"kind {self.kind!r} needs a positive window width")
        if not self.alpha >= 0:
            self._fail("alpha", "must be nonnegative")
        if not self.theta > 0:
            self._fail("theta", "must be positive")
        expected_cost = "squared" if self.kind == "identity" else "huber"
        if self.cost != expected_cost:
            self._fail("cost", f"kind {self.kind!r} uses cost {expected_cost!r}")
        if not self.init_norm > 0:
            self._fail("init_norm", "must be positive")
        if self.restarts < 1:
            self._fail("restarts", "must be at least 1")
        if self.spectrogram_centers < 2:
            self._fail("spectrogram_centers", "need at least 2")
        try:
            self.lbfgs_options()
        except ConfigurationError as exc:
            self._fail("optimizer", str(exc))

    # -- derived objects --

    def time_grid(self) -> TimeGrid:
        return TimeGrid(float(self.t_final), int(self.n_steps))

    def band(self) -> np.ndarray:
        return np.linspace(self.omega_min, self.omega_max, self.n_omega)

    def frequency_grid(self) -> FrequencyGrid:
        if self.kind == "identity":
            return FrequencyGrid(np.array([0.0]))
        centers = np.linspace(0.0, self.t_final, self.n_centers) if self.kind == "gabor_tf" else None
        return FrequencyGrid(self.band(), centers)

    def pes_spec(self) -> TwoPesSpec:
        return TwoPesSpec(**self.two_pes)

    def build_system(self):
        if self.model == "three_level":
            return build_three_level(self.target_level)
        return build_two_pes(self.pes_spec())

    def build_operator(self):
        return make_operator(self.kind, self.frequency_grid(), self.time_grid(), sigma=self.sigma,
                             identity_space=self.space)

    def build_problem(self, system=None) -> Problem:
        system = self.build_system() if system is None else system
        return Problem(system, self.build_operator(), float(self.alpha), float(self.theta), self.cost)

    def lbfgs_options(self, seed: Optional[int] = None) -> LbfgsOptions:
        return LbfgsOptions(**self.optimizer, seed=self.seed if seed is None else seed)

    @property
    def dof(self) -> int:
        """Real degrees of freedom of the discrete control."""
        n_atoms = self.frequency_grid().n_atoms
        n_nodes = 1 if self.space == "scalar" else self.n_steps + 1
        return n_atoms * n_nodes * (1 if self.kind == "identity" else 2)

    def seeds(self) -> list:
        return [self.seed + i for i in range(self.restarts)]

    # -- serialization --

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"config {data.get('name')!r}: unknown keys {sorted(unknown)}")
        if "name" not in data:
            raise ConfigurationError("config field 'name' is required")
        return cls(**data)

    def to_json(self, path) -> None:
        with atomic_writer(path) as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def reduce(self) -> "ScenarioConfig":
        """CI-scale variant: halve the spatial, time and frequency grids."""
        if self.reduced:
            return self
        pes = dict(self.two_pes)
        if self.model == "two_pes":
            pes["n_x"] = pes.get("n_x", TwoPesSpec.n_x) // 2
        steps = (self.n_steps + 1) // 2 if self.model == "two_pes" else self.n_steps // 2
        centers = (self.n_centers + 1) // 2
        sigma = self.sigma
        if self.kind == "gabor_tf":
            # keep the packet width proportional to the centre spacing
            sigma = self.sigma * (self.n_centers - 1) / (centers - 1)
        name = self.name + "_reduced"
        out = f"out/{name}" if self.output_dir == f"out/{self.name}" else self.output_dir
        return self.replace(name=name, two_pes=pes, n_steps=steps, n_omega=self.n_omega // 2,
                            n_centers=centers, sigma=sigma, reduced=True, output_dir=out)


# -- initialization --

def initial_control(cfg: ScenarioConfig, problem: Problem, seed: int) -> ControlMeasure:
    """Random-phase start.

    Every atom is ``exp(i theta_w)`` times a half-sine of U-norm ``init_norm``.  For
    direct-field baselines the field is the real part of the same random-phase
    sum over the configured band, sampled at the nodes, with the same per-atom norm.
    """
    op = problem.operator
    rng = np.random.default_rng(seed)
    if op.kind != "identity":
        from .control import random_initial_control

        return random_initial_control(op.freq_grid, op.space, op.space.half_sine(cfg.init_norm), seed)
    t = op.time_grid.nodes()
    env = np.sin(np.pi * t / t[-1])
    phases = rng.uniform(0.0, 2 * np.pi, cfg.n_omega)
    v = np.real(np.exp(1j * (phases[:, None] + np.outer(cfg.band(), t)))).sum(axis=0) * env
    v[[0, -1]] = 0.0
    v *= cfg.init_norm * np.sqrt(cfg.n_omega) / op.space.norms(v[None].astype(complex))[0]
    return ControlMeasure(op.freq_grid, op.space, v[None].astype(complex))


class _Initializer:
    """Picklable ``(problem, seed) -> measure`` bound to a config."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg

    def __call__(self, problem, seed):
        return initial_control(self.cfg, problem, seed)


def run_optimization(cfg: ScenarioConfig, problem: Optional[Problem] = None, jobs: int = 1):
    """Multi-seed minimization; returns ``(best, all_results)``."""
    problem = cfg.build_problem() if problem is None else problem
    return multistart(problem, cfg.seeds(), cfg.lbfgs_options(), _Initializer(cfg), jobs=jobs)


# -- diagnostics --

def spectrum_grid(cfg: ScenarioConfig, n: int = 401) -> np.ndarray:
    return np.linspace(0.0, 2.0 * cfg.omega_max, n)


def spectral_fraction_below(field, grid: TimeGrid, cutoff: float, omega_max: float, n: int = 801) -> float:
    """Share of ``sum |F(w)|^2`` over ``[0, omega_max]`` carried by ``w < cutoff``."""
    om = np.linspace(0.0, omega_max, n)
    power = np.abs(fourier_coefficients(field, grid, om)) ** 2
    total = power.sum()
    return float(power[om < cutoff].sum() / total) if total > 0 else 0.0


def mass_fraction_near(u: ControlMeasure, targets, rel: float = 0.2) -> float:
    """Share of the measure norm carried by atoms within ``+-rel`` of any target frequency."""
    norms = u.atom_norms()
    om = u.grid.atom_omegas()
    near = np.zeros(om.size, dtype=bool)
    for w in targets:
        near |= np.abs(om - w) <= rel * w
    total = norms.sum()
    return float(norms[near].sum() / total) if total > 0 else 0.0


def field_of(problem: Problem, u: ControlMeasure) -> np.ndarray:
    return problem.operator.apply(u.coeffs)


def write_artifacts(cfg: ScenarioConfig, problem: Problem, best: RunResult, results, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = problem.grid
    v = field_of(problem, best.measure)
    with atomic_writer(out / "field.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "v"])
        w.writerows([[repr(float(t)), repr(float(x))] for t, x in zip(grid.midpoints(), v)])
    om = spectrum_grid(cfg)
    coef = np.abs(fourier_coefficients(v, grid, om))
    with atomic_writer(out / "spectrum.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["omega", "abs_coefficient"])
        w.writerows([[repr(float(a)), repr(float(b))] for a, b in zip(om, coef)])
    centers = np.linspace(0.0, cfg.t_final, cfg.spectrogram_centers)
    sig = cfg.spectrogram_sigma or 0.75 * (centers[1] - centers[0])
    write_spectrogram_csv(out / "spectrogram.csv", cfg.band(), centers, spectrogram(v, grid, cfg.band(), centers, sig))
    write_measure_csv(out / "measure.csv", best.measure)
    write_measure_summary_csv(out / "measure_summary.csv", best.measure)
    best.report.to_json(out / "optimality.json")
    write_iteration_log(out / "iterations.csv", best.log)
    summary = {
        "name": cfg.name,
        "alpha": cfg.alpha,
        "theta": cfg.theta,
        "breakdown": best.breakdown.as_dict(),
        "reason": best.reason,
        "iterations": best.iterations,
        "seed": best.seed,
        "support_size": best.support_size,
        "measure_norm": measure_norm(best.measure),
        "max_dual_over_alpha": best.report.max_dual / cfg.alpha if cfg.alpha > 0 else None,
        "kkt_ok": best.report.ok,
        "dof": cfg.dof,
        "restarts": [{"seed": r.seed, "total": r.breakdown.total, "terminal_term": r.breakdown.terminal_term,
                      "reason": r.reason, "iterations": r.iterations} for r in results],
        "wall_time": sum(r.wall_time for r in results),
        "config": cfg.to_dict(),
    }
    if cfg.model == "two_pes":
        gaps = [g for _, g in eigen_gaps(cfg.pes_spec())]
        summary["gaps"] = gaps
        summary["mass_near_gaps"] = mass_fraction_near(best.measure, gaps) if cfg.kind != "identity" else None
        summary["spectral_fraction_below_band"] = spectral_fraction_below(v, grid, cfg.omega_min, 2 * cfg.omega_max)
    with atomic_writer(out / "summary.json") as fh:
        json.dump(summary, fh, indent=1)
    return summary


def run_scenario(cfg: ScenarioConfig, out_dir=None, jobs: int = 1) -> RunResult:
    """Optimize the scenario and write its artifacts (``out_dir`` defaults to ``cfg.output_dir``)."""
    problem = cfg.build_problem()
    best, results = run_optimization(cfg, problem, jobs)
    write_artifacts(cfg, problem, best, results, cfg.output_dir if out_dir is None else out_dir)
    return best


# -- reference scenarios --

_PES_T = 3000.0
_PES_STEPS = 2047  # 2048 time nodes


def _pes(name, kind, space, alpha, **kw) -> ScenarioConfig:
    base = dict(name=name, model="two_pes", kind=kind, space=space, omega_min=1 / 30, omega_max=1 / 10,
                n_omega=100, t_final=_PES_T, n_steps=_PES_STEPS, alpha=alpha, theta=1e-5, init_norm=1e-3,
                restarts=3, spectrogram_sigma=150.0, optimizer={"max_iters": 400})
    base.update(kw)
    return ScenarioConfig(**base)


def reference_configs(include_reduced: bool = True) -> dict:
    """The three-level scenario, the six two-surface setups and their reduced variants."""
    three = ScenarioConfig(
        name="three_level_tf", model="three_level", target_level=2, kind="two_scale", space="h1_0",
        omega_min=2.0, omega_max=5.0, n_omega=100, t_final=100.0, n_steps=4096, alpha=0.1, theta=1e-4,
        init_norm=1e-3, restarts=5, spectrogram_sigma=5.0, optimizer={"max_iters": 600},
        notes="target level 2: the ladder 1->3->2 that needs both Bohr frequencies 4 and 3")
    cfgs = [
        three,
        # alphas tuned at reduced scale for gap concentration; sparse kinds share one Huber radius
        _pes("two_pes_two_scale", "two_scale", "h1_0", alpha=3.0),
        _pes("two_pes_dual_gabor", "dual_gabor", "l2", alpha=1.0, sigma=100.0),
        _pes("two_pes_fourier", "fourier", "scalar", alpha=3.0),
        _pes("two_pes_gabor_tf", "gabor_tf", "scalar", alpha=1.0, n_centers=14, sigma=175.0),
        _pes("two_pes_l2_baseline", "identity", "l2", alpha=0.03, cost="squared"),
        _pes("two_pes_h1_baseline", "identity", "h1_0", alpha=300.0, cost="squared"),
    ]
    out = {c.name: c for c in cfgs}
    if include_reduced:
        for c in cfgs:
            r = c.reduce()
            out[r.name] = r
    # each reference scenario writes to its own directory under ./out
    return {n: c.replace(output_dir=f"out/{n}") for n, c in out.items()}


# -- gradient verification matrix --

def gradient_check_cases(scale: str = "reduced") -> list:
    """``(label, problem)`` for every model in {three-level, two-PES} and every operator kind."""
    if scale not in ("reduced", "full"):
        raise ConfigurationError(f"scale must be 'reduced' or 'full', got {scale!r}")
    full = scale == "full"
    setups = [
        ("three_level", build_three_level(), TimeGrid(100.0, 4096 if full else 1024), (2.0, 5.0), 5.0),
        ("two_pes", build_two_pes(TwoPesSpec(n_x=256 if full else 128)),
         TimeGrid(_PES_T, _PES_STEPS if full else 1024), (1 / 30, 1 / 10), 100.0),
    ]
    n_om = 100 if full else 10
    cases = []
    for model, system, grid, (lo, hi), sigma in setups:
        band = np.linspace(lo, hi, n_om)
        for kind in PAIRINGS:
            if kind == "gabor_tf":
                centers = np.linspace(0.0, grid.t_final, 14 if full else 7)
                fg = FrequencyGrid(band, centers)
                sig = 0.75 * (centers[1] - centers[0])
            elif kind == "identity":
                fg, sig = FrequencyGrid(np.array([0.0])), None
            else:
                fg, sig = FrequencyGrid(band), sigma
            op = make_operator(kind, fg, grid, sigma=sig)
            cost = "squared" if kind == "identity" else "huber"
            theta = 1e-4 if model == "three_level" else 1e-5
            cases.append((f"{model}/{kind}", Problem(system, op, 0.1 if model == "three_level" else 3e-3,
                                                      theta, cost)))
    return cases


def random_control(problem: Problem, rng, atom_norm: float) -> np.ndarray:
    """Random coefficients conforming to the problem's space, each atom of U-norm ``atom_norm``."""
    op = problem.operator
    shape = (op.freq_grid.n_atoms, problem.space.n_nodes)
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if op.kind == "identity":
        c = c.real.astype(complex)
    if problem.space.kind == "h1_0":
        c[:, [0, -1]] = 0.0
    return c * (atom_norm / problem.space.norms(c))[:, None]


def gradient_check(problem: Problem, n_directions: int = 20, seed: int = 0, atom_norm: float = 0.1,
                   rel_steps=(1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5)) -> float:
    """Largest relative error between adjoint and finite-difference directional derivatives.

    The control and directions are random.  For each direction the Richardson
    estimate is formed on a sweep of steps ``rel_steps * ||u||`` and the value
    that agrees best with both of its neighbours in the sweep is kept (truncation error shrinks
    with the step, roundoff grows).  Errors are relative to
    ``max(|fd|, 1e-3 ||grad|| ||d||)`` so that directions nearly orthogonal to the
    gradient do not divide by ~0.  Atoms have norm ``atom_norm``, the size of
    typical optima; much nearer zero the gradient shrinks while evaluation
    roundoff does not, and the check measures noise instead of the adjoint.
    """
    from .objective import fd_gradient_oracle, value_and_gradient

    rng = np.random.default_rng(seed)
    space = problem.space
    u = random_control(problem, rng, atom_norm)
    _, grad, _ = value_and_gradient(problem, u)
    gnorm = np.sqrt(space.inner(grad, grad))
    unorm = np.sqrt(space.inner(u, u))
    worst = 0.0
    for _ in range(n_directions):
        d = random_control(problem, rng, 1.0)
        d /= np.sqrt(space.inner(d, d))
        ad = space.inner(grad, d)
        est = [fd_gradient_oracle(problem, u, d, steps=(r * unorm, 0.5 * r * unorm)) for r in rel_steps]
        jumps = np.abs(np.diff(est))
        # interior estimate that agrees best with both neighbours
        k = int(np.argmin(np.maximum(jumps[:-1], jumps[1:])))
        fd = est[k + 1]
        err = abs(ad - fd) / max(abs(fd), 1e-3 * gnorm)
        worst = max(worst, err)
    return worst
