"""L-BFGS in the atom-wise U geometry with a strong-Wolfe line search, restarts and alpha-continuation."""

from __future__ import annotations

import csv
import logging
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .control import ControlMeasure, random_initial_control
from .dynamics import ConfigurationError, NumericalError
from .io import atomic_writer
from .objective import ObjectiveBreakdown, OptimalityReport, Problem, optimality_report, value_and_gradient

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LbfgsOptions:
    memory: int = 10
    max_iters: int = 500
    grad_tol_rel: float = 1e-5
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 30
    seed: int = 0
    kkt_tol: float = 0.05

    def __post_init__(self):
        if self.memory < 1:
            raise ConfigurationError(f"memory must be >= 1, got {self.memory}")
        if not 0 < self.c1 < self.c2 < 1:
            raise ConfigurationError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.max_iters < 0 or self.max_line_search < 1:
            raise ConfigurationError("iteration limits must be positive")
        if not self.grad_tol_rel > 0:
            raise ConfigurationError("grad_tol_rel must be positive")


@dataclass
class RunResult:
    measure: ControlMeasure
    breakdown: ObjectiveBreakdown
    report: Optional[OptimalityReport]
    log: list = field(default_factory=list)
    reason: str = ""
    wall_time: float = 0.0
    seed: Optional[int] = None
    n_evals: int = 0

    @property
    def iterations(self) -> int:
        return len(self.log) - 1

    @property
    def support_size(self) -> int:
        return int(np.sum(self.measure.atom_norms() > self.report.theta)) if self.report else 0


class _Oracle:
    """Counts evaluations and keeps the best point seen."""

    def __init__(self, fun):
        self.fun = fun
        self.n = 0

    def __call__(self, x):
        self.n += 1
        b, g = self.fun(x)
        if not np.isfinite(b.total):
            raise NumericalError(f"objective is not finite at evaluation {self.n}")
        return b, g


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (a, fa, ga), (b, fb, gb), or None."""
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    rad = d1 * d1 - ga * gb
    if rad < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(rad)
    den = gb - ga + 2 * d2
    if den == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / den


def _interpolate(lo, hi):
    a, fa, ga = lo
    b, fb, gb = hi
    t = _cubic_min(a, fa, ga, b, fb, gb)
    left, right = min(a, b), max(a, b)
    margin = 0.1 * (right - left)
    if t is None or not np.isfinite(t) or t < left + margin or t > right - margin:
        t = 0.5 * (a + b)
    return t


def strong_wolfe(phi, f0, g0, step0, c1, c2, max_evals):
    """Strong-Wolfe search along a descent direction.

    ``phi(t)`` returns ``(f, dphi, payload)``.  Returns ``(t, f, payload)`` or
    ``None`` if no acceptable step was found within ``max_evals`` evaluations.
    """
    prev = (0.0, f0, g0)
    t = step0
    best = None
    for i in range(max_evals):
        f, g, payload = phi(t)
        if best is None or f < best[1]:
            best = (t, f, payload)
        if f > f0 + c1 * t * g0 or (i > 0 and f >= prev[1]):
            return _zoom(phi, prev, (t, f, g), f0, g0, c1, c2, max_evals - i - 1, best)
        if abs(g) <= -c2 * g0:
            return t, f, payload
        if g >= 0:
            return _zoom(phi, (t, f, g), prev, f0, g0, c1, c2, max_evals - i - 1, best)
        prev = (t, f, g)
        t = 2.0 * t
    return best if best is not None and best[1] < f0 + c1 * best[0] * g0 else None


def _zoom(phi, lo, hi, f0, g0, c1, c2, max_evals, best):
    for _ in range(max_evals):
        t = _interpolate(lo, hi)
        f, g, payload = phi(t)
        if f < best[1]:
            best = (t, f, payload)
        if f > f0 + c1 * t * g0 or f >= lo[1]:
            hi = (t, f, g)
        else:
            if abs(g) <= -c2 * g0:
                return t, f, payload
            if g * (hi[0] - lo[0]) >= 0:
                hi = lo
            lo = (t, f, g)
        if abs(hi[0] - lo[0]) <= 1e-14 * max(abs(lo[0]), 1e-300):
            break
    # sufficient decrease without curvature is still a usable step
    return best if best[1] < f0 + c1 * best[0] * g0 else None


def lbfgs(fun, x0, inner, opts: LbfgsOptions, callback=None):
    """Generic L-BFGS.  ``fun(x) -> (breakdown, grad)``; ``inner`` is the real inner product.

    Returns ``(x, breakdown, log_rows, reason, n_evals)``.
    """
    oracle = _Oracle(fun)
    x = x0.copy()
    b, g = oracle(x)
    gnorm = np.sqrt(inner(g, g))
    gmax = gnorm
    rows = [_row(0, b, gnorm, 0.0)]
    mem: deque = deque(maxlen=opts.memory)
    reason = "max_iters"
    if gnorm == 0 or gnorm < opts.grad_tol_rel * gmax:
        return x, b, rows, "converged", oracle.n
    for k in range(1, opts.max_iters + 1):
        d = _two_loop(g, mem, inner)
        slope = inner(g, d)
        if not slope < 0:
            log.debug("iteration %d: not a descent direction, memory cleared", k)
            mem.clear()
            d = -g
            slope = -gnorm ** 2
        if mem:
            step0 = 1.0
        else:
            # first step (or after a reset): move by a fraction of the current iterate
            scale = 0.1 * np.sqrt(inner(x, x)) or 1.0
            step0 = scale / np.sqrt(inner(d, d))

        def phi(t, x=x, d=d):
            bt, gt = oracle(x + t * d)
            return bt.total, inner(gt, d), (bt, gt)

        res = strong_wolfe(phi, b.total, slope, step0, opts.c1, opts.c2, opts.max_line_search)
        if res is None and mem:
            # retry once along steepest descent before giving up
            mem.clear()
            d = -g
            slope = -gnorm ** 2

            def phi(t, x=x, d=d):
                bt, gt = oracle(x + t * d)
                return bt.total, inner(gt, d), (bt, gt)

            res = strong_wolfe(phi, b.total, slope, (0.1 * np.sqrt(inner(x, x)) or 1.0) / gnorm, opts.c1, opts.c2, opts.max_line_search)
        if res is None:
            reason = "line_search_failed"
            break
        t, _, (b_new, g_new) = res
        s = t * d
        y = g_new - g
        sy = inner(s, y)
        if sy > 1e-12 * np.sqrt(inner(s, s) * inner(y, y)):
            mem.append((s, y, 1.0 / sy))
        x = x + s
        b, g = b_new, g_new
        gnorm = np.sqrt(inner(g, g))
        gmax = max(gmax, gnorm)
        rows.append(_row(k, b, gnorm, t))
        if callback is not None:
            callback(k, x, b, gnorm)
        if gnorm < opts.grad_tol_rel * gmax:
            reason = "converged"
            break
    return x, b, rows, reason, oracle.n


def _two_loop(g, mem, inner):
    q = -g
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * inner(s, q)
        alphas.append(a)
        q = q - a * y
    if mem:
        s, y, rho = mem[-1]
        q = q * (1.0 / (rho * inner(y, y)))
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        beta = rho * inner(y, q)
        q = q + (a - beta) * s
    return q


def _row(k, b, gnorm, step):
    return {"iter": k, "objective": b.total, "terminal_term": b.terminal_term, "cost_term": b.cost_term,
            "grad_norm": float(gnorm), "step": float(step)}


def minimize(problem: Problem, u0: ControlMeasure, opts: LbfgsOptions = LbfgsOptions(), callback=None,
             report: bool = True) -> RunResult:
    if u0.coeffs.shape != (problem.operator.freq_grid.n_atoms, problem.space.n_nodes) \
            or not problem.space.conforms(u0.coeffs):
        raise ConfigurationError("initial control does not conform to the problem")
    space = problem.space
    t0 = time.perf_counter()

    def fun(x):
        b, g, _ = value_and_gradient(problem, x)
        return b, g

    x, b, rows, reason, n = lbfgs(fun, u0.coeffs, space.inner, opts, callback)
    u = u0.with_coeffs(x)
    rep = optimality_report(problem, u, opts.kkt_tol) if report else None
    wall = time.perf_counter() - t0
    log.info("alpha=%g: %s after %d iterations, j=%.6g terminal=%.3g", problem.alpha, reason,
             len(rows) - 1, b.total, b.terminal_term)
    return RunResult(u, b, rep, rows, reason, wall, opts.seed, n)


def default_initial_control(problem: Problem, seed: int, norm: float = 1e-3) -> ControlMeasure:
    """Random-phase start: every atom is ``exp(i theta_w)`` times a half-sine of U-norm ``norm``."""
    if problem.operator.kind == "identity":
        raise ConfigurationError("direct-field baselines need an explicit initial field")
    grid, space = problem.operator.freq_grid, problem.space
    return random_initial_control(grid, space, space.half_sine(norm), seed)


def _run_seed(args):
    problem, initial, opts, seed = args
    o = LbfgsOptions(**{**opts.__dict__, "seed": seed})
    return minimize(problem, initial(problem, seed), o)


def multistart(problem: Problem, seeds: Sequence[int], opts: LbfgsOptions = LbfgsOptions(),
               initial: Callable = default_initial_control, jobs: int = 1) -> tuple[RunResult, list]:
    """Run one minimization per seed and keep the lowest objective (ties: first seed)."""
    tasks = [(problem, initial, opts, s) for s in seeds]
    if not tasks:
        raise ConfigurationError("need at least one seed")
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed, tasks))
    else:
        results = [_run_seed(t) for t in tasks]
    best = min(range(len(results)), key=lambda i: (results[i].breakdown.total, i))
    return results[best], results


def continuation_sweep(problem: Problem, alphas: Sequence[float], opts: LbfgsOptions = LbfgsOptions(),
                       initial: Callable = default_initial_control) -> list:
    """Solve for ascending alphas, warm-starting each stage from the previous solution."""
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ConfigurationError("alpha list is empty")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ConfigurationError(f"alphas must be strictly ascending, got {alphas}")
    results = []
    u = None
    for i, a in enumerate(alphas):
        p = problem.with_alpha(a)
        start = initial(p, opts.seed) if u is None else u
        try:
            r = minimize(p, start, opts)
        except NumericalError as exc:
            log.warning("stage alpha=%g failed (%s); restarting from a fresh random control", a, exc)
            r = minimize(p, initial(p, opts.seed + 1000 + i), opts)
        results.append(r)
        u = r.measure
    return results


def write_iteration_log(path, rows) -> None:
    cols = ["iter", "objective", "terminal_term", "cost_term", "grad_norm", "step"]
    with atomic_writer(path) as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r["iter"]] + [repr(float(r[c])) for c in cols[1:]])


def sweep_rows(results) -> list:
    from .control import measure_norm

    return [{"alpha": r.breakdown.alpha, "terminal_term": r.breakdown.terminal_term,
             "support_size": r.support_size, "measure_norm": measure_norm(r.measure)} for r in results]


def write_sweep_csv(path, results) -> None:
    with atomic_writer(path) as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "terminal_term", "support_size", "measure_norm"])
        for r in sweep_rows(results):
            w.writerow([repr(r["alpha"]), repr(r["terminal_term"]), r["support_size"], repr(r["measure_norm"])])
