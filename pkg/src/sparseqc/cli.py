"""Command-line front end.

    sparseqc run --config three_level_tf.json --seed 7 --out results/
    sparseqc sweep --config two_pes_fourier.json --alphas 1e-4,3e-4,1e-3,3e-3
    sparseqc grad-check --scale reduced
    sparseqc report --config three_level_tf.json --measure results/measure.csv
    sparseqc list-scenarios

``--config`` takes a JSON file or the name of a built-in scenario.
Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .control import read_measure_csv
from .dynamics import ConfigurationError, InputError, NumericalError
from .experiments import (ScenarioConfig, _Initializer, gradient_check, gradient_check_cases, reference_configs,
                          run_scenario)
from .optimizer import continuation_sweep, sweep_rows, write_iteration_log, write_sweep_csv
from .objective import optimality_report

log = logging.getLogger("sparseqc")

GRAD_TOL = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _parse_alphas(text: str) -> list:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"--alphas: expected a comma-separated list of numbers, got {text!r}") from exc
    if not vals:
        raise UsageError("--alphas: empty list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sparseqc", description="Sparse time-frequency optimal control of quantum systems.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="scenario JSON file or built-in name")
        sp.add_argument("--out", default=None, help="output directory (default: the config's output_dir, ./out)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--alpha", type=float, default=None, help="override the cost parameter")
        sp.add_argument("--theta", type=float, default=None, help="override the Huber radius")
        sp.add_argument("--scale", choices=("full", "reduced"), default="full")
        sp.add_argument("--restarts", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1, help="parallel restarts")

    common(sub.add_parser("run", help="optimize one scenario and write its artifacts"))
    sw = sub.add_parser("sweep", help="alpha-continuation sweep")
    common(sw)
    sw.add_argument("--alphas", required=True, help="comma-separated ascending alphas")
    rp = sub.add_parser("report", help="optimality report for a saved measure")
    common(rp)
    rp.add_argument("--measure", required=True, help="measure CSV written by 'run'")
    gc = sub.add_parser("grad-check", help="adjoint vs finite-difference gradients for all models and kinds")
    gc.add_argument("--scale", choices=("full", "reduced"), default="reduced")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--directions", type=int, default=20)
    sub.add_parser("list-scenarios", help="print the built-in scenarios")
    return p


def load_config(args) -> ScenarioConfig:
    ref = reference_configs()
    src = args.config
    if Path(src).is_file():
        cfg = ScenarioConfig.from_json(src)
    elif src.removesuffix(".json") in ref:
        cfg = ref[src.removesuffix(".json")]
    else:
        raise ConfigurationError(f"--config: {src!r} is neither a file nor a built-in scenario")
    if args.scale == "reduced":
        cfg = cfg.reduce()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    if args.theta is not None:
        changes["theta"] = args.theta
    if args.restarts is not None:
        changes["restarts"] = args.restarts
    return cfg.replace(**changes) if changes else cfg


def _out_dir(args, cfg) -> Path:
    return Path(args.out) if args.out else Path(cfg.output_dir)


def cmd_run(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args, cfg)
    best = run_scenario(cfg, out, jobs=args.jobs)
    b = best.breakdown
    print(f"{cfg.name}: {best.reason} after {best.iterations} iterations (seed {best.seed})")
    print(f"  objective {b.total:.6e}  terminal {b.terminal_term:.6e}  cost {b.cost_term:.6e}")
    print(f"  support {best.support_size}  max d/alpha {best.report.max_dual / cfg.alpha:.4f}"
          if cfg.alpha > 0 else f"  support {best.support_size}")
    print(f"  artifacts in {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    alphas = _parse_alphas(args.alphas)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    problem = cfg.build_problem()
    results = continuation_sweep(problem, alphas, cfg.lbfgs_options(), _Initializer(cfg))
    write_sweep_csv(out / "sweep.csv", results)
    for i, r in enumerate(results):
        write_iteration_log(out / f"iterations_stage{i}.csv", r.log)
    print("alpha,terminal_term,support_size,measure_norm")
    for row in sweep_rows(results):
        print(f"{row['alpha']:.6g},{row['terminal_term']:.6e},{row['support_size']},{row['measure_norm']:.6e}")
    return 0


def cmd_report(args) -> int:
    cfg = load_config(args)
    problem = cfg.build_problem()
    u = read_measure_csv(args.measure, cfg.frequency_grid(), problem.space)
    rep = optimality_report(problem, u, cfg.lbfgs_options().kkt_tol)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_json(out / "optimality.json")
    print(json.dumps({k: v for k, v in rep.as_dict().items() if not isinstance(v, list)}, indent=1))
    return 0


def cmd_grad_check(args) -> int:
    worst = 0.0
    for label, problem in gradient_check_cases(args.scale):
        err = gradient_check(problem, args.directions, args.seed)
        worst = max(worst, err)
        print(f"{label:28s} {err:.3e}")
    print(f"max relative error {worst:.3e} (tolerance {GRAD_TOL:g})")
    return 0 if worst <= GRAD_TOL else 2


def cmd_list(args) -> int:
    print(f"{'name':32s} {'model':12s} {'kind':12s} {'dof':>8s}")
    for name, cfg in reference_configs().items():
        print(f"{name:32s} {cfg.model:12s} {cfg.kind:12s} {cfg.dof:8d}")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "report": cmd_report, "grad-check": cmd_grad_check,
            "list-scenarios": cmd_list}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, InputError, UsageError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
