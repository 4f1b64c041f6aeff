"""Alpha-continuation sweep: terminal term and support size against the cost weight.

    python scripts/sweep.py --scenario two_pes_fourier_reduced --alphas 0.3 1 3 10
"""

import argparse
from pathlib import Path

from sparseqc.experiments import _Initializer, reference_configs
from sparseqc.optimizer import continuation_sweep, sweep_rows, write_iteration_log, write_sweep_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenario", default="two_pes_fourier_reduced")
    ap.add_argument("--alphas", nargs="+", type=float, default=[0.3, 1.0, 3.0, 10.0])
    ap.add_argument("--max-iters", type=int, default=150)
    ap.add_argument("--out", default=None, type=Path)
    args = ap.parse_args()

    cfg = reference_configs()[args.scenario]
    cfg = cfg.replace(optimizer={**cfg.optimizer, "max_iters": args.max_iters})
    out = args.out or Path(cfg.output_dir) / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    results = continuation_sweep(cfg.build_problem(), args.alphas, cfg.lbfgs_options(), _Initializer(cfg))
    write_sweep_csv(out / "sweep.csv", results)
    for i, r in enumerate(results):
        write_iteration_log(out / f"iterations_stage{i}.csv", r.log)
    print(f"{'alpha':>8s} {'terminal':>10s} {'support':>8s} {'mass':>10s}")
    for row in sweep_rows(results):
        print(f"{row['alpha']:8.3g} {row['terminal_term']:10.3e} {row['support_size']:8d} {row['measure_norm']:10.3e}")
    print(f"written to {out}")


if __name__ == "__main__":
    main()
