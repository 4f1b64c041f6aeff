"""Write every built-in scenario to configs/<name>.json."""

import argparse
from pathlib import Path

from sparseqc.experiments import reference_configs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dir", default=Path(__file__).resolve().parent.parent / "configs", type=Path)
    args = ap.parse_args()
    args.dir.mkdir(parents=True, exist_ok=True)
    for name, cfg in reference_configs().items():
        cfg.to_json(args.dir / f"{name}.json")
        print(args.dir / f"{name}.json")


if __name__ == "__main__":
    main()
