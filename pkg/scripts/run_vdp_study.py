"""Run the Van der Pol study end to end for one config.

    python scripts/run_vdp_study.py configs/vdp_t400.cfg [--methods efficient nmpc]

Writes the dataset, prediction errors and one tracking CSV per method into
the config's output directory and prints a short summary.
"""

import argparse
import sys
from pathlib import Path

from kerodeepc.cli import main as cli
from kerodeepc.config import load_config


def summary_row(path: Path) -> list[str]:
    for line in path.read_text().splitlines():
        if line.startswith(("summary,", "mean,")):
            return line.split(",")
    raise RuntimeError(f"no summary row in {path}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config", type=Path)
    ap.add_argument("--methods", nargs="+", default=["efficient", "nmpc"])
    args = ap.parse_args()
    out = Path(load_config(args.config).output.dir)
    cfg = ["--config", str(args.config)]
    for cmd in (["datagen"], ["predict-eval"]):
        if (code := cli(cmd + cfg)) != 0:
            return code
    pe = summary_row(out / "prediction_errors.csv")
    print(f"mean prediction error: product {float(pe[2]):.4f}  stacked {float(pe[4]):.4f}")
    for method in args.methods:
        if (code := cli(["track", "--method", method] + cfg)) != 0:
            return code
        row = summary_row(out / f"tracking_{method}.csv")
        print(f"{method:>12}: mean tracking error {float(row[1]):.4f}  mean solve time {float(row[4]):.4f} s  {row[5]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
