"""Generate the default synthetic corpus and train the full model over several seeds.

Usage: python scripts/run_synthetic_experiment.py --out runs/synth4 [--seeds 0 1 2] [--config C]
Writes one directory per seed plus summary.csv (seed, best_epoch, val_acc, minutes).
"""

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from audron import cli
from audron.traineval import TrainHistory


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--data-seed", type=int, default=42)
    ap.add_argument("--config", default=None)
    args = ap.parse_args(argv)

    data = args.out / "data"
    extra = ["--config", args.config] if args.config else []
    if not (data / "manifest.csv").exists():
        code = cli.main(["gen", "--out", str(data), "--seed", str(args.data_seed)] + extra)
        if code:
            return code
    rows = []
    for seed in args.seeds:
        out = args.out / f"seed{seed}"
        started = time.perf_counter()
        code = cli.main(["-v", "train", "--manifest", str(data / "manifest.csv"), "--task", "synth4",
                         "--out", str(out), "--seed", str(seed)] + extra)
        if code:
            return code
        minutes = (time.perf_counter() - started) / 60
        best = TrainHistory.from_csv((out / "history.csv").read_text()).best
        rows.append((seed, best.epoch, best.val_acc, round(minutes, 2)))
    with open(args.out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "best_epoch", "val_acc", "minutes"])
        w.writerows(rows)
    accs = np.array([r[2] for r in rows])
    print(f"val_acc {100 * accs.mean():.2f} +- {100 * accs.std():.2f} % over {len(rows)} seeds")
    return 0


if __name__ == "__main__":
    sys.exit(main())
