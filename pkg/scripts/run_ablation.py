"""Branch ablation on the synthetic corpus: the four three-branch models and the full model.

Usage: python scripts/run_ablation.py --out runs/ablation [--manifest M] [--seed 0] [--config C]
Generates the default corpus under OUT/data unless --manifest is given; writes OUT/ablation.csv.
"""

import argparse
import sys
from pathlib import Path

from audron import cli


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--manifest", type=Path, default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", default=None)
    args = ap.parse_args(argv)

    extra = ["--config", args.config] if args.config else []
    manifest = args.manifest
    if manifest is None:
        manifest = args.out / "data" / "manifest.csv"
        if not manifest.exists():
            code = cli.main(["gen", "--out", str(manifest.parent)] + extra)
            if code:
                return code
    code = cli.main(["-v", "ablate", "--manifest", str(manifest), "--out", str(args.out), "--seed", str(args.seed)]
                    + extra)
    if code == 0:
        print((args.out / "ablation.csv").read_text(), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
