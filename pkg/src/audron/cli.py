"""Command-line entry point: gen, train, eval, spectrogram, ablate.

Exit codes: 0 success, 2 invalid arguments or config, 3 I/O failure,
4 data error, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import config as runconfig
from . import dataio, dsp, pipeline, synthgen
from .dataio import LabelError, Task, WavFormatError
from .model import BRANCHES
from .tensor import NumericError
from .tensor.checkpoint import CheckpointError
from .traineval import DataError as TrainDataError

EXIT_ARGS, EXIT_IO, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4, 5

_BRANCH_ALIASES = {"mfcc": "mfcc", "stft": "stft", "stft-cnn": "stft", "rnn": "rnn", "lstm": "rnn",
                   "ae": "ae", "autoencoder": "ae"}


class UsageError(ValueError):
    pass


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Appends defaults, except for required flags and help texts that already state theirs."""

    def _get_help_string(self, action):
        if action.required or "(default:" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


def parse_branches(text: str) -> tuple:
    names = []
    for part in text.split(","):
        key = part.strip().lower()
        if key not in _BRANCH_ALIASES:
            raise UsageError(f"unknown branch {part!r}; choose from {', '.join(BRANCHES)}")
        names.append(_BRANCH_ALIASES[key])
    chosen = tuple(b for b in BRANCHES if b in names)
    if len(chosen) < 3:
        raise UsageError("--ablate needs at least three branches")
    return chosen


def _load_config(args, seed_overrides_train: bool = True) -> runconfig.RunConfig:
    cfg = runconfig.load(args.config) if getattr(args, "config", None) else runconfig.RunConfig()
    if seed_overrides_train and getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _echo_config(cfg: runconfig.RunConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.txt").write_text(runconfig.to_text(cfg), encoding="utf-8")


def cmd_gen(args) -> None:
    # the gen seed drives synthesis only
    cfg = _load_config(args, seed_overrides_train=False)
    n_train = args.per_class_train if args.per_class_train is not None else cfg.data.per_class_train
    n_val = args.per_class_val if args.per_class_val is not None else cfg.data.per_class_val
    if n_train < 1 or n_val < 1:
        raise UsageError("per-class counts must be >= 1")
    manifest = synthgen.generate_dataset(args.out, n_train, n_val, cfg.synth, args.seed)
    _echo_config(cfg, args.out)
    counts = manifest.counts()
    print(f"wrote {len(manifest.rows)} clips to {args.out} "
          f"(train {sum(v for (s, _), v in counts.items() if s == 'train')}, "
          f"val {sum(v for (s, _), v in counts.items() if s == 'val')})")


def cmd_train(args) -> None:
    cfg = _load_config(args)
    branches = parse_branches(args.ablate) if args.ablate else None
    splits = pipeline.prepare(args.manifest, Task(args.task), cfg.feature_config())
    _echo_config(cfg, args.out)
    result = pipeline.run_train(splits, cfg, args.out, branches)
    best = result.history.best
    print(f"best epoch {best.epoch}: val_acc {best.val_acc:.4f} ({len(result.history.records)} epochs, "
          f"{result.seconds / 60:.1f} min)")


def cmd_eval(args) -> None:
    report = pipeline.run_eval(args.manifest, args.checkpoint, args.out, args.split)
    print(f"accuracy {report.accuracy:.4f} precision {report.precision:.4f} "
          f"recall {report.recall:.4f} f1 {report.f1:.4f}")


def cmd_spectrogram(args) -> None:
    cfg = _load_config(args)
    clip = dataio.read_wav(args.input)
    if clip.sample_rate_hz != cfg.features.sample_rate_hz:
        clip = dsp.resample_linear(clip, cfg.features.sample_rate_hz)
    spec = dsp.stft(clip, cfg.stft)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    dsp.spectrogram_to_pgm(spec, args.out)
    print(f"wrote {spec.mags.shape[0]}x{spec.mags.shape[1]} PGM to {args.out}")


def cmd_ablate(args) -> None:
    cfg = _load_config(args)
    splits = pipeline.prepare(args.manifest, Task(args.task) if args.task else None, cfg.feature_config())
    _echo_config(cfg, args.out)
    rows = pipeline.run_ablation(splits, cfg, args.out)
    for r in rows:
        print(f"{r.title:40s} acc {r.report.accuracy:.4f} drop {r.drop:.2f}")


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="audron", description="Acoustic drone recognition pipeline.",
                                     formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the synthetic WAV corpus and manifest", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--per-class-train", type=int, default=None,
                   help="clips per class in train (default: data.per_class_train, 65)")
    p.add_argument("--per-class-val", type=int, default=None,
                   help="clips per class in val (default: data.per_class_val, 20)")
    p.add_argument("--seed", type=int, default=42, help="master seed")
    p.add_argument("--config", default=None, help="key=value run config")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a manifest", formatter_class=fmt)
    p.add_argument("--manifest", required=True, help="manifest.csv (paths relative to its directory)")
    p.add_argument("--task", required=True, choices=[t.value for t in Task], help="label set")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="key=value run config")
    p.add_argument("--ablate", default=None, help="comma-separated branches to enable, e.g. mfcc,stft,rnn")
    p.add_argument("--seed", type=int, default=None, help="overrides train.seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split", formatter_class=fmt)
    p.add_argument("--manifest", required=True, help="manifest.csv")
    p.add_argument("--checkpoint", required=True, help="best.ckpt (with sibling best.cfg)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="val", choices=["train", "val"], help="split to evaluate")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spectrogram", help="render a WAV's log-magnitude STFT as 8-bit PGM", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="input WAV")
    p.add_argument("--out", required=True, help="output PGM")
    p.add_argument("--config", default=None, help="key=value run config (stft.* keys)")
    p.set_defaults(func=cmd_spectrogram)

    p = sub.add_parser("ablate", help="train the four 3-branch configs and the full model", formatter_class=fmt)
    p.add_argument("--manifest", required=True, help="manifest.csv")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--task", default=None, choices=[t.value for t in Task], help="label set (inferred if omitted)")
    p.add_argument("--config", default=None, help="key=value run config")
    p.add_argument("--seed", type=int, default=None, help="overrides train.seed")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    threads = os.environ.get("AUDRON_THREADS")
    try:
        limit = int(threads) if threads else None
    except ValueError:
        print(f"audron: AUDRON_THREADS must be an integer, got {threads!r}", file=sys.stderr)
        return EXIT_ARGS
    try:
        with threadpool_limits(limits=limit):
            args.func(args)
    except (UsageError, runconfig.ConfigError, synthgen.ParameterError) as exc:
        print(f"audron: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except NumericError as exc:
        print(f"audron: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (dataio.DataError, LabelError, WavFormatError, TrainDataError, CheckpointError, KeyError) as exc:
        print(f"audron: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"audron: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
