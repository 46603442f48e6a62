"""Command-line entry point.

On failure every command prints one line ``error: <tag>: <message>`` to
stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from guidedflow.config import ConfigError, load_config
from guidedflow.synthetic import KINDS, SyntheticSpec

EXIT_FAILURE = 1
EXIT_USAGE = 2


class CommandError(Exception):
    def __init__(self, tag: str, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.tag, self.code = tag, code


def _train(args) -> int:
    from guidedflow.train import train

    cfg = load_config(args.config, data=args.data, checkpoint=args.checkpoint,
                      iterations=args.iterations, seed=args.seed, resume=args.resume)

    def progress(rec):
        print(json.dumps(rec), flush=True)

    res = train(cfg, progress=None if args.quiet else progress)
    print(f"saved {cfg.checkpoint} after {res.seconds:.1f}s")
    return 0


def _evaluate(args) -> int:
    from guidedflow.train import evaluate_checkpoint

    mcfg = load_config(args.config).model() if args.config else None
    report = evaluate_checkpoint(args.checkpoint, args.data, mcfg)
    print(json.dumps(report.to_dict(), indent=1))
    return 0


def _infer(args) -> int:
    from guidedflow.train import infer

    mcfg = load_config(args.config).model() if args.config else None
    written = infer(args.checkpoint, args.img1, args.img2, args.out, dump_sgu=args.dump_sgu, cfg=mcfg)
    for k, v in written.items():
        print(f"{k}: {v}")
    return 0


def _make_data(args) -> int:
    from guidedflow.dataset import make_dataset

    spec = SyntheticSpec(kind=args.kind, size=(args.height, args.width), max_motion=args.max_motion)
    path = make_dataset(spec, args.count, args.out, seed=args.seed)
    print(f"wrote {args.count} samples, manifest {path}")
    return 0


def _verify(args) -> int:
    from guidedflow.verify import format_result, run_all

    results = run_all(report=lambda r: print(format_result(r), flush=True))
    failed = [r for r in results if not r.passed]
    total = sum(r.seconds for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {total:.1f}s")
    if failed:
        raise CommandError("verify_failed", "failing checks: " + ", ".join(r.name for r in failed))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="guidedflow", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="dataset manifest (overrides the config)")
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="initialise from this checkpoint")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded, reproducible run (the default for this engine)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_train)

    p = sub.add_parser("evaluate", help="EPE/F1 metrics of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--config", help="architecture config (default: stored with the checkpoint)")
    p.set_defaults(func=_evaluate)

    p = sub.add_parser("infer", help="flow for one image pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--img1", required=True)
    p.add_argument("--img2", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-sgu", action="store_true", help="also write interpolation maps and flows")
    p.add_argument("--config")
    p.set_defaults(func=_infer)

    p = sub.add_parser("make-data", help="write a synthetic dataset")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--max-motion", type=int, default=6)
    p.set_defaults(func=_make_data)

    p = sub.add_parser("verify", help="gradient, oracle and invariant checks")
    p.set_defaults(func=_verify)
    return ap


def _tag_for(exc: BaseException) -> str:
    from guidedflow.checkpoint import CheckpointError
    from guidedflow.flo import FloFormatError
    from guidedflow.train import TrainingError

    if isinstance(exc, TrainingError):
        return exc.tag
    if isinstance(exc, ConfigError):
        return "config_error"
    if isinstance(exc, CheckpointError):
        return "checkpoint_error"
    if isinstance(exc, FloFormatError):
        return "flo_format_error"
    if isinstance(exc, FileNotFoundError):
        return "missing_file"
    if isinstance(exc, ValueError):
        return "invalid_input"
    return "internal_error"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CommandError as e:
        print(f"error: {e.tag}: {e}", file=sys.stderr)
        return e.code
    except Exception as e:
        msg = str(e).replace("\n", " ")
        print(f"error: {_tag_for(e)}: {msg}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
