"""Command-line entry point: ``dualcorr {gen,train,eval,ablate,gradcheck,viz}``.

Every command exits 0 on success. On failure it prints a single
``dualcorr: error: ...`` line to stderr and exits 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .ablation import AXES, run_ablation
from .config import SEED_ENV, ConfigError, RunConfig, load_run_config
from .model import DCNet
from .synthgen import GenConfig, GenConfigError, load_dataset, load_sample, make_dataset
from .train_eval import TrainingDiverged, evaluate, toy_gradient_check, train
from .viz import write_heatmaps

logger = logging.getLogger("dualcorr")

GRADCHECK_TOLERANCE = 1e-3


def _seed(arg: int | None) -> int:
    if arg is not None:
        return arg
    return int(os.environ.get(SEED_ENV, "0"))


def _run_config(args) -> RunConfig:
    return load_run_config(args.config, args.set or ())


def cmd_gen(args) -> int:
    cfg = GenConfig.from_lines(args.set or ())
    manifest = make_dataset(args.n, _seed(args.seed), cfg, args.out, args.test_fraction)
    print(f"wrote {args.n} samples to {manifest.parent}")
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run.write(out / "config.txt")
    samples = load_dataset(args.data, run.train_split)
    logger.info("training on %d samples for %d steps", len(samples), run.train.optimizer.steps)
    result = train(samples, run.train, log_file=out / "metrics.log")
    result.model.save(out / "checkpoint")
    if (Path(args.data) / f"{run.test_split}.txt").exists():
        test = load_dataset(args.data, run.test_split)
        if test:
            report = evaluate(test, result.model)
            report.write(out)
            print(report.to_text(), end="")
    print(f"checkpoint written to {out / 'checkpoint'}")
    return 0


def cmd_eval(args) -> int:
    model = DCNet.load(args.checkpoint)
    samples = load_dataset(args.data, args.split)
    report = evaluate(samples, model)
    if args.out:
        report.write(args.out)
    print(report.to_text(), end="")
    return 0


def cmd_ablate(args) -> int:
    run = _run_config(args)
    seeds = args.seeds if args.seeds else [run.seed]
    train_samples = load_dataset(args.data, run.train_split)
    test_samples = load_dataset(args.data, run.test_split)
    values = args.values.split(",") if args.values else None
    table = run_ablation(args.axis, train_samples, test_samples, run.train, seeds, values)
    text = table.to_text()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        run.write(out / "config.txt")
        (out / f"ablation_{args.axis}.tsv").write_text(text)
    print(text, end="")
    return 0


def cmd_gradcheck(args) -> int:
    err = toy_gradient_check(_seed(args.seed))
    verdict = "PASS" if err < GRADCHECK_TOLERANCE else "FAIL"
    print(f"max relative error {err:.3e} {verdict}")
    return 0 if verdict == "PASS" else 1


def cmd_viz(args) -> int:
    model = DCNet.load(args.checkpoint)
    sample = load_sample(args.sample)
    paths = write_heatmaps(model, sample, args.out)
    print(f"wrote {len(paths)} heatmaps to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualcorr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    p.add_argument("--out", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    overrides(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a dataset split")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None, help="directory for report.txt and report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train variants along one config axis")
    p.add_argument("--axis", required=True, choices=sorted(AXES))
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seeds", type=int, nargs="+", default=None)
    p.add_argument("--values", default=None, help="comma-separated subset of the axis values")
    overrides(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--scale", choices=["toy"], default="toy")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("viz", help="write confidence and word-similarity heatmaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", required=True, help="one sample directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, GenConfigError, TrainingDiverged, FileNotFoundError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"dualcorr: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
