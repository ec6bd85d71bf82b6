"""Command-line entry point: ``emodur generate|train|convert|evaluate|report``."""

import argparse
import json
import logging
import sys

from .config import parse_assignments
from .corpus import summarize
from .evaluator import EvalReport
from .experiment import Experiment
from .storage import FileSystem

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file with generator/model/train/loss/eval sections")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value, repeatable",
    )
    common.add_argument("--root-dir", default=".", help="directory relative paths are resolved against")
    common.add_argument("--log-level", choices=LOG_LEVELS, default="INFO")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    common.add_argument("--json", action="store_true", help="print machine-readable JSON instead of a table")
    return common


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="emodur", description="Emotion-conditioned duration modeling over discrete speech units."
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    generate = subparsers.add_parser("generate", parents=[common], help="write a synthetic corpus")
    generate.add_argument("--out", default="corpus.jsonl", help="corpus file, gzip-compressed if it ends with .gz")
    generate.add_argument("--seed", type=int)
    generate.add_argument("--n-utterances", type=int)
    generate.add_argument("--arousal-slope", type=float)
    generate.add_argument("--outlier-rate", type=float)

    train = subparsers.add_parser("train", parents=[common], help="train a duration predictor")
    train.add_argument("--corpus", required=True)
    train.add_argument("--variant", choices=["mse", "l1", "uncert"])
    train.add_argument("--epochs", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--checkpoint", default="model.json")
    train.add_argument("--log", default="train_log.jsonl", help="training log as JSON lines")

    convert = subparsers.add_parser("convert", parents=[common], help="convert a corpus to a target arousal")
    convert.add_argument("--checkpoint", required=True)
    convert.add_argument("--corpus", required=True)
    convert.add_argument("--target-arousal", type=float, required=True)
    convert.add_argument("--out", help="converted corpus file")

    evaluate = subparsers.add_parser("evaluate", parents=[common], help="evaluate over target arousal levels")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--corpus", required=True)
    evaluate.add_argument("--subset", choices=["all", "train", "val", "test"], default="all")
    evaluate.add_argument("--report", default="report.json")
    evaluate.add_argument("--csv", default="report.csv", help="per level seconds for plotting")
    evaluate.add_argument("--threads", type=int)
    evaluate.add_argument("--ser-scores", help="CSV with record_id,target_arousal,ser_prediction")
    evaluate.add_argument("--wvmos-scores", help="CSV with record_id,target_arousal,wvmos")

    report = subparsers.add_parser("report", parents=[common], help="print a saved evaluation report")
    report.add_argument("--report", default="report.json")
    report.add_argument("--csv", help="also write the per level CSV here")
    return parser


def collect_overrides(args):
    """Merge ``--set`` assignments with the dedicated shortcut flags."""
    overrides = parse_assignments(args.overrides)
    shortcuts = {
        "generate": {
            "seed": "generator.seed",
            "n_utterances": "generator.n_utterances",
            "arousal_slope": "generator.arousal_slope",
            "outlier_rate": "generator.outlier_rate",
        },
        "train": {"seed": "train.seed", "variant": "train.variant", "epochs": "train.epochs"},
        "evaluate": {"threads": "eval.thread_num"},
    }
    for attr, name in shortcuts.get(args.command, {}).items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[name] = str(value)
    return overrides


def _print(args, data, table):
    if args.json:
        print(json.dumps(data, indent=2))
    else:
        print(table)


def run(args):
    log_level = logging.WARNING if args.quiet else getattr(logging, args.log_level)
    if args.command == "report":
        storage = FileSystem(args.root_dir)
        logging.basicConfig(level=log_level, stream=sys.stderr)
        result = EvalReport.from_dict(json.loads(storage.read(args.report)))
        if args.csv:
            storage.write(args.csv, result.to_csv())
        _print(args, result.to_dict(), result.format_table())
        return 0

    experiment = Experiment(
        storage={"backend": "FileSystem", "root_dir": args.root_dir},
        log_level=log_level,
        config=args.config,
        overrides=collect_overrides(args),
    )
    if args.command == "generate":
        stats = summarize(experiment.generate(args.out))
        _print(args, stats, "\n".join(f"{name}: {value}" for name, value in stats.items()))
    elif args.command == "train":
        result = experiment.train(args.corpus, args.checkpoint, args.log)
        final = [entry for entry in result.log if entry["epoch"] == result.best_epoch]
        data = {"best_epoch": result.best_epoch, "stopped_early": result.stopped_early, "best": final}
        table = "\n".join(
            [f"best epoch: {result.best_epoch} (stopped early: {result.stopped_early})"]
            + [f"{entry['split']}: loss {entry['loss']:.5f}" for entry in final]
        )
        _print(args, data, table)
    elif args.command == "convert":
        converted = experiment.convert(args.checkpoint, args.corpus, args.target_arousal, args.out)
        stats = summarize(converted)
        _print(args, stats, "\n".join(f"{name}: {value}" for name, value in stats.items()))
    elif args.command == "evaluate":
        result = experiment.evaluate(
            args.checkpoint,
            args.corpus,
            args.report,
            args.csv,
            args.subset,
            args.ser_scores,
            args.wvmos_scores,
        )
        _print(args, result.to_dict(), result.format_table())
    return 0


def main(argv=None):
    """Run the CLI and return the exit code; usage errors exit with 2."""
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except KeyError as e:
        print(f"error: {e.args[0] if e.args else e}", file=sys.stderr)
    except (ValueError, TypeError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
    return 1
