"""Command-line interface.

Subcommands: build, split, optimize, evaluate, errors, ablate, report.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 energy
measurement unavailable.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import energy, features, forest, metrics, pipeline, refdata
from .energy import CounterUnavailable
from .exceptions import ConfigError, DataError
from .flowmeter import DEFAULT_ATTACK_RULES
from .forest import Hyperparams
from .optimizer import SearchSpace
from .pipeline import RunConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MEASUREMENT = 4


def _setup_logging(outdir=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s", force=True)
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        # the run log is the only artifact that carries timestamps
        handler = logging.FileHandler(outdir / "run.log")
        handler.setFormatter(logging.Formatter(
            "%(asctime)s %(name)s %(levelname)s %(message)s"))
        logging.getLogger().addHandler(handler)


def _check_meter(kind: str):
    if kind == "hardware":
        energy.HardwareMeter().counters()  # raises CounterUnavailable


def _attack_rules(args):
    if getattr(args, "attack_map", None):
        return refdata.load_attack_rules(args.attack_map)
    return DEFAULT_ATTACK_RULES


# ---------------------------------------------------------------------------
# subcommands

def cmd_build(args) -> int:
    _setup_logging()
    dataset, report = pipeline.build_dataset(
        args.capture, args.labels,
        idle_timeout_ms=args.idle_timeout,
        active_timeout_ms=args.active_timeout,
        close_on_fin_rst=args.close_on_fin_rst,
        ts_tolerance_ms=args.ts_tolerance,
        attack_rules=_attack_rules(args))
    comments = {"tool": f"greenflow {_version()}", "seed": args.seed}
    for name, digest in sorted(report["capture_sha256"].items()):
        comments[f"source_sha256_{name}"] = digest
    features.write_dataset(args.output, dataset, comments)
    if args.drop_report:
        pipeline._write_json(args.drop_report, report)
    logger.info("wrote %d rows to %s (dropped: %s)", len(dataset),
                args.output, report["drops"])
    return EXIT_OK


def cmd_split(args) -> int:
    _setup_logging()
    dataset, comments = features.read_dataset(args.input)
    train, test = pipeline.split_dataset(dataset, args.ratio, args.seed)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    comments = dict(comments)
    comments.update({"seed": args.seed, "split_ratio": args.ratio})
    features.write_dataset(outdir / "train.csv", train, comments)
    features.write_dataset(outdir / "test.csv", test, comments)
    logger.info("split %d rows into %d train / %d test", len(dataset),
                len(train), len(test))
    return EXIT_OK


def _space_from_args(args) -> SearchSpace:
    return SearchSpace(
        max_depth=tuple(args.max_depth_range),
        min_samples_leaf=tuple(args.min_samples_leaf_range),
        min_samples_split=tuple(args.min_samples_split_range),
        max_features=tuple(args.max_features_range),
        n_estimators=tuple(args.n_estimators_range),
    )


def cmd_optimize(args) -> int:
    _setup_logging(args.output)
    _check_meter(args.meter)
    dataset, _ = features.read_dataset(args.input)
    config = RunConfig(seed=args.seed, split_ratio=args.ratio,
                       n_trials=args.trials, algorithms=tuple(args.algorithm),
                       meter=args.meter, search_on_test=args.search_on_test,
                       val_ratio=args.val_ratio, space=_space_from_args(args))
    summary = pipeline.run_experiment(dataset, config, args.output)
    for row in summary["rows"]:
        logger.info("%-14s %-10s uwh=%.6g mcc=%.4f", row["algorithm"],
                    row["variant"], row["uwh_per_sample"], row["mcc"])
    return EXIT_OK


def _hp_from_args(args) -> Hyperparams:
    max_features = args.max_features
    if max_features not in (None, "sqrt"):
        max_features = int(max_features)
    if args.algorithm == "single-tree":
        return Hyperparams(algorithm=args.algorithm, max_depth=args.max_depth,
                           min_samples_leaf=args.min_samples_leaf,
                           min_samples_split=args.min_samples_split)
    return Hyperparams(
        algorithm=args.algorithm, max_depth=args.max_depth,
        min_samples_leaf=args.min_samples_leaf,
        min_samples_split=args.min_samples_split,
        max_features="sqrt" if max_features is None else max_features,
        n_estimators=args.n_estimators)


def cmd_evaluate(args) -> int:
    _setup_logging()
    _check_meter(args.meter)
    meter = energy.make_meter(args.meter)

    if args.variants:
        # ablation path: retrain recorded variant hyperparameters on a
        # fresh (re-split) dataset without re-optimizing
        if not args.input:
            raise ConfigError("--variants needs -i/--input dataset")
        dataset, _ = features.read_dataset(args.input)
        with open(args.variants) as fh:
            payload = json.load(fh)
        variants = {name: Hyperparams(**info["hyperparams"])
                    for name, info in payload["variants"].items()}
        config = RunConfig(seed=args.seed, split_ratio=args.ratio,
                           meter=args.meter)
        summary = pipeline.rerun_variants(dataset, variants, config,
                                          args.output)
        for row in summary["rows"]:
            logger.info("%-14s %-10s uwh=%.6g mcc=%.4f", row["algorithm"],
                        row["variant"], row["uwh_per_sample"], row["mcc"])
        return EXIT_OK

    if not args.test:
        raise ConfigError("need --test dataset (or --variants with --input)")
    test, _ = features.read_dataset(args.test)
    if args.model:
        model = forest.deserialize(Path(args.model).read_bytes())
        hp = model.hyperparams
    else:
        if not args.train:
            raise ConfigError("need --model, or --train plus hyperparameters")
        train, _ = features.read_dataset(args.train)
        hp = _hp_from_args(args)
        model = forest.train(train.X, train.y, hp, args.seed)

    state = {}

    def workload():
        labels, visits = model.predict_counted(test.X)
        state["labels"] = labels
        return labels, int(visits.sum())

    energy_report = meter.measure(workload)
    cm = metrics.confusion(state["labels"], test.y)
    report = metrics.report_dict(cm, energy_report.uwh_per_sample,
                                 variant=args.variant_name,
                                 algorithm=hp.algorithm)
    report["seed"] = args.seed
    report["meter"] = energy_report.meter
    report["samples"] = energy_report.samples
    report["total_uj"] = energy_report.total_uj
    report["low_confidence"] = energy_report.low_confidence
    if args.save_model:
        Path(args.save_model).write_bytes(forest.serialize(model))
    if args.output:
        pipeline._write_json(args.output, report)
    logger.info(json.dumps(report, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_errors(args) -> int:
    _setup_logging()
    model = forest.deserialize(Path(args.model).read_bytes())
    test, _ = features.read_dataset(args.test)
    breakdown = pipeline.error_analysis(model, test)
    payload = breakdown.as_dict()
    if args.output:
        pipeline._write_json(args.output, payload)
    logger.info(json.dumps(payload, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_ablate(args) -> int:
    _setup_logging()
    dataset, comments = features.read_dataset(args.input)
    predicate = pipeline.parse_predicate(args.where)
    kept, removed = pipeline.ablate(dataset, predicate)
    comments = dict(comments)
    comments["ablated"] = f"{args.where} ({removed} rows removed)"
    features.write_dataset(args.output, kept, comments)
    logger.info("removed %d of %d rows (%s)", removed, len(dataset), args.where)
    return EXIT_OK


def cmd_report(args) -> int:
    _setup_logging()
    summary = pipeline.assemble_summary(args.run_dir)
    width = (14, 10, 14, 8, 10, 8)
    header = ("algorithm", "variant", "uwh/sample", "mcc", "b.acc(%)", "f1(%)")
    line = "  ".join(h.ljust(w) for h, w in zip(header, width))
    print(line)
    print("-" * len(line))
    for row in summary["rows"]:
        print("  ".join([
            row["algorithm"].ljust(width[0]),
            row["variant"].ljust(width[1]),
            f"{row['uwh_per_sample']:.6g}".ljust(width[2]),
            f"{row['mcc']:.4f}".ljust(width[3]),
            f"{row['balanced_accuracy_pct']:.2f}".ljust(width[4]),
            f"{row['f1_pct']:.2f}".ljust(width[5]),
        ]))
    if args.output:
        pipeline._write_summary_csv(args.output, summary["rows"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _version() -> str:
    from . import __version__
    return __version__


def _add_range(parser, name, default):
    parser.add_argument(name, nargs=2, type=int, default=list(default),
                        metavar=("LO", "HI"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greenflow",
        description="Energy-aware flow classification pipeline")
    parser.add_argument("--version", action="version",
                        version=f"greenflow {_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="captures + labels -> dataset CSV")
    p.add_argument("--capture", action="append", required=True,
                   help="pcap file; repeatable")
    p.add_argument("--labels", action="append", required=True,
                   help="tab-separated label file; repeatable")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--drop-report", help="write drop/parse counters JSON here")
    p.add_argument("--idle-timeout", type=int, default=120000,
                   help="flow idle timeout, ms (default 120000)")
    p.add_argument("--active-timeout", type=int, default=1800000,
                   help="flow active timeout, ms (default 1800000)")
    p.add_argument("--ts-tolerance", type=int, default=1000,
                   help="label join window around flow start, ms")
    p.add_argument("--close-on-fin-rst", action="store_true",
                   help="also close flows on TCP teardown")
    p.add_argument("--attack-map",
                   help="JSON file overriding the attack-type substring rules")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("split", help="dataset -> train.csv/test.csv")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("optimize",
                       help="random search + variant selection + reports")
    p.add_argument("-i", "--input", required=True, help="dataset CSV")
    p.add_argument("-o", "--output", required=True, help="run directory")
    p.add_argument("--algorithm", action="append",
                   choices=list(forest.ALGORITHMS),
                   help="repeatable; default single-tree")
    p.add_argument("--trials", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--val-ratio", type=float, default=0.1)
    p.add_argument("--search-on-test", action="store_true",
                   help="score search trials directly on the test split")
    p.add_argument("--meter", choices=("proxy", "hardware", "auto"),
                   default="proxy")
    _add_range(p, "--max-depth-range", SearchSpace().max_depth)
    _add_range(p, "--min-samples-leaf-range", SearchSpace().min_samples_leaf)
    _add_range(p, "--min-samples-split-range", SearchSpace().min_samples_split)
    _add_range(p, "--max-features-range", SearchSpace().max_features)
    _add_range(p, "--n-estimators-range", SearchSpace().n_estimators)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate",
                       help="evaluate a model, hyperparameters, or recorded "
                            "variants on a dataset")
    p.add_argument("--model", help="serialized model file")
    p.add_argument("--variants", help="variants.json from a previous run")
    p.add_argument("-i", "--input", help="dataset CSV (with --variants)")
    p.add_argument("--train", help="training split CSV (with hyperparameters)")
    p.add_argument("--test", help="evaluation split CSV")
    p.add_argument("-o", "--output", help="report JSON path (or run dir with "
                                          "--variants)")
    p.add_argument("--algorithm", choices=list(forest.ALGORITHMS),
                   default="single-tree")
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-samples-leaf", type=int, default=1)
    p.add_argument("--min-samples-split", type=int, default=2)
    p.add_argument("--max-features", default=None)
    p.add_argument("--n-estimators", type=int, default=100)
    p.add_argument("--variant-name", default="custom")
    p.add_argument("--save-model", help="also write the trained model here")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--meter", choices=("proxy", "hardware", "auto"),
                   default="proxy")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("errors", help="false-negative breakdown for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_errors)

    p = sub.add_parser("ablate", help="drop rows matching a metadata predicate")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--where", required=True,
                   help="field=value, e.g. attack_type=port-scan")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="summary table for a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("-o", "--output", help="also write summary CSV here")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "optimize" and not args.algorithm:
        args.algorithm = ["single-tree"]
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CounterUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MEASUREMENT
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
