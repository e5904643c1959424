"""End-to-end orchestration: captures to datasets, splits, searches,
variant reports, error analysis and ablation.

Every artifact a run writes is deterministic for a fixed (inputs, seed,
proxy meter): JSON keys are sorted, floats use round-trip formatting, and
nothing but the run log carries wall-clock timestamps.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import capture, energy, features, flowmeter, forest, metrics, optimizer
from .exceptions import ConfigError, DataError
from .features import Dataset
from .flowmeter import DEFAULT_ATTACK_RULES
from .forest import Hyperparams
from .optimizer import VARIANTS, SearchSpace, Trial

logger = logging.getLogger(__name__)


class MissingMetadata(DataError):
    """Dataset rows lack the metadata needed for error analysis."""


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    split_ratio: float = 0.8
    n_trials: int = 64
    algorithms: tuple = ("single-tree",)
    meter: str = "proxy"
    search_on_test: bool = False   # score search trials on the test split
    val_ratio: float = 0.1         # holdout carved from train otherwise
    space: SearchSpace = field(default_factory=SearchSpace)

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if not 0.0 < self.val_ratio < 1.0:
            raise ConfigError(f"val_ratio must be in (0, 1), got {self.val_ratio}")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        for algo in self.algorithms:
            if algo not in forest.ALGORITHMS:
                raise ConfigError(f"unknown algorithm {algo!r}")
        if self.meter not in ("proxy", "hardware", "auto"):
            raise ConfigError(f"unknown meter {self.meter!r}")

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "split_ratio": self.split_ratio,
            "n_trials": self.n_trials,
            "algorithms": list(self.algorithms),
            "meter": self.meter,
            "search_on_test": self.search_on_test,
            "val_ratio": self.val_ratio,
            "space": {
                "max_depth": list(self.space.max_depth),
                "min_samples_leaf": list(self.space.min_samples_leaf),
                "min_samples_split": list(self.space.min_samples_split),
                "max_features": list(self.space.max_features),
                "n_estimators": list(self.space.n_estimators),
            },
        }


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# dataset building

def build_dataset(capture_paths, label_paths, *,
                  idle_timeout_ms=flowmeter.IDLE_TIMEOUT_MS,
                  active_timeout_ms=flowmeter.ACTIVE_TIMEOUT_MS,
                  close_on_fin_rst=False, ts_tolerance_ms=1000,
                  attack_rules=DEFAULT_ATTACK_RULES):
    """Parse captures, aggregate flows, join labels, vectorize.

    Returns (Dataset, build report dict).  Decoder problems never abort the
    build: malformed frames, skipped frames and truncated trailing records
    are counted per capture, and unmatched or conflicting flows land in the
    drop report.
    """
    flows = []
    capture_stats = []
    hashes = {}
    for path in capture_paths:
        path = Path(path)
        hashes[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
        meter = flowmeter.FlowMeter(idle_timeout_ms=idle_timeout_ms,
                                    active_timeout_ms=active_timeout_ms,
                                    close_on_fin_rst=close_on_fin_rst)
        decoded = malformed = skipped = 0
        with open(path, "rb") as fh:
            reader = capture.read_capture(fh)
            for frame, ts in reader:
                try:
                    pkt = capture.decode_frame(frame, ts)
                except capture.MalformedHeader:
                    malformed += 1
                    continue
                if pkt is None:
                    skipped += 1
                    continue
                decoded += 1
                meter.ingest(pkt)
        file_flows = meter.flush()
        flows.extend(file_flows)
        capture_stats.append({
            "capture": path.name,
            "records": reader.records,
            "truncated_records": reader.truncated,
            "decoded_packets": decoded,
            "malformed_frames": malformed,
            "skipped_frames": skipped,
            "flows": len(file_flows),
        })
        logger.info("%s: %d packets -> %d flows", path.name, decoded,
                    len(file_flows))

    label_stats = flowmeter.LabelFileStats()
    records = []
    for path in label_paths:
        with open(path) as fh:
            records.extend(flowmeter.parse_label_file(fh, label_stats))

    labeled, drops = flowmeter.join_labels(
        flows, records, ts_tolerance_ms=ts_tolerance_ms,
        attack_rules=attack_rules)
    drops.malformed_rows = label_stats.malformed_rows

    dataset = features.from_samples(features.flow_to_sample(f) for f in labeled)
    report = {
        "captures": capture_stats,
        "capture_sha256": hashes,
        "label_rows": label_stats.rows,
        "flows_total": len(flows),
        "flows_labeled": len(labeled),
        "drops": drops.as_dict(),
    }
    return dataset, report


def split_dataset(dataset: Dataset, ratio: float, seed: int):
    """Seeded uniform shuffle, then cut: |train| = round(ratio * n)."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratio * n))
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:])


# ---------------------------------------------------------------------------
# experiments

def _evaluate_model(hp: Hyperparams, seed, train: Dataset, test: Dataset,
                    meter, variant: str):
    model = forest.train(train.X, train.y, hp, seed)

    state = {}

    def workload():
        labels, visits = model.predict_counted(test.X)
        state["labels"] = labels
        return labels, int(visits.sum())

    energy_report = meter.measure(workload)
    cm = metrics.confusion(state["labels"], test.y)
    report = metrics.report_dict(cm, energy_report.uwh_per_sample,
                                 variant=variant, algorithm=hp.algorithm)
    report["hyperparams"] = optimizer.trial_dict(
        Trial(index=-1, hp=hp, mcc=None, uwh_per_sample=None))["hyperparams"]
    report["seed"] = seed
    report["meter"] = energy_report.meter
    report["samples"] = energy_report.samples
    report["total_uj"] = energy_report.total_uj
    report["low_confidence"] = energy_report.low_confidence
    return model, report


def run_experiment(dataset: Dataset, config: RunConfig, outdir) -> dict:
    """Search, select and evaluate the four variants for each algorithm.

    The search scores trials on a validation carve from the train split
    (or directly on the test split under ``search_on_test``); the four
    selected configurations are then retrained on the full train split and
    reported against the test split.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    meter = energy.make_meter(config.meter)
    train, test = split_dataset(dataset, config.split_ratio, config.seed)
    if config.search_on_test:
        search_train, search_holdout = train, test
    else:
        search_train, search_holdout = split_dataset(
            train, 1.0 - config.val_ratio, config.seed)
    logger.info("split: %d train / %d test (search holdout %d rows)",
                len(train), len(test), len(search_holdout))

    _write_json(outdir / "config.json", config.as_dict())
    summary_rows = []
    for algorithm in config.algorithms:
        algo_dir = outdir / algorithm
        variant_dir = algo_dir / "variants"
        variant_dir.mkdir(parents=True, exist_ok=True)

        trials = optimizer.run_search(
            (search_train.X, search_train.y),
            (search_holdout.X, search_holdout.y),
            algorithm, config.space, config.n_trials, config.seed, meter)
        trials = optimizer.ensure_default_trial(
            trials, algorithm, config.seed,
            (search_train.X, search_train.y),
            (search_holdout.X, search_holdout.y), meter)
        selected = optimizer.select_all_variants(
            trials, Hyperparams.default_for(algorithm))

        optimizer.write_trials_csv(algo_dir / "trials.csv", trials)
        optimizer.write_front_json(algo_dir / "front.json", trials,
                                   seed=config.seed)
        optimizer.write_plot_points(algo_dir / "plot_points.csv", trials,
                                    selected)

        variants_payload = {}
        for variant in VARIANTS:
            trial = selected[variant]
            model, report = _evaluate_model(trial.hp, config.seed, train,
                                            test, meter, variant)
            report["trial_index"] = trial.index
            stem = variant.replace("-", "_")
            (variant_dir / f"{stem}.model.json").write_bytes(
                forest.serialize(model))
            _write_json(variant_dir / f"{stem}.report.json", report)
            variants_payload[variant] = {
                "hyperparams": report["hyperparams"],
                "trial_index": trial.index,
                "seed": config.seed,
            }
            summary_rows.append(_summary_row(report))
        _write_json(algo_dir / "variants.json",
                    {"seed": config.seed, "variants": variants_payload})

    summary = {"seed": config.seed, "rows": summary_rows}
    _write_json(outdir / "summary.json", summary)
    _write_summary_csv(outdir / "summary.csv", summary_rows)
    return summary


def _summary_row(report: dict) -> dict:
    return {
        "algorithm": report["algorithm"],
        "variant": report["variant"],
        "uwh_per_sample": report["uwh_per_sample"],
        "mcc": report["mcc"],
        "balanced_accuracy_pct": report["balanced_accuracy_pct"],
        "f1_pct": report["f1_pct"],
    }


_SUMMARY_COLUMNS = ("algorithm", "variant", "uwh_per_sample", "mcc",
                    "balanced_accuracy_pct", "f1_pct")


def _write_summary_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([
                row["algorithm"], row["variant"],
                repr(row["uwh_per_sample"]), repr(row["mcc"]),
                repr(row["balanced_accuracy_pct"]), repr(row["f1_pct"]),
            ])


def assemble_summary(outdir) -> dict:
    """Rebuild the summary table from the variant reports under a run dir."""
    outdir = Path(outdir)
    rows = []
    seed = None
    for report_path in sorted(outdir.glob("*/variants/*.report.json")):
        with open(report_path) as fh:
            report = json.load(fh)
        seed = report.get("seed", seed)
        rows.append(_summary_row(report))
    if not rows:
        raise DataError(f"no variant reports under {outdir}")
    rows.sort(key=lambda r: (r["algorithm"], VARIANTS.index(r["variant"])))
    return {"seed": seed, "rows": rows}


def rerun_variants(dataset: Dataset, variants: dict, config: RunConfig,
                   outdir) -> dict:
    """Retrain fixed per-variant hyperparameters on a (re-split) dataset.

    This is the ablation default: models are re-trained and re-evaluated
    without re-running the search.  ``variants`` maps variant name to
    Hyperparams.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    meter = energy.make_meter(config.meter)
    train, test = split_dataset(dataset, config.split_ratio, config.seed)
    summary_rows = []
    for variant, hp in variants.items():
        variant_dir = outdir / hp.algorithm / "variants"
        variant_dir.mkdir(parents=True, exist_ok=True)
        model, report = _evaluate_model(hp, config.seed, train, test, meter,
                                        variant)
        stem = variant.replace("-", "_")
        (variant_dir / f"{stem}.model.json").write_bytes(forest.serialize(model))
        _write_json(variant_dir / f"{stem}.report.json", report)
        summary_rows.append(_summary_row(report))
    summary = {"seed": config.seed, "rows": summary_rows}
    _write_json(outdir / "summary.json", summary)
    _write_summary_csv(outdir / "summary.csv", summary_rows)
    return summary


# ---------------------------------------------------------------------------
# error analysis

@dataclass
class ErrorBreakdown:
    confusion: metrics.ConfusionMatrix
    fn_rate_overall: float
    fn_by_family_attack: dict
    fn_by_endpoint_pair: dict
    pair_detected: dict
    pair_detection_rate: float
    pair_flow_coverage: float

    def as_dict(self) -> dict:
        return {
            "confusion": {"tp": self.confusion.tp, "tn": self.confusion.tn,
                          "fp": self.confusion.fp, "fn": self.confusion.fn},
            "fn_rate_overall": self.fn_rate_overall,
            "fn_by_family_attack": [
                {"family": fam, "attack_type": at, "count": c}
                for (fam, at), c in sorted(self.fn_by_family_attack.items())],
            "fn_by_endpoint_pair": [
                {"src_ip": s, "dst_ip": d, **info}
                for (s, d), info in sorted(self.fn_by_endpoint_pair.items())],
            "pair_detection_rate": self.pair_detection_rate,
            "pair_flow_coverage": self.pair_flow_coverage,
            "pairs": [
                {"src_ip": s, "dst_ip": d, "detected": det}
                for (s, d), det in sorted(self.pair_detected.items())],
        }


def error_analysis(model, test: Dataset) -> ErrorBreakdown:
    """Break down false negatives by label family and by endpoint pair.

    A malicious endpoint pair counts as detected when at least one of its
    flows is classified malicious; ``pair_flow_coverage`` is the share of
    malicious flows belonging to detected pairs (always at least the
    flow-level recall).
    """
    required = {"family", "attack_type", "src_ip", "dst_ip", "start_ts"}
    for meta in test.meta:
        if not required.issubset(meta):
            raise MissingMetadata(
                f"row metadata {sorted(meta)} lacks {sorted(required - set(meta))}")

    predictions = model.predict(test.X)
    cm = metrics.confusion(predictions, test.y)

    fn_by_fa: dict = {}
    fn_by_pair: dict = {}
    pair_total: dict = {}
    pair_hit: dict = {}
    for pred, actual, meta in zip(predictions, test.y, test.meta):
        if actual != 1:
            continue
        pair = (meta["src_ip"], meta["dst_ip"])
        pair_total[pair] = pair_total.get(pair, 0) + 1
        if pred == 1:
            pair_hit[pair] = pair_hit.get(pair, 0) + 1
            continue
        key = (meta["family"], meta["attack_type"])
        fn_by_fa[key] = fn_by_fa.get(key, 0) + 1
        info = fn_by_pair.setdefault(
            pair, {"count": 0, "first_ts": meta["start_ts"],
                   "last_ts": meta["start_ts"]})
        info["count"] += 1
        info["first_ts"] = min(info["first_ts"], meta["start_ts"])
        info["last_ts"] = max(info["last_ts"], meta["start_ts"])

    positives = cm.tp + cm.fn
    pair_detected = {p: p in pair_hit for p in pair_total}
    detected_flows = sum(n for p, n in pair_total.items() if p in pair_hit)
    return ErrorBreakdown(
        confusion=cm,
        fn_rate_overall=cm.fn / positives if positives else 0.0,
        fn_by_family_attack=fn_by_fa,
        fn_by_endpoint_pair=fn_by_pair,
        pair_detected=pair_detected,
        pair_detection_rate=(sum(pair_detected.values()) / len(pair_detected)
                             if pair_detected else 0.0),
        pair_flow_coverage=(detected_flows / positives if positives else 0.0),
    )


# ---------------------------------------------------------------------------
# ablation

def parse_predicate(text: str):
    """'field=value' over metadata columns, e.g. 'attack_type=port-scan'."""
    field_name, sep, value = text.partition("=")
    if not sep or not field_name:
        raise ConfigError(f"predicate {text!r} is not field=value")
    field_name = field_name.strip()
    allowed = set(features.META_COLUMNS) | {"class"}
    if field_name not in allowed:
        raise ConfigError(f"unknown predicate field {field_name!r}")
    value = value.strip()

    def predicate(klass, meta):
        if field_name == "class":
            return str(klass) == value
        return str(meta.get(field_name)) == value

    return predicate


def ablate(dataset: Dataset, predicate):
    """Drop rows matching the predicate; returns (kept dataset, n_removed)."""
    keep = [i for i in range(len(dataset))
            if not predicate(int(dataset.y[i]), dataset.meta[i])]
    removed = len(dataset) - len(keep)
    return dataset.subset(keep), removed
