"""Two-objective model search: minimize µWh/sample, maximize MCC.

A search produces a list of ``Trial`` records.  Selection happens on the
strict-dominance Pareto front:

* max-green: cheapest completed trial (argmin µWh, ties to higher MCC);
* max-mcc:   best completed trial (argmax MCC, ties to lower µWh);
* balanced:  front member geometrically closest to the ideal corner (0, 1),
  with the µWh axis min-max normalized over all completed trials (raw µWh
  would let the energy axis drown the MCC axis and always pick max-green);
* default:   the trial run with the algorithm's default hyperparameters.

Remaining ties always fall back to lower µWh, then lower trial index, so
selection is deterministic.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import forest
from . import metrics
from .exceptions import GreenflowError
from .forest import Hyperparams

logger = logging.getLogger(__name__)

VARIANTS = ("default", "max-green", "max-mcc", "balanced")


class MissingDefaultTrial(GreenflowError):
    """Variant 'default' requested but no trial used the default hyperparams."""


@dataclass(frozen=True)
class Trial:
    index: int
    hp: Hyperparams | None
    mcc: float | None
    uwh_per_sample: float | None
    model_ref: str | None = None
    status: str = "ok"


@dataclass(frozen=True)
class SearchSpace:
    """Inclusive integer ranges for uniform random sampling."""
    max_depth: tuple[int, int] = (1, 200)
    min_samples_leaf: tuple[int, int] = (1, 10)
    min_samples_split: tuple[int, int] = (2, 30)
    max_features: tuple[int, int] = (1, 59)
    n_estimators: tuple[int, int] = (10, 256)

    def __post_init__(self):
        for name in ("max_depth", "min_samples_leaf", "min_samples_split",
                     "max_features", "n_estimators"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range ({lo}, {hi})")
        if self.max_depth[0] < 1 or self.min_samples_leaf[0] < 1:
            raise ValueError("max_depth and min_samples_leaf start at 1")
        if self.min_samples_split[0] < 2:
            raise ValueError("min_samples_split starts at 2")


def completed(trials) -> list[Trial]:
    return [t for t in trials if t.status == "ok"]


def dominates(a: Trial, b: Trial) -> bool:
    """a is at least as good on both objectives and better on one."""
    return (a.uwh_per_sample <= b.uwh_per_sample and a.mcc >= b.mcc
            and (a.uwh_per_sample < b.uwh_per_sample or a.mcc > b.mcc))


def pareto_front(trials) -> list[Trial]:
    """Non-dominated completed trials, sorted by ascending µWh/sample.

    Sort-and-sweep instead of the O(n^2) pairwise scan; duplicates of the
    same (µWh, MCC) point do not dominate each other, so all copies of a
    front point are kept, matching the brute-force definition.
    """
    cand = completed(trials)
    if not cand:
        return []
    order = sorted(range(len(cand)),
                   key=lambda i: (cand[i].uwh_per_sample, -cand[i].mcc, i))
    front = []
    best_prev = -math.inf  # max MCC among strictly cheaper trials
    pos = 0
    while pos < len(order):
        # run of equal uwh
        end = pos
        uwh = cand[order[pos]].uwh_per_sample
        while end < len(order) and cand[order[end]].uwh_per_sample == uwh:
            end += 1
        group = order[pos:end]
        group_max = max(cand[i].mcc for i in group)
        if group_max > best_prev:
            front.extend(i for i in group if cand[i].mcc == group_max)
            best_prev = group_max
        pos = end
    return [cand[i] for i in front]


def select_balanced(trials) -> Trial:
    """Front member closest to (0, 1) after min-max normalizing µWh.

    Normalization bounds come from all completed trials, not just the
    front, so the selection reflects the whole observed energy range.
    """
    comp = completed(trials)
    front = pareto_front(trials)
    if not front:
        raise GreenflowError("no completed trials to select from")
    c_min = min(t.uwh_per_sample for t in comp)
    c_max = max(t.uwh_per_sample for t in comp)
    span = c_max - c_min

    def distance(t):
        x = 0.0 if span == 0 else (t.uwh_per_sample - c_min) / span
        return math.hypot(x, 1.0 - t.mcc)

    return min(front, key=lambda t: (distance(t), t.uwh_per_sample, t.index))


def select_variant(trials, mode: str,
                   default_hp: Hyperparams | None = None) -> Trial:
    comp = completed(trials)
    if not comp:
        raise GreenflowError("no completed trials to select from")
    if mode == "max-green":
        return min(comp, key=lambda t: (t.uwh_per_sample, -t.mcc, t.index))
    if mode == "max-mcc":
        return min(comp, key=lambda t: (-t.mcc, t.uwh_per_sample, t.index))
    if mode == "balanced":
        return select_balanced(trials)
    if mode == "default":
        if default_hp is None:
            algos = {t.hp.algorithm for t in comp if t.hp is not None}
            if len(algos) != 1:
                raise MissingDefaultTrial(
                    "default_hp not given and trial algorithms are ambiguous")
            default_hp = Hyperparams.default_for(algos.pop())
        for t in comp:
            if t.hp == default_hp:
                return t
        raise MissingDefaultTrial(
            f"no completed trial with default hyperparameters {default_hp}")
    raise ValueError(f"unknown variant {mode!r}")


def select_all_variants(trials, default_hp: Hyperparams | None = None) -> dict:
    return {mode: select_variant(trials, mode, default_hp)
            for mode in VARIANTS}


# ---------------------------------------------------------------------------
# random search

def sample_hp(space: SearchSpace, algorithm: str, rng) -> Hyperparams:
    """Uniform draw from the space; single trees skip the ensemble fields."""
    depth = int(rng.integers(space.max_depth[0], space.max_depth[1] + 1))
    leaf = int(rng.integers(space.min_samples_leaf[0],
                            space.min_samples_leaf[1] + 1))
    split = int(rng.integers(space.min_samples_split[0],
                             space.min_samples_split[1] + 1))
    if algorithm == "single-tree":
        return Hyperparams(algorithm=algorithm, max_depth=depth,
                           min_samples_leaf=leaf, min_samples_split=split)
    feats = int(rng.integers(space.max_features[0], space.max_features[1] + 1))
    trees = int(rng.integers(space.n_estimators[0], space.n_estimators[1] + 1))
    return Hyperparams(algorithm=algorithm, max_depth=depth,
                       min_samples_leaf=leaf, min_samples_split=split,
                       max_features=feats, n_estimators=trees)


def evaluate_hp(hp: Hyperparams, seed, train_xy, holdout_xy, meter):
    """Train one configuration and score it on the holdout split.

    Returns (mcc, uwh_per_sample, model).  The energy meter measures the
    holdout prediction workload; with the proxy meter this is exact and
    repeatable, with hardware it may loop the workload to beat counter
    resolution.
    """
    X_tr, y_tr = train_xy
    X_ho, y_ho = holdout_xy
    model = forest.train(X_tr, y_tr, hp, seed)

    state = {}

    def workload():
        labels, visits = model.predict_counted(X_ho)
        state["labels"] = labels
        return labels, int(visits.sum())

    report = meter.measure(workload)
    cm = metrics.confusion(state["labels"], y_ho)
    return metrics.mcc(cm), report.uwh_per_sample, model


def run_search(train_xy, holdout_xy, algorithm: str, space: SearchSpace,
               n_trials: int, seed: int, meter) -> list[Trial]:
    """Seeded uniform random search over the space.

    Each trial draws its hyperparameters and its model seed from an
    independent spawned stream, so the trial list is reproducible and
    independent of execution order.  Failed trials are kept with
    status='failed' and excluded from front computation and selection.
    """
    if algorithm not in forest.ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    streams = np.random.SeedSequence(seed).spawn(n_trials)
    trials = []
    for i, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        hp = sample_hp(space, algorithm, rng)
        model_seed = int(rng.integers(0, 2**31 - 1))
        try:
            score, uwh, _model = evaluate_hp(hp, model_seed, train_xy,
                                             holdout_xy, meter)
            trials.append(Trial(index=i, hp=hp, mcc=score,
                                uwh_per_sample=uwh))
        except Exception as exc:  # noqa: BLE001 - trial isolation is the point
            logger.warning("trial %d failed: %s", i, exc)
            trials.append(Trial(index=i, hp=hp, mcc=None, uwh_per_sample=None,
                                status="failed"))
    return trials


def ensure_default_trial(trials, algorithm: str, seed, train_xy, holdout_xy,
                         meter) -> list[Trial]:
    """Append a default-hyperparameter trial unless the search already hit it."""
    default_hp = Hyperparams.default_for(algorithm)
    if any(t.hp == default_hp for t in completed(trials)):
        return list(trials)
    score, uwh, _model = evaluate_hp(default_hp, seed, train_xy, holdout_xy,
                                     meter)
    extra = Trial(index=len(trials), hp=default_hp, mcc=score,
                  uwh_per_sample=uwh)
    return list(trials) + [extra]


# ---------------------------------------------------------------------------
# logs and exports

_HP_FIELDS = ("algorithm", "max_depth", "min_samples_leaf",
              "min_samples_split", "max_features", "n_estimators")
TRIAL_COLUMNS = ("index",) + _HP_FIELDS + ("mcc", "uwh_per_sample", "status")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def trial_row(t: Trial) -> list[str]:
    hp = t.hp
    vals = [t.index]
    vals += [getattr(hp, f) if hp is not None else None for f in _HP_FIELDS]
    vals += [t.mcc, t.uwh_per_sample, t.status]
    return [_fmt(v) for v in vals]


def write_trials_csv(path, trials):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRIAL_COLUMNS)
        for t in trials:
            writer.writerow(trial_row(t))


def read_trials_csv(path) -> list[Trial]:
    trials = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            hp = None
            if row["algorithm"]:
                hp = Hyperparams(
                    algorithm=row["algorithm"],
                    max_depth=int(row["max_depth"]) if row["max_depth"] else None,
                    min_samples_leaf=int(row["min_samples_leaf"]),
                    min_samples_split=int(row["min_samples_split"]),
                    max_features=_parse_max_features(row["max_features"]),
                    n_estimators=int(row["n_estimators"]),
                )
            trials.append(Trial(
                index=int(row["index"]), hp=hp,
                mcc=float(row["mcc"]) if row["mcc"] else None,
                uwh_per_sample=(float(row["uwh_per_sample"])
                                if row["uwh_per_sample"] else None),
                status=row["status"],
            ))
    return trials


def _parse_max_features(text: str):
    if not text:
        return None
    if text == "sqrt":
        return "sqrt"
    return int(text)


def trial_dict(t: Trial) -> dict:
    d = {"index": t.index, "mcc": t.mcc, "uwh_per_sample": t.uwh_per_sample,
         "status": t.status}
    if t.hp is not None:
        d["hyperparams"] = {f: getattr(t.hp, f) for f in _HP_FIELDS}
    return d


def write_front_json(path, trials, seed=None):
    front = pareto_front(trials)
    payload = {"seed": seed, "front": [trial_dict(t) for t in front]}
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_plot_points(path, trials, variants: dict | None = None):
    """Flat (µWh, MCC) point list with front and variant markers, for plotting."""
    front_ids = {t.index for t in pareto_front(trials)}
    roles = {}
    for name, trial in (variants or {}).items():
        roles.setdefault(trial.index, set()).add(name)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "uwh_per_sample", "mcc", "on_front",
                         "is_default", "is_max_green", "is_max_mcc",
                         "is_balanced"])
        for t in completed(trials):
            mark = roles.get(t.index, set())
            writer.writerow([
                t.index, _fmt(t.uwh_per_sample), _fmt(t.mcc),
                int(t.index in front_ids),
                int("default" in mark), int("max-green" in mark),
                int("max-mcc" in mark), int("balanced" in mark),
            ])
