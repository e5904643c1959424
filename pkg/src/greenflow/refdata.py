"""Bundled reference data.

* Two (µWh/sample, MCC) trial scatters from a prior single-tree tuning run
  on the IoT capture corpus, one on the full label set and one with the
  horizontal-port-scan class removed.  They serve as regression fixtures
  for front computation and variant selection, and as plot-ready demo
  input.  Duplicate plotted points were collapsed.
* The default detailed-label to attack-type substring mapping.
"""
from __future__ import annotations

import csv
import json
from importlib import resources

from .optimizer import Trial

SCATTERS = {
    "full": "single_tree_trials_full.csv",
    "portscan-removed": "single_tree_trials_portscan_removed.csv",
}


def _data_file(name: str):
    return resources.files(__package__).joinpath("data", name)


def reference_trials(which: str = "full") -> list[Trial]:
    """Load a bundled scatter as Trial records (hyperparams not recorded)."""
    try:
        name = SCATTERS[which]
    except KeyError:
        raise ValueError(
            f"unknown scatter {which!r}, have {sorted(SCATTERS)}") from None
    trials = []
    with _data_file(name).open("r") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            trials.append(Trial(index=i, hp=None,
                                mcc=float(row["mcc"]),
                                uwh_per_sample=float(row["uwh_per_sample"])))
    return trials


def attack_type_rules() -> tuple[tuple[tuple[str, str], ...], str]:
    """Default (substring, attack type) rules and the fallback type."""
    with _data_file("attack_types.json").open("r") as fh:
        payload = json.load(fh)
    rules = tuple((str(a), str(b)) for a, b in payload["rules"])
    return rules, str(payload["default"])


def load_attack_rules(path) -> tuple[tuple[str, str], ...]:
    """Read an override mapping file with the same JSON shape."""
    with open(path) as fh:
        payload = json.load(fh)
    return tuple((str(a), str(b)) for a, b in payload["rules"])
