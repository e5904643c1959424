"""Energy accounting for model inference.

Two interchangeable meters:

* ``HardwareMeter`` reads cumulative microjoule counters laid out like the
  Linux power-capping sysfs tree (a directory per zone holding ``energy_uj``
  and ``max_energy_range_uj``).  The root defaults to ``/sys/class/powercap``
  and can be pointed elsewhere with the ``GREENFLOW_RAPL_ROOT`` environment
  variable, which is also how tests substitute a counter double.
* ``ProxyMeter`` charges a fixed cost per tree-node visit plus a per-sample
  overhead.  It is pure and deterministic, so it is the meter used on
  machines without counters and in CI.

Both return an ``EnergyReport`` whose central quantity is microwatt-hours
per classified sample: ``uwh_per_sample = (total_uj / 3600) / samples``.
"""
from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import GreenflowError

logger = logging.getLogger(__name__)

RAPL_ROOT_ENV = "GREENFLOW_RAPL_ROOT"
DEFAULT_RAPL_ROOT = "/sys/class/powercap"

# Hardware measurement protocol: repeat the workload until the counters
# moved by more than MIN_DELTA_UJ, giving up after MAX_REPEATS passes.
MIN_DELTA_UJ = 1000
MAX_REPEATS = 64

# Placeholder proxy constants; replace via calibrate() on hardware that
# exposes real counters.
DEFAULT_UJ_PER_NODE_VISIT = 5e-3
DEFAULT_UJ_PER_SAMPLE_OVERHEAD = 0.5


class CounterUnavailable(GreenflowError):
    """No readable energy counters under the configured root."""


class MeasurementBusy(GreenflowError):
    """A hardware measurement window is already active in this process."""


# A measured window owns the process: overlapping windows would attribute
# one workload's joules to another.
_measure_guard = threading.Lock()


@dataclass(frozen=True)
class EnergyReport:
    total_uj: float
    samples: int
    uwh_per_sample: float
    meter: str
    low_confidence: bool = False

    def __post_init__(self):
        if self.samples <= 0:
            raise ValueError("samples must be positive")


def _report(total_uj: float, samples: int, meter: str,
            low_confidence: bool = False) -> EnergyReport:
    return EnergyReport(
        total_uj=total_uj,
        samples=samples,
        uwh_per_sample=(total_uj / 3600.0) / samples,
        meter=meter,
        low_confidence=low_confidence,
    )


@dataclass(frozen=True)
class CostModelParams:
    uj_per_node_visit: float = DEFAULT_UJ_PER_NODE_VISIT
    uj_per_sample_overhead: float = DEFAULT_UJ_PER_SAMPLE_OVERHEAD

    def __post_init__(self):
        if self.uj_per_node_visit <= 0:
            raise ValueError("uj_per_node_visit must be > 0")
        if self.uj_per_sample_overhead < 0:
            raise ValueError("uj_per_sample_overhead must be >= 0")


class ProxyMeter:
    """Deterministic cost model: uj = visits * a + samples * b."""

    name = "proxy"

    def __init__(self, params: CostModelParams | None = None):
        self.params = params or CostModelParams()

    def measure(self, workload) -> EnergyReport:
        predictions, node_visits = workload()
        samples = len(predictions)
        total_uj = (float(node_visits) * self.params.uj_per_node_visit
                    + samples * self.params.uj_per_sample_overhead)
        return _report(total_uj, samples, self.name)


class HardwareMeter:
    """Reads powercap-style cumulative µJ counters around a workload."""

    name = "hardware"

    def __init__(self, root: str | os.PathLike | None = None,
                 min_delta_uj: int = MIN_DELTA_UJ, max_repeats: int = MAX_REPEATS):
        if root is None:
            root = os.environ.get(RAPL_ROOT_ENV, DEFAULT_RAPL_ROOT)
        self.root = Path(root)
        self.min_delta_uj = min_delta_uj
        self.max_repeats = max_repeats

    def counters(self) -> list[tuple[Path, int]]:
        """Discover (energy_uj path, wrap range) pairs under the root.

        Sub-zones (names like ``intel-rapl:0:0``) are skipped: their energy
        is already included in the parent zone's counter.
        """
        found = []
        if self.root.is_dir():
            for entry in sorted(self.root.iterdir()):
                energy = entry / "energy_uj"
                rng = entry / "max_energy_range_uj"
                if entry.name.count(":") > 1:
                    continue
                if energy.is_file() and rng.is_file():
                    try:
                        wrap = int(rng.read_text().strip())
                    except (OSError, ValueError):
                        continue
                    if wrap > 0:
                        found.append((energy, wrap))
        if not found:
            raise CounterUnavailable(f"no energy counters under {self.root}")
        return found

    @staticmethod
    def _read(counters) -> list[int]:
        return [int(path.read_text().strip()) for path, _ in counters]

    @staticmethod
    def _delta(before: list[int], after: list[int], counters) -> int:
        # Counters wrap at max_energy_range_uj; the modulus reconstructs
        # the consumed µJ across at most one wrap per counter.
        total = 0
        for b, a, (_, wrap) in zip(before, after, counters):
            total += (a - b + wrap) % wrap
        return total

    def measure(self, workload) -> EnergyReport:
        counters = self.counters()
        if not _measure_guard.acquire(blocking=False):
            raise MeasurementBusy("another measurement window is active")
        try:
            before = self._read(counters)
            samples = 0
            delta = 0
            for _ in range(self.max_repeats):
                predictions, _visits = workload()
                samples += len(predictions)
                delta = self._delta(before, self._read(counters), counters)
                if delta > self.min_delta_uj:
                    break
        finally:
            _measure_guard.release()
        low = delta == 0
        if low:
            logger.warning(
                "hardware delta still 0 uJ after %d repeats; "
                "report flagged low-confidence", self.max_repeats)
        return _report(float(delta), samples, self.name, low_confidence=low)


def make_meter(kind: str, params: CostModelParams | None = None,
               root: str | os.PathLike | None = None):
    """Build a meter: 'proxy', 'hardware', or 'auto' (hardware if present)."""
    if kind == "proxy":
        return ProxyMeter(params)
    if kind == "hardware":
        return HardwareMeter(root)
    if kind == "auto":
        meter = HardwareMeter(root)
        try:
            meter.counters()
            return meter
        except CounterUnavailable:
            logger.info("no hardware counters found, falling back to proxy meter")
            return ProxyMeter(params)
    raise ValueError(f"unknown meter kind: {kind!r}")


def calibrate(observations) -> CostModelParams:
    """Least-squares fit of the proxy constants from measured runs.

    observations: iterable of (node_visits, samples, measured_uj) triples,
    typically paired hardware/proxy runs over models of varied depth.
    """
    obs = [(float(v), float(s), float(uj)) for v, s, uj in observations]
    if len(obs) < 2:
        raise ValueError("calibration needs at least two observations")
    a = np.array([[v, s] for v, s, _ in obs])
    b = np.array([uj for _, _, uj in obs])
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)
    visit_uj, overhead_uj = float(coef[0]), float(coef[1])
    if visit_uj <= 0:
        raise ValueError(
            f"degenerate calibration: uj_per_node_visit={visit_uj:g} <= 0")
    return CostModelParams(uj_per_node_visit=visit_uj,
                           uj_per_sample_overhead=max(0.0, overhead_uj))
