"""Fixed-order 59-value flow feature vectors and the dataset CSV format.

Layout: [protocol, ip_version] then, for each of the bidirectional,
src-to-dst and dst-to-src views, the 19-value block
[duration_ms, iat_max, iat_min, iat_mean, iat_std, bytes, size_max,
 size_min, size_mean, size_std, packets, ack, cwr, ece, fin, psh, rst,
 syn, urg].

Standard deviations are sample (n-1) deviations and are 0 when a view has
fewer than two packets; an absent direction contributes an all-zero block.
Addresses and ports are deliberately not features; they travel in metadata
columns only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .capture import TCP_FLAG_NAMES
from .exceptions import DataError
from .flowmeter import MALICIOUS, DirStats, Flow

N_FEATURES = 59

_VIEW_PREFIXES = ("bidir", "s2d", "d2s")
_VIEW_STATS = ("duration_ms", "iat_max", "iat_min", "iat_mean", "iat_std",
               "bytes", "size_max", "size_min", "size_mean", "size_std",
               "packets") + TCP_FLAG_NAMES

FEATURE_COLUMNS = tuple(
    ["protocol", "ip_version"]
    + [f"{view}_{stat}" for view in _VIEW_PREFIXES for stat in _VIEW_STATS])

META_COLUMNS = ("family", "attack_type", "src_ip", "dst_ip", "start_ts")
CLASS_COLUMN = "class"
COLUMNS = FEATURE_COLUMNS + (CLASS_COLUMN,) + META_COLUMNS

assert len(FEATURE_COLUMNS) == N_FEATURES


class ColumnCountMismatch(DataError):
    """Row or header does not have the expected 65 columns."""


class NonNumericFeature(DataError):
    """A feature cell failed to parse as a number."""


class InvalidClassLabel(DataError):
    """Class column must be exactly 0 or 1."""


def _sample_std(sumsq: int, total: int, n: int) -> float:
    if n < 2:
        return 0.0
    var = (sumsq - (total * total) / n) / (n - 1)
    return math.sqrt(max(0.0, var))


def _view_block(stats: DirStats) -> list[float]:
    if stats.packets == 0:
        return [0.0] * len(_VIEW_STATS)
    if stats.iat_count == 0:
        iat = [0.0, 0.0, 0.0, 0.0]
    else:
        iat = [float(stats.iat_max), float(stats.iat_min),
               stats.iat_sum / stats.iat_count,
               _sample_std(stats.iat_sumsq, stats.iat_sum, stats.iat_count)]
    block = [float(stats.duration_ms)] + iat + [
        float(stats.bytes), float(stats.size_max), float(stats.size_min),
        stats.size_sum / stats.packets,
        _sample_std(stats.size_sumsq, stats.size_sum, stats.packets),
        float(stats.packets),
    ]
    block += [float(stats.flag_counts[name]) for name in TCP_FLAG_NAMES]
    return block


def vectorize(flow: Flow) -> np.ndarray:
    """Flow to its 59-value feature vector (float64)."""
    values = [float(flow.key.protocol), float(flow.ip_version)]
    for stats in (flow.bidir, flow.s2d, flow.d2s):
        values.extend(_view_block(stats))
    return np.asarray(values, dtype=np.float64)


@dataclass(eq=False)
class LabeledSample:
    features: np.ndarray
    klass: int                 # 0 benign, 1 malicious
    meta: dict                 # family, attack_type, src_ip, dst_ip, start_ts


def flow_to_sample(flow: Flow) -> LabeledSample:
    if flow.label is None:
        raise DataError("flow has no label; join labels before vectorizing")
    return LabeledSample(
        features=vectorize(flow),
        klass=1 if flow.label.klass == MALICIOUS else 0,
        meta={
            "family": flow.label.family,
            "attack_type": flow.label.attack_type,
            "src_ip": flow.src_ip,
            "dst_ip": flow.dst_ip,
            "start_ts": flow.start_ts,
        },
    )


# ---------------------------------------------------------------------------
# CSV codec: 59 features + class + 5 metadata columns, reals at 17
# significant digits so parse(format(x)) == x for every float64

def _format_real(v: float) -> str:
    return "%.17g" % v


def to_csv_row(sample: LabeledSample) -> str:
    feats = np.asarray(sample.features, dtype=np.float64)
    if feats.shape != (N_FEATURES,):
        raise ColumnCountMismatch(
            f"expected {N_FEATURES} features, got shape {feats.shape}")
    if sample.klass not in (0, 1):
        raise InvalidClassLabel(f"class must be 0/1, got {sample.klass!r}")
    meta = sample.meta
    cells = [_format_real(v) for v in feats]
    cells.append(str(int(sample.klass)))
    for col in META_COLUMNS:
        value = str(meta[col])
        if "," in value or "\n" in value:
            raise DataError(f"metadata field {col}={value!r} contains a separator")
        cells.append(value)
    return ",".join(cells)


def from_csv_row(text: str) -> LabeledSample:
    cells = text.rstrip("\n").split(",")
    if len(cells) != len(COLUMNS):
        raise ColumnCountMismatch(
            f"expected {len(COLUMNS)} columns, got {len(cells)}")
    raw_feats = cells[:N_FEATURES]
    try:
        feats = np.array([float(c) for c in raw_feats], dtype=np.float64)
    except ValueError as exc:
        raise NonNumericFeature(str(exc)) from exc
    klass_text = cells[N_FEATURES]
    if klass_text not in ("0", "1"):
        raise InvalidClassLabel(f"class must be 0 or 1, got {klass_text!r}")
    meta_cells = cells[N_FEATURES + 1:]
    meta = dict(zip(META_COLUMNS, meta_cells))
    try:
        meta["start_ts"] = int(meta["start_ts"])
    except ValueError as exc:
        raise DataError(f"start_ts {meta['start_ts']!r} is not an integer") from exc
    return LabeledSample(features=feats, klass=int(klass_text), meta=meta)


# ---------------------------------------------------------------------------
# dataset files

@dataclass
class Dataset:
    X: np.ndarray            # (n, 59) float64
    y: np.ndarray            # (n,) int8
    meta: list[dict]

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(X=self.X[indices], y=self.y[indices],
                       meta=[self.meta[i] for i in indices])

    def samples(self):
        for i in range(len(self)):
            yield LabeledSample(features=self.X[i], klass=int(self.y[i]),
                                meta=self.meta[i])


def from_samples(samples) -> Dataset:
    samples = list(samples)
    X = np.stack([np.asarray(s.features, dtype=np.float64) for s in samples]) \
        if samples else np.empty((0, N_FEATURES))
    y = np.array([s.klass for s in samples], dtype=np.int8)
    return Dataset(X=X, y=y, meta=[s.meta for s in samples])


def write_dataset(path, dataset: Dataset, comments: dict | None = None):
    """Write the dataset CSV.

    '#'-prefixed metadata lines (stddev divisor convention, tool version,
    source hashes, seed) precede the header; keys are sorted so identical
    inputs produce identical bytes.
    """
    base = {"stddev_divisor": "n-1 (sample standard deviation)"}
    base.update(comments or {})
    with open(path, "w", newline="") as fh:
        for key in sorted(base):
            fh.write(f"#{key}: {base[key]}\n")
        fh.write(",".join(COLUMNS) + "\n")
        for sample in dataset.samples():
            fh.write(to_csv_row(sample) + "\n")


def read_dataset(path):
    """Read a dataset CSV; returns (Dataset, comment dict)."""
    comments = {}
    samples = []
    with open(path, newline="") as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                comments[key.strip()] = value.strip()
                continue
            if header is None:
                header = tuple(line.split(","))
                if header != COLUMNS:
                    raise ColumnCountMismatch(
                        f"unexpected header with {len(header)} columns")
                continue
            samples.append(from_csv_row(line))
    if header is None:
        raise DataError(f"{path} has no header row")
    return from_samples(samples), comments
