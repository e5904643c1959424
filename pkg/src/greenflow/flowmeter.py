"""Bidirectional five-tuple flow aggregation and label joining.

Flows are keyed on the canonically ordered endpoint pair so both directions
land in one record.  Per-direction statistics are O(1) incremental
accumulators; packet lists are never kept.  All timestamps are integer
milliseconds.
"""
from __future__ import annotations

import ipaddress
import logging
from dataclasses import dataclass, field

from .capture import TCP_FLAG_NAMES, ParsedPacket

logger = logging.getLogger(__name__)

IDLE_TIMEOUT_MS = 120_000
ACTIVE_TIMEOUT_MS = 1_800_000

BENIGN = "benign"
MALICIOUS = "malicious"

# ordered substring rules mapping a detailed label onto an attack type;
# first hit wins, anything unmatched is "other"
DEFAULT_ATTACK_RULES = (
    ("partofahorizontalportscan", "port-scan"),
    ("c&c", "C&C"),
    ("ddos", "DoS"),
    ("dos", "DoS"),
)
OTHER_ATTACK_TYPE = "other"


@dataclass(frozen=True)
class FlowKey:
    ip_a: bytes
    port_a: int
    ip_b: bytes
    port_b: int
    protocol: int


def canonical_key(pkt: ParsedPacket) -> FlowKey:
    """Order the endpoints so both directions map to the same key."""
    a = (pkt.src_ip, pkt.src_port)
    b = (pkt.dst_ip, pkt.dst_port)
    if b < a:
        a, b = b, a
    return FlowKey(ip_a=a[0], port_a=a[1], ip_b=b[0], port_b=b[1],
                   protocol=pkt.protocol)


@dataclass
class DirStats:
    """Incremental per-view accumulators (a view is s2d, d2s or both)."""
    packets: int = 0
    bytes: int = 0
    first_ts: int = 0
    last_ts: int = 0
    size_min: int = 0
    size_max: int = 0
    size_sum: int = 0
    size_sumsq: int = 0
    iat_min: int = 0
    iat_max: int = 0
    iat_sum: int = 0
    iat_sumsq: int = 0
    iat_count: int = 0
    flag_counts: dict = field(
        default_factory=lambda: {n: 0 for n in TCP_FLAG_NAMES})

    def update(self, size: int, ts: int, flags) -> None:
        if self.packets == 0:
            self.first_ts = ts
            self.size_min = self.size_max = size
        else:
            # clamp negative gaps (out-of-order timestamps) to zero
            iat = max(0, ts - self.last_ts)
            if self.iat_count == 0:
                self.iat_min = self.iat_max = iat
            else:
                self.iat_min = min(self.iat_min, iat)
                self.iat_max = max(self.iat_max, iat)
            self.iat_sum += iat
            self.iat_sumsq += iat * iat
            self.iat_count += 1
            self.size_min = min(self.size_min, size)
            self.size_max = max(self.size_max, size)
        self.packets += 1
        self.bytes += size
        self.size_sum += size
        self.size_sumsq += size * size
        self.last_ts = ts
        for name in flags:
            self.flag_counts[name] += 1

    @property
    def duration_ms(self) -> int:
        return self.last_ts - self.first_ts if self.packets else 0


@dataclass(frozen=True)
class FlowLabel:
    klass: str          # benign | malicious
    family: str         # detailed label text
    attack_type: str    # port-scan | C&C | DoS | other


@dataclass
class Flow:
    key: FlowKey
    initiator_is_a: bool    # did endpoint (ip_a, port_a) send the first packet
    ip_version: int
    start_ts: int
    bidir: DirStats = field(default_factory=DirStats)
    s2d: DirStats = field(default_factory=DirStats)
    d2s: DirStats = field(default_factory=DirStats)
    label: FlowLabel | None = None

    @property
    def src_ip(self) -> str:
        raw = self.key.ip_a if self.initiator_is_a else self.key.ip_b
        return str(ipaddress.ip_address(raw))

    @property
    def dst_ip(self) -> str:
        raw = self.key.ip_b if self.initiator_is_a else self.key.ip_a
        return str(ipaddress.ip_address(raw))

    @property
    def src_port(self) -> int:
        return self.key.port_a if self.initiator_is_a else self.key.port_b

    @property
    def dst_port(self) -> int:
        return self.key.port_b if self.initiator_is_a else self.key.port_a

    def ingest(self, pkt: ParsedPacket) -> None:
        from_a = (pkt.src_ip, pkt.src_port) == (self.key.ip_a, self.key.port_a)
        forward = from_a == self.initiator_is_a
        self.bidir.update(pkt.ip_total_bytes, pkt.ts, pkt.tcp_flags)
        view = self.s2d if forward else self.d2s
        view.update(pkt.ip_total_bytes, pkt.ts, pkt.tcp_flags)


class FlowMeter:
    """Stateful packet-to-flow aggregator with idle and active timeouts.

    A packet whose key maps to a flow that already exceeded a timeout (or
    was closed by TCP teardown when ``close_on_fin_rst`` is set) starts a
    fresh flow under the same key.
    """

    def __init__(self, idle_timeout_ms: int = IDLE_TIMEOUT_MS,
                 active_timeout_ms: int = ACTIVE_TIMEOUT_MS,
                 close_on_fin_rst: bool = False):
        if idle_timeout_ms <= 0 or active_timeout_ms <= 0:
            raise ValueError("timeouts must be positive")
        self.idle_timeout_ms = idle_timeout_ms
        self.active_timeout_ms = active_timeout_ms
        self.close_on_fin_rst = close_on_fin_rst
        self._active: dict[FlowKey, Flow] = {}
        self._closed: list[Flow] = []
        self.packets = 0

    def _expired(self, flow: Flow, now: int) -> bool:
        return (now - flow.bidir.last_ts > self.idle_timeout_ms
                or now - flow.start_ts > self.active_timeout_ms)

    def ingest(self, pkt: ParsedPacket) -> None:
        key = canonical_key(pkt)
        flow = self._active.get(key)
        if flow is not None and self._expired(flow, pkt.ts):
            self._closed.append(self._active.pop(key))
            flow = None
        if flow is None:
            initiator_is_a = (pkt.src_ip, pkt.src_port) == (key.ip_a, key.port_a)
            flow = Flow(key=key, initiator_is_a=initiator_is_a,
                        ip_version=pkt.ip_version, start_ts=pkt.ts)
            self._active[key] = flow
        flow.ingest(pkt)
        self.packets += 1
        if self.close_on_fin_rst and self._teardown_done(flow, pkt):
            self._closed.append(self._active.pop(key))

    @staticmethod
    def _teardown_done(flow: Flow, pkt: ParsedPacket) -> bool:
        # RST from either side ends the flow; FIN must be seen both ways
        if pkt.flag("rst"):
            return True
        return (flow.s2d.flag_counts["fin"] > 0
                and flow.d2s.flag_counts["fin"] > 0)

    def expire(self, now: int) -> list[Flow]:
        """Close and return flows idle or alive for longer than the timeouts."""
        out = []
        for key in [k for k, f in self._active.items() if self._expired(f, now)]:
            out.append(self._active.pop(key))
        self._closed.extend(out)
        return out

    def flush(self) -> list[Flow]:
        """End of capture: close everything, return all closed flows in
        closure order."""
        self._closed.extend(self._active.values())
        self._active.clear()
        out = self._closed
        self._closed = []
        return out

    @property
    def active_count(self) -> int:
        return len(self._active)


# ---------------------------------------------------------------------------
# label files

@dataclass(frozen=True)
class LabelRecord:
    ts: int                 # milliseconds
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    label: str              # benign | malicious (normalized)
    detailed_label: str


@dataclass
class LabelFileStats:
    rows: int = 0
    malformed_rows: int = 0


def parse_label_file(stream, stats: LabelFileStats | None = None):
    """Parse a tab-separated label file, yielding LabelRecord rows.

    Expected columns: ts (epoch seconds, fraction allowed), src_ip,
    src_port, dst_ip, dst_port, label, detailed_label.  Lines starting with
    '#' are comments.  Rows with the wrong column count or an unparseable
    field are skipped and counted in stats.malformed_rows.
    """
    if stats is None:
        stats = LabelFileStats()
    for line in stream:
        line = line.rstrip("\n").rstrip("\r")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 7:
            stats.malformed_rows += 1
            continue
        try:
            ts_ms = int(round(float(parts[0]) * 1000))
            src_port = int(parts[2])
            dst_port = int(parts[4])
            klass = _normalize_class(parts[5])
        except ValueError:
            stats.malformed_rows += 1
            continue
        stats.rows += 1
        yield LabelRecord(ts=ts_ms, src_ip=parts[1], src_port=src_port,
                          dst_ip=parts[3], dst_port=dst_port, label=klass,
                          detailed_label=parts[6])


def _normalize_class(text: str) -> str:
    lowered = text.strip().lower()
    if lowered == BENIGN:
        return BENIGN
    if lowered == MALICIOUS:
        return MALICIOUS
    raise ValueError(f"label {text!r} is neither benign nor malicious")


def map_attack_type(detailed_label: str, rules=DEFAULT_ATTACK_RULES) -> str:
    lowered = detailed_label.lower()
    for needle, attack_type in rules:
        if needle.lower() in lowered:
            return attack_type
    return OTHER_ATTACK_TYPE


@dataclass
class DropReport:
    conflicting: int = 0
    unmatched: int = 0
    malformed_rows: int = 0

    def as_dict(self) -> dict:
        return {"conflicting": self.conflicting, "unmatched": self.unmatched,
                "malformed_rows": self.malformed_rows}


def _record_endpoint_key(rec: LabelRecord):
    a = (ipaddress.ip_address(rec.src_ip).packed, rec.src_port)
    b = (ipaddress.ip_address(rec.dst_ip).packed, rec.dst_port)
    return (b, a) if b < a else (a, b)


def join_labels(flows, records, ts_tolerance_ms: int = 1000,
                attack_rules=DEFAULT_ATTACK_RULES):
    """Attach labels to flows by endpoint pair and start-time proximity.

    A flow matches a record when the record's directed or reversed
    endpoint pair equals the flow's and |flow.start_ts - record.ts| is
    within the tolerance.  Flows with no match, or with conflicting
    (label, detailed_label) matches, are dropped and counted.

    Returns (labeled flows, DropReport).
    """
    by_pair: dict = {}
    for rec in records:
        by_pair.setdefault(_record_endpoint_key(rec), []).append(rec)

    report = DropReport()
    labeled = []
    for flow in flows:
        pair = ((flow.key.ip_a, flow.key.port_a),
                (flow.key.ip_b, flow.key.port_b))
        matches = [r for r in by_pair.get(pair, ())
                   if abs(flow.start_ts - r.ts) <= ts_tolerance_ms]
        assignments = {(r.label, r.detailed_label) for r in matches}
        if not assignments:
            report.unmatched += 1
            continue
        if len(assignments) > 1:
            report.conflicting += 1
            continue
        klass, detail = next(iter(assignments))
        flow.label = FlowLabel(klass=klass, family=detail,
                               attack_type=map_attack_type(detail, attack_rules))
        labeled.append(flow)
    return labeled, report
