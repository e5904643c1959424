"""Shared test builders: raw frames, capture files, synthetic flow corpora,
and independent metric oracles."""
from __future__ import annotations

import ipaddress
import struct
from fractions import Fraction

import mpmath
import numpy as np

from greenflow.capture import ParsedPacket
from greenflow.features import Dataset, flow_to_sample, from_samples
from greenflow.flowmeter import FlowLabel, FlowMeter

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = 0x8100
ETHERTYPE_ARP = 0x0806

_TCP_BITS = {"fin": 0x01, "syn": 0x02, "rst": 0x04, "psh": 0x08,
             "ack": 0x10, "urg": 0x20, "ece": 0x40, "cwr": 0x80}


def ip4(addr: str) -> bytes:
    return ipaddress.IPv4Address(addr).packed


def ip6(addr: str) -> bytes:
    return ipaddress.IPv6Address(addr).packed


def mac(last: int) -> bytes:
    return b"\x02\x00\x00\x00\x00" + bytes([last])


# ---------------------------------------------------------------------------
# layer builders (checksums left zero; the decoder does not verify them)

def ethernet(payload: bytes, ethertype: int = ETHERTYPE_IPV4,
             dst: bytes = mac(2), src: bytes = mac(1)) -> bytes:
    return dst + src + struct.pack(">H", ethertype) + payload


def vlan_frame(payload: bytes, inner_ethertype: int = ETHERTYPE_IPV4,
               tci: int = 100, dst: bytes = mac(2), src: bytes = mac(1)) -> bytes:
    return (dst + src + struct.pack(">H", ETHERTYPE_VLAN)
            + struct.pack(">HH", tci, inner_ethertype) + payload)


def ipv4(src: str, dst: str, protocol: int, payload: bytes = b"", *,
         options: bytes = b"", frag_offset: int = 0,
         more_fragments: bool = False, total_length: int | None = None,
         ttl: int = 64, version: int = 4) -> bytes:
    ihl_words = 5 + len(options) // 4
    if total_length is None:
        total_length = ihl_words * 4 + len(payload)
    flags_frag = (0x2000 if more_fragments else 0) | frag_offset
    header = struct.pack(">BBHHHBBH4s4s", (version << 4) | ihl_words, 0,
                         total_length, 0, flags_frag, ttl, protocol, 0,
                         ip4(src), ip4(dst))
    return header + options + payload


def ipv6(src: str, dst: str, next_header: int, payload: bytes = b"",
         hop_limit: int = 64) -> bytes:
    header = struct.pack(">IHBB16s16s", 0x6000_0000, len(payload),
                         next_header, hop_limit, ip6(src), ip6(dst))
    return header + payload


def tcp(src_port: int, dst_port: int, flags=(), payload: bytes = b"",
        options: bytes = b"") -> bytes:
    bits = 0
    for name in flags:
        bits |= _TCP_BITS[name]
    offset_words = 5 + len(options) // 4
    header = struct.pack(">HHIIBBHHH", src_port, dst_port, 0, 0,
                         offset_words << 4, bits, 65535, 0, 0)
    return header + options + payload


def udp(src_port: int, dst_port: int, payload: bytes = b"") -> bytes:
    return struct.pack(">HHHH", src_port, dst_port, 8 + len(payload), 0) + payload


def icmp_echo(kind: int = 8, payload: bytes = b"\x00" * 56) -> bytes:
    return struct.pack(">BBHHH", kind, 0, 0, 1, 1) + payload


# ---------------------------------------------------------------------------
# capture files

def pcap_bytes(records, *, order: str = "<", nanos: bool = False,
               link_type: int = 1, snaplen: int = 65535,
               trailing_garbage: bytes = b"") -> bytes:
    """Serialize (ts_ms, frame[, incl_len, orig_len]) records as a capture file.

    ``order`` picks the byte order the file is written in; a reader detects
    it from how the magic number comes out.  ``nanos`` selects the
    nanosecond-resolution magic.
    """
    magic = 0xA1B23C4D if nanos else 0xA1B2C3D4
    out = [struct.pack(order + "IHHiIII", magic, 2, 4, 0, 0, snaplen,
                       link_type)]
    per_second = 1_000_000_000 if nanos else 1_000_000
    for record in records:
        ts_ms, frame = record[0], record[1]
        incl = record[2] if len(record) > 2 else len(frame)
        orig = record[3] if len(record) > 3 else len(frame)
        sec, ms = divmod(ts_ms, 1000)
        frac = ms * (per_second // 1000)
        out.append(struct.pack(order + "IIII", sec, frac, incl, orig))
        out.append(frame[:incl])
    out.append(trailing_garbage)
    return b"".join(out)


# ---------------------------------------------------------------------------
# golden capture: 3 interleaved flows, 12 packets, every value hand-derived
# (see tests/fixtures/golden_capture_worksheet.md)

GOLDEN_BASE_MS = 1_600_000_000_000


def golden_records() -> list[tuple[int, bytes]]:
    t = GOLDEN_BASE_MS
    mss = struct.pack(">BBH", 2, 4, 1460)  # 4-byte TCP option

    def tcp4(src, sport, dst, dport, flags, payload=b"", options=b""):
        return ethernet(ipv4(src, dst, 6, tcp(sport, dport, flags, payload,
                                              options)))

    def udp4(src, sport, dst, dport, payload):
        return ethernet(ipv4(src, dst, 17, udp(sport, dport, payload)))

    def icmp4(src, dst, kind):
        return ethernet(ipv4(src, dst, 1, icmp_echo(kind)))

    a, b = "10.0.0.1", "10.0.0.2"      # TCP flow, IP totals 40/44/40/140/...
    c, d = "10.0.0.3", "10.0.0.4"      # UDP flow, IP totals 60/80/120
    e, f = "10.0.0.5", "10.0.0.6"      # ICMP echo pair, IP totals 84/84
    return [
        (t + 0,   tcp4(a, 5000, b, 80, ("syn",))),
        (t + 5,   udp4(c, 5353, d, 53, b"\x00" * 32)),
        (t + 10,  tcp4(b, 80, a, 5000, ("syn", "ack"), options=mss)),
        (t + 25,  udp4(c, 5353, d, 53, b"\x00" * 52)),
        (t + 30,  tcp4(a, 5000, b, 80, ("ack",))),
        (t + 40,  icmp4(e, f, 8)),
        (t + 60,  tcp4(a, 5000, b, 80, ("psh", "ack"), b"\x00" * 100)),
        (t + 65,  udp4(d, 53, c, 5353, b"\x00" * 92)),
        (t + 70,  icmp4(f, e, 0)),
        (t + 100, tcp4(b, 80, a, 5000, ("ack",))),
        (t + 150, tcp4(a, 5000, b, 80, ("fin", "ack"))),
        (t + 210, tcp4(b, 80, a, 5000, ("fin", "ack"))),
    ]


def golden_pcap(**kwargs) -> bytes:
    return pcap_bytes(golden_records(), **kwargs)


GOLDEN_LABELS = """\
# ts\tsrc_ip\tsrc_port\tdst_ip\tdst_port\tlabel\tdetailed_label
1600000000.000000\t10.0.0.1\t5000\t10.0.0.2\t80\tMalicious\tC&C
1600000000.005000\t10.0.0.3\t5353\t10.0.0.4\t53\tBenign\t-
1600000000.040000\t10.0.0.5\t0\t10.0.0.6\t0\tBenign\t-
"""

# Expected 59-value vectors, in flow start order.  Block layout per view:
# duration, iat max/min/mean/std, bytes, size max/min/mean/std, packets,
# then flag counts ack, cwr, ece, fin, psh, rst, syn, urg.
GOLDEN_VECTORS = np.array([
    [6, 4,
     # bidir: sizes 40,44,40,140,40,40,40; IATs 10,20,30,40,50,60
     210, 60, 10, 35, 18.708286933869708,
     384, 140, 40, 54.857142857142854, 37.57405386446242, 7,
     6, 0, 0, 2, 1, 0, 2, 0,
     # s2d: sizes 40,40,140,40; IATs 30,30,90
     150, 90, 30, 50, 34.64101615137755,
     260, 140, 40, 65, 50, 4,
     3, 0, 0, 1, 1, 0, 1, 0,
     # d2s: sizes 44,40,40; IATs 90,110
     200, 110, 90, 100, 14.142135623730951,
     124, 44, 40, 41.333333333333336, 2.309401076758536, 3,
     3, 0, 0, 1, 0, 0, 1, 0],
    [17, 4,
     # bidir: sizes 60,80,120; IATs 20,40
     60, 40, 20, 30, 14.142135623730951,
     260, 120, 60, 86.66666666666667, 30.550504633038944, 3,
     0, 0, 0, 0, 0, 0, 0, 0,
     # s2d: sizes 60,80; one IAT of 20
     20, 20, 20, 20, 0,
     140, 80, 60, 70, 14.142135623730951, 2,
     0, 0, 0, 0, 0, 0, 0, 0,
     # d2s: single 120-byte packet
     0, 0, 0, 0, 0,
     120, 120, 120, 120, 0, 1,
     0, 0, 0, 0, 0, 0, 0, 0],
    [1, 4,
     # bidir: sizes 84,84; one IAT of 30
     30, 30, 30, 30, 0,
     168, 84, 84, 84, 0, 2,
     0, 0, 0, 0, 0, 0, 0, 0,
     # s2d: single echo request
     0, 0, 0, 0, 0,
     84, 84, 84, 84, 0, 1,
     0, 0, 0, 0, 0, 0, 0, 0,
     # d2s: single echo reply
     0, 0, 0, 0, 0,
     84, 84, 84, 84, 0, 1,
     0, 0, 0, 0, 0, 0, 0, 0],
], dtype=np.float64)

GOLDEN_CLASSES = np.array([1, 0, 0], dtype=np.int8)

GOLDEN_META = [
    {"family": "C&C", "attack_type": "C&C", "src_ip": "10.0.0.1",
     "dst_ip": "10.0.0.2", "start_ts": GOLDEN_BASE_MS},
    {"family": "-", "attack_type": "other", "src_ip": "10.0.0.3",
     "dst_ip": "10.0.0.4", "start_ts": GOLDEN_BASE_MS + 5},
    {"family": "-", "attack_type": "other", "src_ip": "10.0.0.5",
     "dst_ip": "10.0.0.6", "start_ts": GOLDEN_BASE_MS + 40},
]


# ---------------------------------------------------------------------------
# independent metric oracles (different arithmetic paths than the package)

def mcc_oracle(tp: int, tn: int, fp: int, fn: int) -> float:
    """MCC at 60 decimal digits, rounded to float at the very end."""
    with mpmath.workdps(60):
        a, b, c, d = map(mpmath.mpf, (tp, tn, fp, fn))
        radicand = (a + c) * (a + d) * (b + c) * (b + d)
        if radicand == 0:
            return 0.0
        return float((a * b - c * d) / mpmath.sqrt(radicand))


def balanced_accuracy_oracle(tp: int, tn: int, fp: int, fn: int) -> float:
    tpr = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    tnr = Fraction(tn, tn + fp) if tn + fp else Fraction(0)
    return float((tpr + tnr) / 2)


def f1_oracle(tp: int, tn: int, fp: int, fn: int) -> float:
    den = 2 * tp + fp + fn
    return float(Fraction(2 * tp, den)) if den else 0.0


def confusion_arrays(tp: int, tn: int, fp: int, fn: int):
    """(predictions, labels) arrays that recount to exactly these cells."""
    predictions = np.concatenate([np.ones(tp, dtype=np.int8),
                                  np.zeros(tn, dtype=np.int8),
                                  np.ones(fp, dtype=np.int8),
                                  np.zeros(fn, dtype=np.int8)])
    labels = np.concatenate([np.ones(tp, dtype=np.int8),
                             np.zeros(tn, dtype=np.int8),
                             np.zeros(fp, dtype=np.int8),
                             np.ones(fn, dtype=np.int8)])
    return predictions, labels


# ---------------------------------------------------------------------------
# synthetic corpora: traffic-shaped flows fed through the real flow engine

def packet(ts, src, sport, dst, dport, protocol, size, flags=frozenset()):
    return ParsedPacket(ts=ts, src_ip=src, dst_ip=dst, src_port=sport,
                        dst_port=dport, protocol=protocol, ip_version=4,
                        ip_total_bytes=size, tcp_flags=flags)


def _flow_packets(rng, profile, src, sport, dst, start_ms):
    """Packet list for one flow; distributions are profile-shaped."""
    if profile == "benign-web":
        n = int(rng.integers(6, 18))
        sizes = rng.integers(60, 1400, size=n)
        iats = rng.exponential(120.0, size=n - 1) + 1
        protocol, flows_dport = 6, 80
        flag_seq = [("syn",)] + [("psh", "ack")] * (n - 2) + [("fin", "ack")]
    elif profile == "benign-dns":
        n = 2
        sizes = [int(rng.integers(60, 90)), int(rng.integers(120, 300))]
        iats = [float(rng.integers(10, 80))]
        protocol, flows_dport = 17, 53
        flag_seq = [()] * n
    elif profile == "dos":
        n = int(rng.integers(20, 60))
        sizes = rng.integers(40, 48, size=n)
        iats = rng.exponential(2.0, size=n - 1)
        protocol, flows_dport = 6, 80
        flag_seq = [("syn",)] * n
    elif profile == "cnc":
        n = int(rng.integers(4, 10))
        sizes = rng.integers(90, 130, size=n)
        iats = np.maximum(1.0, rng.normal(1000.0, 15.0, size=n - 1))
        protocol, flows_dport = 6, 6667
        flag_seq = [("syn",)] + [("psh", "ack")] * (n - 1)
    else:
        raise ValueError(profile)

    ts = float(start_ms)
    packets = []
    for i in range(n):
        if i:
            ts += float(iats[i - 1])
        outbound = (i % 2 == 0) if profile in ("benign-web", "benign-dns") \
            else (profile == "dos" or i % 3 != 2)
        flags = frozenset(flag_seq[i]) if protocol == 6 else frozenset()
        if outbound:
            packets.append(packet(int(ts), src, sport, dst, flows_dport,
                                   protocol, int(sizes[i]), flags))
        else:
            packets.append(packet(int(ts), dst, flows_dport, src, sport,
                                   protocol, int(sizes[i]), flags))
    return packets


_PROFILE_LABELS = {
    "benign-web": FlowLabel(klass="benign", family="-", attack_type="other"),
    "benign-dns": FlowLabel(klass="benign", family="-", attack_type="other"),
    "dos": FlowLabel(klass="malicious", family="DDoS botnet",
                     attack_type="DoS"),
    "cnc": FlowLabel(klass="malicious", family="C&C", attack_type="C&C"),
    "camouflaged": FlowLabel(klass="malicious",
                             family="PartOfAHorizontalPortScan",
                             attack_type="port-scan"),
}


def synthetic_dataset(n_flows: int, seed: int,
                      camouflage_frac: float = 0.0) -> Dataset:
    """Labeled flow dataset with benign, DoS and beaconing profiles.

    ``camouflage_frac`` adds malicious flows drawn from the *benign*
    distributions (labeled port-scan), the hard-to-separate class used by
    the ablation experiments.
    """
    rng = np.random.default_rng(seed)
    profiles = ("benign-web", "benign-dns", "dos", "cnc")
    weights = np.array([0.35, 0.20, 0.25, 0.20])
    weights = weights * (1.0 - camouflage_frac)
    choices = list(profiles) + ["camouflaged"]
    probs = list(weights) + [camouflage_frac]

    meter = FlowMeter()
    labels = []
    for i in range(n_flows):
        profile = str(rng.choice(choices, p=probs))
        shape = (str(rng.choice(("benign-web", "benign-dns")))
                 if profile == "camouflaged" else profile)
        src = ipaddress.IPv4Address(0x0A00_0000 + 2 * i).packed
        dst = ipaddress.IPv4Address(0x0A00_0001 + 2 * i).packed
        sport = 1024 + i % 60000
        start_ms = 1_700_000_000_000 + i * 37
        for pkt in _flow_packets(rng, shape, src, sport, dst, start_ms):
            meter.ingest(pkt)
        labels.append(_PROFILE_LABELS[profile])

    flows = meter.flush()
    assert len(flows) == n_flows
    for flow, label in zip(flows, labels):
        flow.label = label
    return from_samples([flow_to_sample(f) for f in flows])
