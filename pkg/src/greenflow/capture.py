"""Classic pcap reading and Ethernet/IPv4/IPv6/TCP/UDP header decoding.

Only the fields the flow meter needs are extracted; packet payloads are
never retained.  Sizes come from the IP total-length fields, not from the
captured frame length, so datasets built from snaplen-truncated captures
still carry true on-the-wire byte counts.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Optional

from .exceptions import DataError

# accepted magics: (byte order, timestamp fraction divisor to ms)
_MAGICS = {
    0xA1B2C3D4: ("<", 1000),       # little-endian, microseconds
    0xD4C3B2A1: (">", 1000),       # big-endian, microseconds
    0xA1B23C4D: ("<", 1000000),    # little-endian, nanoseconds
    0x4D3CB2A1: (">", 1000000),    # big-endian, nanoseconds
}

LINKTYPE_ETHERNET = 1

ETHERTYPE_VLAN = 0x8100
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD

PROTO_TCP = 6
PROTO_UDP = 17

TCP_FLAG_NAMES = ("ack", "cwr", "ece", "fin", "psh", "rst", "syn", "urg")
_TCP_FLAG_BITS = {
    "fin": 0x01, "syn": 0x02, "rst": 0x04, "psh": 0x08,
    "ack": 0x10, "urg": 0x20, "ece": 0x40, "cwr": 0x80,
}


class UnknownMagic(DataError):
    """File does not start with any accepted pcap magic."""


class UnsupportedLinkType(DataError):
    """Capture link type is not Ethernet."""


class MalformedHeader(DataError):
    """Header length fields inconsistent with the frame."""


@dataclass(frozen=True)
class ParsedPacket:
    ts: int                  # integer milliseconds since epoch
    src_ip: bytes            # 4 or 16 bytes
    dst_ip: bytes
    src_port: int            # 0 for non-TCP/UDP
    dst_port: int
    protocol: int            # IP protocol number
    ip_version: int          # 4 or 6
    ip_total_bytes: int      # from the IP header, not the frame
    tcp_flags: frozenset     # subset of TCP_FLAG_NAMES

    def flag(self, name: str) -> bool:
        return name in self.tcp_flags


class CaptureReader:
    """Iterates (frame bytes, timestamp ms) records of one classic pcap.

    Truncated trailing records are dropped; the ``truncated`` counter says
    how many.  Timestamps are normalized to integer milliseconds whatever
    the capture's native resolution.
    """

    def __init__(self, stream: BinaryIO):
        self._stream = stream
        self.truncated = 0
        self.records = 0
        header = stream.read(24)
        if len(header) < 24:
            raise UnknownMagic("file shorter than a pcap global header")
        magic = struct.unpack("<I", header[:4])[0]
        if magic not in _MAGICS:
            magic_be = struct.unpack(">I", header[:4])[0]
            if magic_be in _MAGICS:
                magic = magic_be
            else:
                raise UnknownMagic(f"magic 0x{magic:08X} is not classic pcap")
        self._order, self._frac_divisor = _MAGICS[magic]
        _vmaj, _vmin, _zone, _sigfigs, self.snaplen, self.link_type = (
            struct.unpack(self._order + "HHiIII", header[4:]))
        if self.link_type != LINKTYPE_ETHERNET:
            raise UnsupportedLinkType(
                f"link type {self.link_type}, only Ethernet is handled")

    def __iter__(self) -> Iterator[tuple[bytes, int]]:
        rec = struct.Struct(self._order + "IIII")
        while True:
            header = self._stream.read(16)
            if not header:
                return
            if len(header) < 16:
                self.truncated += 1
                return
            ts_sec, ts_frac, incl_len, _orig_len = rec.unpack(header)
            data = self._stream.read(incl_len)
            if len(data) < incl_len:
                self.truncated += 1
                return
            self.records += 1
            ts_ms = ts_sec * 1000 + ts_frac // self._frac_divisor
            yield data, ts_ms


def read_capture(stream: BinaryIO) -> CaptureReader:
    return CaptureReader(stream)


def _tcp_flags(byte: int) -> frozenset:
    return frozenset(n for n, bit in _TCP_FLAG_BITS.items() if byte & bit)


def decode_frame(frame: bytes, ts: int) -> Optional[ParsedPacket]:
    """Decode one Ethernet frame into the fields the flow meter keys on.

    Returns None for frames the pipeline ignores by design: non-IP
    ethertypes and IP fragments with nonzero offset.  Non-TCP/UDP packets
    (ICMP and friends) are kept, with ports 0 and no flags, so they still
    become flow members.  Raises MalformedHeader when length fields
    contradict the captured bytes.
    """
    if len(frame) < 14:
        raise MalformedHeader(f"frame of {len(frame)} bytes, need >= 14")
    ethertype = struct.unpack("!H", frame[12:14])[0]
    offset = 14
    if ethertype == ETHERTYPE_VLAN:
        # at most one 802.1Q tag
        if len(frame) < 18:
            raise MalformedHeader("frame ends inside the VLAN tag")
        ethertype = struct.unpack("!H", frame[16:18])[0]
        offset = 18

    if ethertype == ETHERTYPE_IPV4:
        return _decode_ipv4(frame, offset, ts)
    if ethertype == ETHERTYPE_IPV6:
        return _decode_ipv6(frame, offset, ts)
    return None


def _decode_ipv4(frame: bytes, offset: int, ts: int) -> Optional[ParsedPacket]:
    ip = frame[offset:]
    if len(ip) < 20:
        raise MalformedHeader("captured bytes end inside the IPv4 header")
    version = ip[0] >> 4
    ihl = (ip[0] & 0x0F) * 4
    if version != 4 or ihl < 20:
        raise MalformedHeader(f"IPv4 version/IHL byte 0x{ip[0]:02X}")
    total_length = struct.unpack("!H", ip[2:4])[0]
    if total_length < ihl:
        raise MalformedHeader(
            f"total length {total_length} < header length {ihl}")
    frag = struct.unpack("!H", ip[6:8])[0]
    if frag & 0x1FFF:
        return None  # non-first fragment: no transport header to read
    protocol = ip[9]
    src_ip = ip[12:16]
    dst_ip = ip[16:20]
    if len(ip) < ihl:
        raise MalformedHeader("captured bytes end inside IPv4 options")
    sport, dport, flags = _decode_transport(ip[ihl:], protocol)
    return ParsedPacket(ts=ts, src_ip=src_ip, dst_ip=dst_ip, src_port=sport,
                        dst_port=dport, protocol=protocol, ip_version=4,
                        ip_total_bytes=total_length, tcp_flags=flags)


def _decode_ipv6(frame: bytes, offset: int, ts: int) -> Optional[ParsedPacket]:
    ip = frame[offset:]
    if len(ip) < 40:
        raise MalformedHeader("captured bytes end inside the IPv6 header")
    version = ip[0] >> 4
    if version != 6:
        raise MalformedHeader(f"IPv6 version nibble {version}")
    payload_length = struct.unpack("!H", ip[4:6])[0]
    next_header = ip[6]
    src_ip = ip[8:24]
    dst_ip = ip[24:40]
    sport, dport, flags = _decode_transport(ip[40:], next_header)
    return ParsedPacket(ts=ts, src_ip=src_ip, dst_ip=dst_ip, src_port=sport,
                        dst_port=dport, protocol=next_header, ip_version=6,
                        ip_total_bytes=40 + payload_length, tcp_flags=flags)


def _decode_transport(data: bytes, protocol: int):
    """Ports and TCP flags; zeros when the protocol has none or the
    capture was cut before them (snaplen truncation is not an error)."""
    if protocol not in (PROTO_TCP, PROTO_UDP) or len(data) < 4:
        return 0, 0, frozenset()
    sport, dport = struct.unpack("!HH", data[:4])
    flags = frozenset()
    if protocol == PROTO_TCP and len(data) >= 14:
        flags = _tcp_flags(data[13])
    return sport, dport, flags
