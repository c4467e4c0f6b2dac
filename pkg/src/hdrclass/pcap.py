"""Classic pcap reading and IPv4 header sample extraction.

Only the classic libpcap container is understood (both byte orders, micro-
and nanosecond timestamps). Supported link types are Ethernet (1), raw IP
(101) and Linux cooked capture v1 (113).
"""

from __future__ import annotations

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

from .dataset import Dataset, HeaderSample

log = logging.getLogger(__name__)

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LINUX_SLL = 113
SUPPORTED_LINKTYPES = (LINKTYPE_ETHERNET, LINKTYPE_RAW, LINKTYPE_LINUX_SLL)

ETHERTYPE_IPV4 = 0x0800
VLAN_ETHERTYPES = (0x8100, 0x88A8)
MAX_VLAN_TAGS = 2

# magic as read little-endian -> (struct byte order, nanosecond timestamps)
_MAGICS = {
    0xA1B2C3D4: ("<", False),
    0xD4C3B2A1: (">", False),
    0xA1B23C4D: ("<", True),
    0x4D3CB2A1: (">", True),
}
_PCAPNG_MAGIC = 0x0A0D0D0A

HEADER_LEN = 12
MIN_INPUT_LEN, MAX_INPUT_LEN = 20, 1500
ADDR_SLICE = slice(12, 20)


class PcapError(ValueError):
    pass


class UnknownMagic(PcapError):
    pass


class PcapngNotSupported(UnknownMagic):
    pass


class TruncatedRecord(PcapError):
    def __init__(self, msg: str, good_records: int):
        super().__init__(msg)
        self.good_records = good_records


class UnsupportedLinkType(PcapError):
    pass


class BadInputLen(ValueError):
    pass


class NothingIngested(ValueError):
    pass


@dataclass(frozen=True)
class PcapRecord:
    timestamp_secs: int
    timestamp_frac: int
    captured_len: int
    original_len: int
    link_payload: bytes

    @property
    def oversized(self) -> bool:
        """True when the writer recorded more bytes than were on the wire."""
        return self.captured_len > self.original_len


class PcapReader:
    """Iterate the records of a classic pcap file.

    Iteration stops with :class:`TruncatedRecord` if the file ends inside a
    record; ``records_read`` then holds the number of complete records.
    """

    def __init__(self, path):
        self.path = str(path)
        self._fh = open(path, "rb")
        try:
            head = self._fh.read(24)
            if len(head) < 4:
                raise UnknownMagic(f"{self.path}: file too short to hold a pcap magic number")
            (magic,) = struct.unpack("<I", head[:4])
            if magic == _PCAPNG_MAGIC:
                raise PcapngNotSupported(
                    f"{self.path}: pcapng is not supported; convert with `editcap -F pcap in.pcapng out.pcap`"
                )
            if magic not in _MAGICS:
                raise UnknownMagic(f"{self.path}: unrecognised magic 0x{magic:08x}")
            if len(head) < 24:
                raise TruncatedRecord(f"{self.path}: global header cut short", 0)
            self.byte_order, self.nanosecond = _MAGICS[magic]
            (self.version_major, self.version_minor, _, _, self.snaplen, self.link_type) = struct.unpack(
                self.byte_order + "HHiIII", head[4:]
            )
        except Exception:
            self._fh.close()
            raise
        self._rec = struct.Struct(self.byte_order + "IIII")
        self.records_read = 0

    def __iter__(self) -> Iterator[PcapRecord]:
        fh, rec = self._fh, self._rec
        while True:
            hdr = fh.read(16)
            if not hdr:
                return
            if len(hdr) < 16:
                raise TruncatedRecord(
                    f"{self.path}: record header {self.records_read} truncated ({len(hdr)} of 16 bytes)",
                    self.records_read,
                )
            ts, frac, caplen, origlen = rec.unpack(hdr)
            body = fh.read(caplen)
            if len(body) < caplen:
                raise TruncatedRecord(
                    f"{self.path}: record {self.records_read} declares {caplen} bytes, only {len(body)} present",
                    self.records_read,
                )
            self.records_read += 1
            yield PcapRecord(ts, frac, caplen, origlen, body)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_pcap(path) -> PcapReader:
    return PcapReader(path)


def write_pcap(path, frames: Sequence[bytes], link_type: int = LINKTYPE_ETHERNET, big_endian: bool = False, nanosecond: bool = False) -> None:
    """Write ``frames`` as a classic pcap file (used for fixtures and demos)."""
    bo = ">" if big_endian else "<"
    magic = 0xA1B23C4D if nanosecond else 0xA1B2C3D4
    with open(path, "wb") as fh:
        fh.write(struct.pack(bo + "IHHiIII", magic, 2, 4, 0, 0, 65535, link_type))
        for i, frame in enumerate(frames):
            fh.write(struct.pack(bo + "IIII", 1_700_000_000 + i, i, len(frame), len(frame)))
            fh.write(frame)


# -- IPv4 --------------------------------------------------------------------

_IPV4 = struct.Struct(">BBHHHBBH4s4s")


@dataclass(frozen=True)
class Ipv4Header:
    version: int
    ihl: int
    tos: int
    total_length: int
    identification: int
    flags_fragment: int
    ttl: int
    protocol: int
    checksum: int
    src_addr: bytes
    dst_addr: bytes
    raw20: bytes = field(repr=False)

    @classmethod
    def parse(cls, raw: bytes) -> Ipv4Header | None:
        if len(raw) < 20:
            return None
        raw20 = bytes(raw[:20])
        vihl, tos, tl, ident, ff, ttl, proto, csum, src, dst = _IPV4.unpack(raw20)
        version, ihl = vihl >> 4, vihl & 0x0F
        if version != 4 or ihl < 5:
            return None
        return cls(version, ihl, tos, tl, ident, ff, ttl, proto, csum, src, dst, raw20)

    def pack(self) -> bytes:
        return _IPV4.pack(
            (self.version << 4) | self.ihl,
            self.tos,
            self.total_length,
            self.identification,
            self.flags_fragment,
            self.ttl,
            self.protocol,
            self.checksum,
            self.src_addr,
            self.dst_addr,
        )


def locate_ipv4(link_payload: bytes, link_type: int) -> tuple[Ipv4Header, int] | None:
    """Find the IPv4 header inside a link-layer frame.

    Returns ``(header, offset)``, or None for frames that do not carry a
    parseable IPv4 packet (ARP, IPv6, runts).
    """
    if link_type == LINKTYPE_ETHERNET:
        off = 12
        if len(link_payload) < off + 2:
            return None
        ethertype = int.from_bytes(link_payload[off : off + 2], "big")
        tags = 0
        while ethertype in VLAN_ETHERTYPES and tags < MAX_VLAN_TAGS:
            off += 4
            tags += 1
            if len(link_payload) < off + 2:
                return None
            ethertype = int.from_bytes(link_payload[off : off + 2], "big")
        if ethertype != ETHERTYPE_IPV4:
            return None
        off += 2
    elif link_type == LINKTYPE_RAW:
        off = 0
        if not link_payload or link_payload[0] >> 4 != 4:
            return None
    elif link_type == LINKTYPE_LINUX_SLL:
        if len(link_payload) < 16 or int.from_bytes(link_payload[14:16], "big") != ETHERTYPE_IPV4:
            return None
        off = 16
    else:
        raise UnsupportedLinkType(f"link type {link_type} is not supported (use 1, 101 or 113)")
    hdr = Ipv4Header.parse(link_payload[off : off + 20])
    return None if hdr is None else (hdr, off)


def check_input_len(input_len: int) -> None:
    if input_len != HEADER_LEN and not MIN_INPUT_LEN <= input_len <= MAX_INPUT_LEN:
        raise BadInputLen(f"input length must be 12 or within [20, 1500], got {input_len}")


def extract_from_frame(frame: bytes, link_type: int, label: int, input_len: int = HEADER_LEN, source_meta=None) -> HeaderSample | None:
    check_input_len(input_len)
    found = locate_ipv4(frame, link_type)
    if found is None:
        return None
    hdr, off = found
    if input_len == HEADER_LEN:
        return HeaderSample(hdr.raw20[:HEADER_LEN], label, source_meta)
    avail = len(frame) - off
    # Ethernet pads short frames; stop at the IP total length when it is sane
    end = hdr.total_length if 20 <= hdr.total_length <= avail else avail
    packet = bytearray(frame[off : off + min(end, input_len)])
    packet[ADDR_SLICE] = bytes(8)
    packet.extend(bytes(input_len - len(packet)))
    return HeaderSample(bytes(packet), label, source_meta)


def extract_sample(record: PcapRecord, link_type: int, label: int, input_len: int = HEADER_LEN, source_meta=None) -> HeaderSample | None:
    """Address-free byte sample for one record, or None if it carries no IPv4.

    With ``input_len`` 12 the sample is the first 12 header octets (the 20-byte
    header minus both addresses). Longer inputs take the first ``input_len``
    octets of the IP packet with the addresses zeroed, zero-padded on the right.
    """
    return extract_from_frame(record.link_payload, link_type, label, input_len, source_meta)


def frame_from_sample(sample: bytes) -> bytes:
    """Rebuild an Ethernet frame whose IPv4 header starts with ``sample``."""
    ip = bytearray(sample[:HEADER_LEN]) + bytes(8) + bytearray(sample[20:])
    ip.extend(bytes(max(0, 20 - len(ip))))
    return bytes(12) + ETHERTYPE_IPV4.to_bytes(2, "big") + bytes(ip)


# -- ingestion ---------------------------------------------------------------


@dataclass
class IngestSummary:
    records: int = 0
    ipv4: int = 0
    skipped: int = 0
    per_label: dict[str, int] = field(default_factory=dict)
    files: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _ingest_file(path, label: int, input_len: int):
    samples: list[HeaderSample] = []
    stats = {"path": str(path), "records": 0, "ipv4": 0, "skipped": 0}
    error = None
    try:
        with read_pcap(path) as reader:
            if reader.link_type not in SUPPORTED_LINKTYPES:
                raise UnsupportedLinkType(f"{path}: link type {reader.link_type} is not supported")
            stats["link_type"] = reader.link_type
            for i, rec in enumerate(reader):
                stats["records"] += 1
                s = extract_sample(rec, reader.link_type, label, input_len, f"{path}#{i}")
                if s is None:
                    stats["skipped"] += 1
                else:
                    stats["ipv4"] += 1
                    samples.append(s)
    except (PcapError, OSError) as exc:
        error = {"path": str(path), "error": type(exc).__name__, "message": str(exc)}
        log.warning("%s", exc)
    return samples, stats, error


def ingest(sources: Sequence[tuple[str, str]], input_len: int = HEADER_LEN, class_names: Sequence[str] | None = None, workers: int = 1):
    """Turn labeled pcap files into a Dataset.

    ``sources`` holds ``(path, label_name)`` pairs. Class indices follow
    ``class_names`` when given, otherwise the order labels first appear.
    A file that fails to parse is recorded in the summary and the other files
    are still read; samples taken before a truncated record are kept.
    """
    if not sources:
        raise ValueError("ingest needs at least one pcap path")
    check_input_len(input_len)
    names = list(class_names) if class_names else list(dict.fromkeys(lbl for _, lbl in sources))
    index = {n: i for i, n in enumerate(names)}
    for _, lbl in sources:
        if lbl not in index:
            raise ValueError(f"label {lbl!r} not among class names {names}")
    jobs = [(p, index[lbl], input_len) for p, lbl in sources]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: _ingest_file(*j), jobs))
    else:
        results = [_ingest_file(*j) for j in jobs]

    summary = IngestSummary(per_label={n: 0 for n in names})
    samples: list[HeaderSample] = []
    for (path, lbl), (got, stats, error) in zip(sources, results):
        samples.extend(got)
        summary.records += stats["records"]
        summary.ipv4 += stats["ipv4"]
        summary.skipped += stats["skipped"]
        summary.per_label[lbl] += len(got)
        summary.files.append(stats)
        if error is not None:
            summary.errors.append(error)
    if not samples:
        raise NothingIngested("no IPv4 packets found in any input file")
    return Dataset.from_samples(samples, names, input_len), summary
