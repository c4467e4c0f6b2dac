import struct

import dpkt
import pytest
from hypothesis import given, strategies as st

from conftest import CHAT_BYTES, DST, SRC, chat_packet, ether, ipv4_packet, pcap_bytes, sll
from hdrclass.pcap import (
    BadInputLen,
    Ipv4Header,
    NothingIngested,
    PcapngNotSupported,
    PcapRecord,
    TruncatedRecord,
    UnknownMagic,
    UnsupportedLinkType,
    extract_sample,
    ingest,
    locate_ipv4,
    read_pcap,
    write_pcap,
)

ARP = ether(bytes(28), ethertype=0x0806)
IPV6 = ether(bytes([0x60]) + bytes(39), ethertype=0x86DD)


def _dpkt_records(path):
    with open(path, "rb") as fh:
        r = dpkt.pcap.Reader(fh)
        return r.datalink(), [bytes(buf) for _, buf in r]


@pytest.mark.parametrize("order", ["<", ">"])
@pytest.mark.parametrize("nano", [False, True])
def test_read_single_record_matches_dpkt(write_pcap_file, order, nano):
    frame = bytes(range(42))
    raw = struct.pack(order + "IHHiIII", 0xA1B23C4D if nano else 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    raw += struct.pack(order + "IIII", 7, 999, 42, 60) + frame
    path = write_pcap_file("one.pcap", [])
    path.write_bytes(raw)
    with read_pcap(path) as r:
        recs = list(r)
        assert r.link_type == 1
        assert r.nanosecond is nano
    assert len(recs) == 1
    rec = recs[0]
    assert (rec.timestamp_secs, rec.timestamp_frac, rec.captured_len, rec.original_len) == (7, 999, 42, 60)
    assert rec.link_payload == frame
    assert not rec.oversized
    assert _dpkt_records(path) == (1, [frame])


def test_empty_file_is_unknown_magic(tmp_path):
    p = tmp_path / "empty.pcap"
    p.write_bytes(b"")
    with pytest.raises(UnknownMagic):
        read_pcap(p)


def test_pcapng_rejected_with_hint(tmp_path):
    p = tmp_path / "x.pcapng"
    p.write_bytes(struct.pack("<IIIHHq", 0x0A0D0D0A, 28, 0x1A2B3C4D, 1, 0, -1))
    with pytest.raises(PcapngNotSupported, match="editcap"):
        read_pcap(p)


def test_header_only_file_yields_nothing(write_pcap_file):
    path = write_pcap_file("none.pcap", [], linktype=101)
    with read_pcap(path) as r:
        assert list(r) == []
        assert r.link_type == 101


def test_truncated_body_reports_good_records(write_pcap_file):
    path = write_pcap_file("t.pcap", [b"a" * 20, b"b" * 30])
    path.write_bytes(path.read_bytes()[:-5])
    got = []
    with read_pcap(path) as r:
        with pytest.raises(TruncatedRecord) as info:
            for rec in r:
                got.append(rec)
    assert info.value.good_records == 1
    assert len(got) == 1


def test_truncated_record_header(write_pcap_file):
    path = write_pcap_file("t.pcap", [b"a" * 20])
    path.write_bytes(path.read_bytes() + b"\x01\x02\x03")
    with read_pcap(path) as r, pytest.raises(TruncatedRecord) as info:
        list(r)
    assert info.value.good_records == 1


def test_oversized_record_is_kept_and_flagged():
    rec = PcapRecord(0, 0, 10, 8, b"x" * 10)
    assert rec.oversized


# -- locate_ipv4 ----------------------------------------------------------------


def test_locate_ethernet_matches_dpkt():
    frame = ether(chat_packet())
    hdr, off = locate_ipv4(frame, 1)
    assert (hdr.version, hdr.ihl, off) == (4, 5, 14)
    ip = dpkt.ethernet.Ethernet(frame).data
    assert isinstance(ip, dpkt.ip.IP)
    assert (hdr.tos, hdr.total_length, hdr.identification, hdr.ttl, hdr.protocol, hdr.checksum) == (
        ip.tos,
        ip.len,
        ip.id,
        ip.ttl,
        ip.p,
        ip.sum,
    )
    assert (hdr.src_addr, hdr.dst_addr) == (SRC, DST)


def test_locate_skips_ipv6_and_arp():
    assert locate_ipv4(IPV6, 1) is None
    assert locate_ipv4(ARP, 1) is None


def test_locate_vlan_tagged():
    frame = ether(chat_packet(), vlans=[(0x8100, 100)])
    hdr, off = locate_ipv4(frame, 1)
    assert off == 18
    assert hdr.raw20[:12] == bytes(CHAT_BYTES)
    ip = dpkt.ethernet.Ethernet(frame).data
    assert ip.ttl == hdr.ttl


def test_locate_double_vlan_tagged():
    frame = ether(chat_packet(), vlans=[(0x88A8, 10), (0x8100, 20)])
    assert locate_ipv4(frame, 1)[1] == 22


def test_locate_three_vlan_tags_rejected():
    frame = ether(chat_packet(), vlans=[(0x88A8, 1), (0x8100, 2), (0x8100, 3)])
    assert locate_ipv4(frame, 1) is None


def test_locate_raw_and_sll():
    assert locate_ipv4(chat_packet(), 101)[1] == 0
    assert locate_ipv4(bytes([0x60]) + bytes(39), 101) is None
    assert locate_ipv4(sll(chat_packet()), 113)[1] == 16
    assert locate_ipv4(sll(bytes(40), proto=0x86DD), 113) is None


def test_locate_runt_and_bad_ihl():
    assert locate_ipv4(ether(bytes([0x45]) + bytes(10)), 1) is None
    assert locate_ipv4(bytes([0x44]) + bytes(19), 101) is None


def test_unsupported_linktype():
    with pytest.raises(UnsupportedLinkType):
        locate_ipv4(b"\x00" * 40, 105)


@st.composite
def raw_headers(draw):
    ihl = draw(st.integers(5, 15))
    head = [0x40 | ihl] + draw(st.lists(st.integers(0, 255), min_size=19, max_size=19))
    return bytes(head)


@given(raw_headers())
def test_header_reserialises_exactly(raw):
    hdr = Ipv4Header.parse(raw)
    assert hdr is not None
    assert len(hdr.raw20) == 20
    assert hdr.pack() == hdr.raw20 == raw


@given(raw_headers(), st.binary(max_size=60))
def test_twelve_byte_sample_is_header_minus_addresses(raw, payload):
    rec = PcapRecord(0, 0, 0, 0, ether(raw + payload))
    s = extract_sample(rec, 1, 0, 12)
    assert s.values == raw[:20][:-8]


# -- extract_sample ---------------------------------------------------------------


def _record(frame):
    return PcapRecord(0, 0, len(frame), len(frame), frame)


def test_extract_reference_chat_row():
    s = extract_sample(_record(ether(chat_packet())), 1, 0, 12)
    assert list(s.values) == [69, 0, 4, 143, 108, 209, 64, 0, 128, 6, 3, 94]
    assert s.label == 0


def test_extract_twenty_masks_addresses():
    pkt = chat_packet()
    s = extract_sample(_record(ether(pkt)), 1, 0, 20)
    assert s.values == pkt[:12] + bytes(8)


def test_extract_pads_short_packet():
    head = [0x45, 0, 0, 28, 1, 2, 0, 0, 64, 17, 0xAB, 0xCD]
    pkt = ipv4_packet(head, payload=bytes(range(1, 9)))
    assert len(pkt) == 28
    # Ethernet minimum frame padding must not leak into the sample
    frame = ether(pkt) + b"\xee" * 18
    s = extract_sample(_record(frame), 1, 1, 50)
    assert len(s.values) == 50
    assert s.values == bytes(head) + bytes(8) + bytes(range(1, 9)) + bytes(22)


def test_extract_options_header_twelve_bytes():
    head = [0x46, 0, 0, 32, 0, 1, 0, 0, 64, 6, 0, 0]
    pkt = ipv4_packet(head, options=b"\x01\x01\x01\x00", payload=b"abcdefgh")
    assert extract_sample(_record(ether(pkt)), 1, 0, 12).values == bytes(head)
    long = extract_sample(_record(ether(pkt)), 1, 0, 24)
    assert long.values == bytes(head) + bytes(8) + b"\x01\x01\x01\x00"


def test_extract_none_for_non_ipv4():
    assert extract_sample(_record(IPV6), 1, 0, 12) is None


@pytest.mark.parametrize("n", [0, 11, 13, 19, 1501])
def test_bad_input_len(n):
    with pytest.raises(BadInputLen):
        extract_sample(_record(ether(chat_packet())), 1, 0, n)


# -- ingest ---------------------------------------------------------------------


def _mixed_frames(ttl):
    frames = []
    for i in range(3):
        head = [0x45, 0, 0, 40, 0, i, 0x40, 0, ttl, 6, 0, i]
        frames.append(ether(ipv4_packet(head, payload=bytes(20))))
    frames.insert(1, ARP)
    return frames


def test_ingest_two_files(write_pcap_file):
    a = write_pcap_file("a.pcap", _mixed_frames(64))
    b = write_pcap_file("b.pcap", _mixed_frames(128), order=">")
    ds, summary = ingest([(str(a), "web"), (str(b), "voip")])
    assert len(ds) == 6
    assert ds.class_names == ("web", "voip")
    assert ds.y.tolist() == [0, 0, 0, 1, 1, 1]
    assert ds.x[:, 8].tolist() == [64] * 3 + [128] * 3
    assert (summary.records, summary.ipv4, summary.skipped) == (8, 6, 2)
    assert summary.per_label == {"web": 3, "voip": 3}
    assert ds.meta[0].endswith("a.pcap#0") and ds.meta[1].endswith("a.pcap#2")


def test_ingest_is_deterministic(write_pcap_file):
    a = write_pcap_file("a.pcap", _mixed_frames(64))
    b = write_pcap_file("b.pcap", _mixed_frames(128))
    src = [(str(a), "x"), (str(b), "y")]
    d1, _ = ingest(src)
    d2, _ = ingest(src, workers=2)
    assert d1 == d2


def test_ingest_requires_paths():
    with pytest.raises(ValueError):
        ingest([])


def test_ingest_all_ipv6(write_pcap_file):
    p = write_pcap_file("v6.pcap", [IPV6, IPV6])
    with pytest.raises(NothingIngested):
        ingest([(str(p), "x")])


def test_ingest_bad_file_does_not_abort_others(write_pcap_file, tmp_path):
    good = write_pcap_file("a.pcap", _mixed_frames(64))
    bad = tmp_path / "bad.pcap"
    bad.write_bytes(b"not a pcap at all")
    ds, summary = ingest([(str(bad), "x"), (str(good), "y")])
    assert len(ds) == 3
    assert summary.errors[0]["error"] == "UnknownMagic"


def test_ingest_unsupported_linktype_reported_once(write_pcap_file):
    p = write_pcap_file("w.pcap", [b"\0" * 40] * 3, linktype=105)
    ok = write_pcap_file("ok.pcap", _mixed_frames(1))
    _, summary = ingest([(str(p), "a"), (str(ok), "b")])
    assert [e["error"] for e in summary.errors] == ["UnsupportedLinkType"]


def test_write_pcap_roundtrip(tmp_path):
    frames = [ether(chat_packet()), ARP]
    p = tmp_path / "w.pcap"
    write_pcap(p, frames, big_endian=True, nanosecond=True)
    with read_pcap(p) as r:
        assert [rec.link_payload for rec in r] == frames
    assert _dpkt_records(p)[1] == frames


def test_fixture_builder_agrees_with_dpkt(tmp_path):
    p = tmp_path / "f.pcap"
    p.write_bytes(pcap_bytes([ether(chat_packet())], order=">", nano=True))
    assert _dpkt_records(p)[1] == [ether(chat_packet())]
