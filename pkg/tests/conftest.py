import struct

import numpy as np
import pytest

# one captured header per service class: 12 address-free bytes + label
REFERENCE_ROWS = [
    ("Chat", [69, 0, 4, 143, 108, 209, 64, 0, 128, 6, 3, 94], 0),
    ("Email", [69, 0, 5, 220, 90, 160, 64, 0, 32, 6, 101, 46], 1),
    ("File Transfer", [69, 0, 0, 72, 75, 84, 64, 0, 34, 6, 46, 146], 2),
    ("P2P", [69, 0, 0, 40, 100, 20, 64, 0, 128, 6, 25, 118], 3),
    ("Streaming", [69, 0, 0, 52, 129, 17, 64, 0, 64, 6, 145, 40], 4),
    ("VoIP", [69, 0, 0, 211, 172, 169, 64, 0, 76, 6, 251, 65], 5),
]
CHAT_BYTES = REFERENCE_ROWS[0][1]
SRC = bytes([192, 168, 1, 10])
DST = bytes([10, 0, 0, 2])
MAC_DST = bytes.fromhex("001122334455")
MAC_SRC = bytes.fromhex("66778899aabb")


def ipv4_packet(head12, payload=b"", src=SRC, dst=DST, options=b""):
    """Raw IPv4 packet from its first 12 header octets (IHL/length taken as given)."""
    return bytes(head12) + src + dst + options + payload


def chat_packet():
    # total length field 0x048F = 1167 octets, so 1147 payload octets
    return ipv4_packet(CHAT_BYTES, bytes(i % 251 for i in range(1147)))


def ether(ip, ethertype=0x0800, vlans=()):
    frame = MAC_DST + MAC_SRC
    for tpid, tci in vlans:
        frame += struct.pack(">HH", tpid, tci)
    return frame + struct.pack(">H", ethertype) + ip


def sll(ip, proto=0x0800):
    return struct.pack(">HHH8sH", 0, 1, 6, MAC_SRC + b"\0\0", proto) + ip


def pcap_bytes(frames, linktype=1, order="<", nano=False):
    """Hand-assembled classic pcap file contents."""
    magic = 0xA1B23C4D if nano else 0xA1B2C3D4
    out = struct.pack(order + "IHHiIII", magic, 2, 4, 0, 0, 262144, linktype)
    for i, f in enumerate(frames):
        frac = 123456789 if nano else 123456
        out += struct.pack(order + "IIII", 1600000000 + i, frac, len(f), len(f)) + f
    return out


@pytest.fixture
def write_pcap_file(tmp_path):
    def _write(name, frames, **kw):
        path = tmp_path / name
        path.write_bytes(pcap_bytes(frames, **kw))
        return path

    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# (criterion, title, passed, seconds, detail) rows filled in by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, secs, detail in sorted(ACCEPTANCE):
        line = f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title} ({secs:.2f} s)"
        terminalreporter.write_line(line + (f" - {detail}" if detail else ""))
