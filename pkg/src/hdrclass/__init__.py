"""Packet-level traffic classification from address-free IPv4 header bytes."""

__version__ = "0.1.0"
