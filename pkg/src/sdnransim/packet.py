"""Ethernet / ARP / IPv4 / UDP / TCP frames and their byte encoding.

Only what the testbed puts on the wire is supported.  L4 checksums are
left at zero; the IPv4 header checksum is computed.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field
from typing import Optional

ETH_IPV4 = 0x0800
ETH_ARP = 0x0806
PROTO_TCP = 6
PROTO_UDP = 17
BROADCAST = b"\xff" * 6

ETH = struct.Struct("!6s6sH")
IPV4 = struct.Struct("!BBHHHBBH4s4s")
UDP = struct.Struct("!HHHH")
TCP = struct.Struct("!HHIIHHHH")
ARP = struct.Struct("!HHBBH6s4s6s4s")


class FrameError(ValueError):
    pass


def mac(text: str) -> bytes:
    return bytes.fromhex(text.replace(":", ""))


def mac_str(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def ipv4_checksum(header: bytes) -> int:
    total = sum(struct.unpack(f"!{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


@dataclass
class IpInfo:
    src_ip: ipaddress.IPv4Address
    dst_ip: ipaddress.IPv4Address
    proto: int
    src_port: int = 0
    dst_port: int = 0
    ip_id: int = 0

    def __post_init__(self):
        if not isinstance(self.src_ip, ipaddress.IPv4Address):
            self.src_ip = ipaddress.IPv4Address(self.src_ip)
        if not isinstance(self.dst_ip, ipaddress.IPv4Address):
            self.dst_ip = ipaddress.IPv4Address(self.dst_ip)


@dataclass
class Frame:
    src_mac: bytes
    dst_mac: bytes
    ethertype: int
    ip: Optional[IpInfo] = None
    payload: bytes = b""
    ingress_port: int = 0
    # simulator bookkeeping; never on the wire
    uid: int = field(default=-1, compare=False, repr=False)

    def __post_init__(self):
        if (self.ethertype == ETH_IPV4) != (self.ip is not None):
            raise FrameError("ip header present iff ethertype is 0x0800")

    @property
    def size_bytes(self) -> int:
        size = ETH.size + len(self.payload)
        if self.ip is not None:
            size += IPV4.size
            if self.ip.proto == PROTO_UDP:
                size += UDP.size
            elif self.ip.proto == PROTO_TCP:
                size += TCP.size
        return size

    def to_bytes(self) -> bytes:
        eth = ETH.pack(self.dst_mac, self.src_mac, self.ethertype)
        ip = self.ip
        if ip is None:
            return eth + self.payload
        if ip.proto == PROTO_UDP:
            l4 = UDP.pack(ip.src_port, ip.dst_port, UDP.size + len(self.payload), 0)
        elif ip.proto == PROTO_TCP:
            # PSH|ACK, 20-byte header
            l4 = TCP.pack(ip.src_port, ip.dst_port, 0, 0, (5 << 12) | 0x018, 65535, 0, 0)
        else:
            l4 = b""
        total = IPV4.size + len(l4) + len(self.payload)
        header = IPV4.pack(0x45, 0, total, ip.ip_id, 0x4000, 64, ip.proto, 0, ip.src_ip.packed, ip.dst_ip.packed)
        header = header[:10] + struct.pack("!H", ipv4_checksum(header)) + header[12:]
        return eth + header + l4 + self.payload

    @classmethod
    def from_bytes(cls, data: bytes, ingress_port: int = 0) -> "Frame":
        if len(data) < ETH.size:
            raise FrameError("frame shorter than an Ethernet header")
        dst, src, ethertype = ETH.unpack_from(data)
        body = data[ETH.size :]
        if ethertype != ETH_IPV4:
            return cls(src, dst, ethertype, None, bytes(body), ingress_port)
        if len(body) < IPV4.size:
            raise FrameError("truncated IPv4 header")
        vihl, _, total, ip_id, _, _, proto, _, sip, dip = IPV4.unpack_from(body)
        ihl = (vihl & 0xF) * 4
        if vihl >> 4 != 4 or ihl < IPV4.size or total > len(body) or total < ihl:
            raise FrameError("bad IPv4 header")
        l4 = body[ihl:total]
        sport = dport = 0
        if proto == PROTO_UDP:
            if len(l4) < UDP.size:
                raise FrameError("truncated UDP header")
            sport, dport, _, _ = UDP.unpack_from(l4)
            payload = l4[UDP.size :]
        elif proto == PROTO_TCP:
            if len(l4) < TCP.size:
                raise FrameError("truncated TCP header")
            sport, dport = struct.unpack_from("!HH", l4)
            offset = (l4[12] >> 4) * 4
            payload = l4[offset:]
        else:
            payload = l4
        info = IpInfo(ipaddress.IPv4Address(sip), ipaddress.IPv4Address(dip), proto, sport, dport, ip_id)
        return cls(src, dst, ethertype, info, bytes(payload), ingress_port)


ARP_REQUEST = 1
ARP_REPLY = 2


def arp_frame(op: int, src_mac: bytes, src_ip, dst_mac: bytes, dst_ip) -> Frame:
    sip = ipaddress.IPv4Address(src_ip).packed
    dip = ipaddress.IPv4Address(dst_ip).packed
    target = bytes(6) if dst_mac == BROADCAST else dst_mac
    body = ARP.pack(1, ETH_IPV4, 6, 4, op, src_mac, sip, target, dip)
    return Frame(src_mac, dst_mac, ETH_ARP, None, body)


def parse_arp(frame: Frame) -> Optional[tuple[int, bytes, ipaddress.IPv4Address, ipaddress.IPv4Address]]:
    """(op, sender mac, sender ip, target ip), or None for a non-ARP frame."""
    if frame.ethertype != ETH_ARP or len(frame.payload) < ARP.size:
        return None
    _, _, _, _, op, sha, spa, _, tpa = ARP.unpack_from(frame.payload)
    return op, sha, ipaddress.IPv4Address(spa), ipaddress.IPv4Address(tpa)


def arp_announce(src_mac: bytes, ip) -> Frame:
    """Gratuitous ARP request announcing ``ip`` at ``src_mac``."""
    return arp_frame(ARP_REQUEST, src_mac, ip, BROADCAST, ip)


def udp_frame(src_mac, dst_mac, src_ip, dst_ip, sport, dport, payload, ip_id=0) -> Frame:
    return Frame(src_mac, dst_mac, ETH_IPV4, IpInfo(src_ip, dst_ip, PROTO_UDP, sport, dport, ip_id), payload)


def tcp_frame(src_mac, dst_mac, src_ip, dst_ip, sport, dport, payload, ip_id=0) -> Frame:
    return Frame(src_mac, dst_mac, ETH_IPV4, IpInfo(src_ip, dst_ip, PROTO_TCP, sport, dport, ip_id), payload)
