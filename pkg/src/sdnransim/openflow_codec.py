"""OpenFlow 1.0 wire codec for the message subset the testbed exchanges.

Supported: HELLO, ECHO_REQUEST, ECHO_REPLY, PACKET_IN, PACKET_OUT and
FLOW_MOD (ADD / DELETE_STRICT semantics), with OUTPUT as the only action.
All integers are big-endian.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from typing import Optional, Union

OFP_VERSION = 0x01

OFPT_HELLO = 0
OFPT_ECHO_REQUEST = 2
OFPT_ECHO_REPLY = 3
OFPT_PACKET_IN = 10
OFPT_PACKET_OUT = 13
OFPT_FLOW_MOD = 14

OFPP_MAX = 0xFF00
OFPP_FLOOD = 0xFFFB
OFPP_ALL = 0xFFFC
OFPP_CONTROLLER = 0xFFFD
OFPP_NONE = 0xFFFF

OFP_NO_BUFFER = 0xFFFFFFFF

OFPFC_ADD = 0
OFPFC_DELETE = 3

OFPR_NO_MATCH = 0
OFPR_ACTION = 1

OFPAT_OUTPUT = 0

OFPFW_IN_PORT = 1 << 0
OFPFW_DL_VLAN = 1 << 1
OFPFW_DL_SRC = 1 << 2
OFPFW_DL_DST = 1 << 3
OFPFW_DL_TYPE = 1 << 4
OFPFW_NW_PROTO = 1 << 5
OFPFW_TP_SRC = 1 << 6
OFPFW_TP_DST = 1 << 7
OFPFW_NW_SRC_SHIFT = 8
OFPFW_NW_SRC_MASK = 0x3F << OFPFW_NW_SRC_SHIFT
OFPFW_NW_SRC_ALL = 32 << OFPFW_NW_SRC_SHIFT
OFPFW_NW_DST_SHIFT = 14
OFPFW_NW_DST_MASK = 0x3F << OFPFW_NW_DST_SHIFT
OFPFW_NW_DST_ALL = 32 << OFPFW_NW_DST_SHIFT
OFPFW_DL_VLAN_PCP = 1 << 20
OFPFW_NW_TOS = 1 << 21
OFPFW_ALL = (1 << 22) - 1

# vlan, pcp and tos are never matched on
_ALWAYS_WILD = OFPFW_DL_VLAN | OFPFW_DL_VLAN_PCP | OFPFW_NW_TOS

HEADER = struct.Struct("!BBHI")
MATCH = struct.Struct("!IH6s6sHBxHBBxxIIHH")
ACTION_OUTPUT = struct.Struct("!HHHH")
FLOW_MOD_BODY = struct.Struct("!QHHHHIHH")
PACKET_IN_BODY = struct.Struct("!IHHBx")
PACKET_OUT_BODY = struct.Struct("!IHH")

FLOW_MOD_SIZE = HEADER.size + MATCH.size + FLOW_MOD_BODY.size  # 72
PACKET_IN_SIZE = HEADER.size + PACKET_IN_BODY.size  # 18
PACKET_OUT_SIZE = HEADER.size + PACKET_OUT_BODY.size  # 16

assert MATCH.size == 40 and FLOW_MOD_SIZE == 72 and PACKET_IN_SIZE == 18 and PACKET_OUT_SIZE == 16


class OfError(ValueError):
    pass


class UnsupportedAction(OfError):
    pass


class UnsupportedMatch(OfError):
    pass


class VersionUnsupported(OfError):
    pass


class Truncated(OfError):
    pass


class UnknownType(OfError):
    pass


class LengthMismatch(OfError):
    pass


@dataclass(frozen=True)
class Output:
    port: int
    max_len: int = 0


@dataclass(frozen=True)
class OfMatch:
    """Exact-value match; ``None`` means the field is wildcarded."""

    in_port: Optional[int] = None
    dl_src: Optional[bytes] = None
    dl_dst: Optional[bytes] = None
    dl_type: Optional[int] = None
    nw_proto: Optional[int] = None
    nw_src: Optional[ipaddress.IPv4Address] = None
    nw_dst: Optional[ipaddress.IPv4Address] = None
    tp_src: Optional[int] = None
    tp_dst: Optional[int] = None

    def __post_init__(self):
        for attr in ("nw_src", "nw_dst"):
            value = getattr(self, attr)
            if value is not None and not isinstance(value, ipaddress.IPv4Address):
                object.__setattr__(self, attr, ipaddress.IPv4Address(value))
        for attr in ("dl_src", "dl_dst"):
            value = getattr(self, attr)
            if value is not None:
                value = bytes(value)
                if len(value) != 6:
                    raise ValueError(f"{attr} must be 6 bytes")
                object.__setattr__(self, attr, value)

    @property
    def wildcards(self) -> int:
        w = _ALWAYS_WILD
        if self.in_port is None:
            w |= OFPFW_IN_PORT
        if self.dl_src is None:
            w |= OFPFW_DL_SRC
        if self.dl_dst is None:
            w |= OFPFW_DL_DST
        if self.dl_type is None:
            w |= OFPFW_DL_TYPE
        if self.nw_proto is None:
            w |= OFPFW_NW_PROTO
        if self.tp_src is None:
            w |= OFPFW_TP_SRC
        if self.tp_dst is None:
            w |= OFPFW_TP_DST
        if self.nw_src is None:
            w |= OFPFW_NW_SRC_ALL
        if self.nw_dst is None:
            w |= OFPFW_NW_DST_ALL
        return w

    def pack(self) -> bytes:
        return MATCH.pack(
            self.wildcards,
            self.in_port or 0,
            self.dl_src or bytes(6),
            self.dl_dst or bytes(6),
            0,
            0,
            self.dl_type or 0,
            0,
            self.nw_proto or 0,
            int(self.nw_src) if self.nw_src is not None else 0,
            int(self.nw_dst) if self.nw_dst is not None else 0,
            self.tp_src or 0,
            self.tp_dst or 0,
        )

    @classmethod
    def unpack(cls, data: bytes, offset: int = 0) -> "OfMatch":
        (w, in_port, dl_src, dl_dst, _vlan, _pcp, dl_type, _tos, nw_proto,
         nw_src, nw_dst, tp_src, tp_dst) = MATCH.unpack_from(data, offset)

        def ip(raw, shift):
            bits = (w >> shift) & 0x3F
            if bits >= 32:
                return None
            if bits:
                raise UnsupportedMatch("prefix-masked IPv4 matches are not modeled")
            return ipaddress.IPv4Address(raw)

        return cls(
            in_port=None if w & OFPFW_IN_PORT else in_port,
            dl_src=None if w & OFPFW_DL_SRC else dl_src,
            dl_dst=None if w & OFPFW_DL_DST else dl_dst,
            dl_type=None if w & OFPFW_DL_TYPE else dl_type,
            nw_proto=None if w & OFPFW_NW_PROTO else nw_proto,
            nw_src=ip(nw_src, OFPFW_NW_SRC_SHIFT),
            nw_dst=ip(nw_dst, OFPFW_NW_DST_SHIFT),
            tp_src=None if w & OFPFW_TP_SRC else tp_src,
            tp_dst=None if w & OFPFW_TP_DST else tp_dst,
        )


@dataclass(frozen=True)
class Hello:
    pass


@dataclass(frozen=True)
class EchoRequest:
    data: bytes = b""


@dataclass(frozen=True)
class EchoReply:
    data: bytes = b""


@dataclass(frozen=True)
class PacketIn:
    in_port: int
    frame: bytes
    reason: int = OFPR_NO_MATCH
    buffer_id: int = OFP_NO_BUFFER
    total_len: Optional[int] = None

    def __post_init__(self):
        if self.total_len is None:
            object.__setattr__(self, "total_len", len(self.frame))


@dataclass(frozen=True)
class PacketOut:
    actions: tuple[Output, ...]
    frame: bytes = b""
    in_port: int = OFPP_NONE
    buffer_id: int = OFP_NO_BUFFER

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))


@dataclass(frozen=True)
class FlowMod:
    match: OfMatch
    actions: tuple[Output, ...] = ()
    command: int = OFPFC_ADD
    priority: int = 0x8000
    idle_timeout: int = 0
    hard_timeout: int = 0
    cookie: int = 0
    buffer_id: int = OFP_NO_BUFFER
    out_port: int = OFPP_NONE
    flags: int = 0

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))


OfMessage = Union[Hello, EchoRequest, EchoReply, PacketIn, PacketOut, FlowMod]


def _pack_actions(actions) -> bytes:
    out = []
    for action in actions:
        if not isinstance(action, Output):
            raise UnsupportedAction(f"only OUTPUT actions are modeled, got {action!r}")
        out.append(ACTION_OUTPUT.pack(OFPAT_OUTPUT, ACTION_OUTPUT.size, action.port, action.max_len))
    return b"".join(out)


def _unpack_actions(data: bytes) -> tuple[Output, ...]:
    actions = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise LengthMismatch("action header cut short")
        atype, alen = struct.unpack_from("!HH", data, pos)
        if atype != OFPAT_OUTPUT:
            raise UnsupportedAction(f"action type {atype}")
        if alen != ACTION_OUTPUT.size or pos + alen > len(data):
            raise LengthMismatch(f"OUTPUT action length {alen}")
        _, _, port, max_len = ACTION_OUTPUT.unpack_from(data, pos)
        actions.append(Output(port, max_len))
        pos += alen
    return tuple(actions)


def encode(msg: OfMessage, xid: int = 0) -> bytes:
    if isinstance(msg, Hello):
        msg_type, body = OFPT_HELLO, b""
    elif isinstance(msg, EchoRequest):
        msg_type, body = OFPT_ECHO_REQUEST, bytes(msg.data)
    elif isinstance(msg, EchoReply):
        msg_type, body = OFPT_ECHO_REPLY, bytes(msg.data)
    elif isinstance(msg, PacketIn):
        msg_type = OFPT_PACKET_IN
        body = PACKET_IN_BODY.pack(msg.buffer_id, msg.total_len, msg.in_port, msg.reason) + msg.frame
    elif isinstance(msg, PacketOut):
        msg_type = OFPT_PACKET_OUT
        actions = _pack_actions(msg.actions)
        body = PACKET_OUT_BODY.pack(msg.buffer_id, msg.in_port, len(actions)) + actions + msg.frame
    elif isinstance(msg, FlowMod):
        msg_type = OFPT_FLOW_MOD
        body = (
            msg.match.pack()
            + FLOW_MOD_BODY.pack(
                msg.cookie,
                msg.command,
                msg.idle_timeout,
                msg.hard_timeout,
                msg.priority,
                msg.buffer_id,
                msg.out_port,
                msg.flags,
            )
            + _pack_actions(msg.actions)
        )
    else:
        raise UnknownType(f"cannot encode {type(msg).__name__}")
    length = HEADER.size + len(body)
    if length > 0xFFFF:
        raise LengthMismatch(f"message of {length} bytes exceeds the 16-bit length field")
    return HEADER.pack(OFP_VERSION, msg_type, length, xid) + body


def peek_length(wire: bytes) -> int:
    """Total length of the message at the start of ``wire`` (header only)."""
    if len(wire) < HEADER.size:
        raise Truncated(f"{len(wire)} bytes is shorter than the 8-byte header")
    version, _, length, _ = HEADER.unpack_from(wire)
    if version != OFP_VERSION:
        raise VersionUnsupported(f"version 0x{version:02x}")
    if length < HEADER.size:
        raise LengthMismatch(f"header length {length} < 8")
    return length


def decode(wire: bytes) -> tuple[OfMessage, int]:
    """Decode the first message in ``wire``; bytes past header.length are ignored."""
    length = peek_length(wire)
    if len(wire) < length:
        raise Truncated(f"header says {length} bytes, buffer holds {len(wire)}")
    _, msg_type, _, xid = HEADER.unpack_from(wire)
    body = bytes(wire[HEADER.size : length])

    if msg_type == OFPT_HELLO:
        return Hello(), xid
    if msg_type == OFPT_ECHO_REQUEST:
        return EchoRequest(body), xid
    if msg_type == OFPT_ECHO_REPLY:
        return EchoReply(body), xid
    if msg_type == OFPT_PACKET_IN:
        if length < PACKET_IN_SIZE:
            raise LengthMismatch(f"PACKET_IN of {length} bytes")
        buffer_id, total_len, in_port, reason = PACKET_IN_BODY.unpack_from(body)
        frame = body[PACKET_IN_BODY.size :]
        return PacketIn(in_port, frame, reason, buffer_id, total_len), xid
    if msg_type == OFPT_PACKET_OUT:
        if length < PACKET_OUT_SIZE:
            raise LengthMismatch(f"PACKET_OUT of {length} bytes")
        buffer_id, in_port, actions_len = PACKET_OUT_BODY.unpack_from(body)
        start = PACKET_OUT_BODY.size
        if start + actions_len > len(body) or actions_len % ACTION_OUTPUT.size:
            raise LengthMismatch(f"PACKET_OUT actions_len {actions_len}")
        actions = _unpack_actions(body[start : start + actions_len])
        return PacketOut(actions, body[start + actions_len :], in_port, buffer_id), xid
    if msg_type == OFPT_FLOW_MOD:
        if length < FLOW_MOD_SIZE or (length - FLOW_MOD_SIZE) % ACTION_OUTPUT.size:
            raise LengthMismatch(f"FLOW_MOD of {length} bytes")
        match = OfMatch.unpack(body)
        cookie, command, idle, hard, priority, buffer_id, out_port, flags = FLOW_MOD_BODY.unpack_from(body, MATCH.size)
        actions = _unpack_actions(body[MATCH.size + FLOW_MOD_BODY.size :])
        return FlowMod(match, actions, command, priority, idle, hard, cookie, buffer_id, out_port, flags), xid
    raise UnknownType(f"message type {msg_type}")


def decode_stream(buffer: bytes) -> tuple[list[tuple[OfMessage, int]], bytes]:
    """Split a byte stream into whole messages; return them and the unread tail."""
    out = []
    pos = 0
    view = memoryview(buffer)
    while len(buffer) - pos >= HEADER.size:
        length = peek_length(view[pos:])
        if len(buffer) - pos < length:
            break
        out.append(decode(view[pos : pos + length]))
        pos += length
    return out, bytes(buffer[pos:])
