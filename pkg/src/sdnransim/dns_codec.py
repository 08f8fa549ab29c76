"""RFC 1035 wire codec for the subset needed to inspect DNS over UDP.

Compression pointers are followed when parsing but never emitted, so the
encoder output is always uncompressed.  Only A and CNAME rdata are
interpreted; everything else (and every record in the authority and
additional sections) is carried as opaque bytes.

>>> encode_name(DomainName.from_text("example.com"))
b'\\x07example\\x03com\\x00'
"""

from __future__ import annotations

import ipaddress
import re
import struct
from dataclasses import dataclass, field
from typing import Iterable, Union

__all__ = [
    "TYPE_A",
    "TYPE_CNAME",
    "CLASS_IN",
    "RCODE_NOERROR",
    "RCODE_NXDOMAIN",
    "DnsError",
    "LabelTooLong",
    "NameTooLong",
    "MalformedDomain",
    "Truncated",
    "PointerLoop",
    "BadPointer",
    "BadRdata",
    "NotAResponse",
    "DomainName",
    "Question",
    "ResourceRecord",
    "DnsMessage",
    "canonicalize",
    "encode_name",
    "parse_message",
    "encode_message",
    "extract_checkable_domains",
    "extract_a_records",
    "make_query",
    "make_response",
]

TYPE_A = 1
TYPE_CNAME = 5
CLASS_IN = 1
RCODE_NOERROR = 0
RCODE_NXDOMAIN = 3

HEADER = struct.Struct("!HHHHHH")
QFIXED = struct.Struct("!HH")
RRFIXED = struct.Struct("!HHIH")

MAX_LABEL = 63
MAX_NAME = 255

_TEXT_LABEL = re.compile(rb"^[A-Za-z0-9_-]{1,63}$")


class DnsError(ValueError):
    """Base class for every DNS codec failure."""


class LabelTooLong(DnsError):
    pass


class NameTooLong(DnsError):
    pass


class MalformedDomain(DnsError):
    """Text that does not describe a usable host name."""


class Truncated(DnsError):
    pass


class PointerLoop(DnsError):
    pass


class BadPointer(DnsError):
    pass


class BadRdata(DnsError):
    pass


class NotAResponse(DnsError):
    pass


@dataclass(frozen=True)
class DomainName:
    """A domain name as a tuple of raw labels, always stored lowercased.

    Lowercasing at construction makes equality and hashing ASCII
    case-insensitive.  The empty tuple is the root name.
    """

    labels: tuple[bytes, ...] = ()

    def __post_init__(self):
        labels = tuple(bytes(label).lower() for label in self.labels)
        total = 1
        for label in labels:
            if not label:
                raise MalformedDomain("empty label")
            if len(label) > MAX_LABEL:
                raise LabelTooLong(f"label of {len(label)} bytes exceeds {MAX_LABEL}")
            total += len(label) + 1
        if total > MAX_NAME:
            raise NameTooLong(f"encoded name of {total} bytes exceeds {MAX_NAME}")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_text(cls, text: Union[str, bytes]) -> "DomainName":
        """Parse a dotted host name; one trailing dot is accepted.

        Labels are restricted to letters, digits, hyphen and underscore.
        Punycode labels are plain ASCII and pass through untouched.
        """
        if isinstance(text, str):
            try:
                raw = text.strip().encode("ascii")
            except UnicodeEncodeError:
                raise MalformedDomain(f"non-ASCII name {text!r}") from None
        else:
            raw = bytes(text).strip()
        if raw.endswith(b"."):
            raw = raw[:-1]
        if not raw:
            return cls(())
        labels = raw.split(b".")
        for label in labels:
            if len(label) > MAX_LABEL:
                raise LabelTooLong(f"label of {len(label)} bytes exceeds {MAX_LABEL}")
            if not _TEXT_LABEL.match(label):
                raise MalformedDomain(f"bad label {label!r} in {raw!r}")
        return cls(tuple(labels))

    @property
    def is_root(self) -> bool:
        return not self.labels

    def __str__(self) -> str:
        return ".".join(label.decode("ascii", "backslashreplace") for label in self.labels)

    def __repr__(self) -> str:
        return f"DomainName({str(self)!r})"


def canonicalize(name: Union[str, bytes, DomainName]) -> str:
    """Canonical text form: lowercase, no trailing dot."""
    if not isinstance(name, DomainName):
        name = DomainName.from_text(name)
    return str(name)


class Question(tuple):
    """``(name, qtype, qclass)`` triple."""

    __slots__ = ()

    def __new__(cls, name: DomainName, qtype: int = TYPE_A, qclass: int = CLASS_IN):
        return super().__new__(cls, (name, qtype, qclass))

    name = property(lambda self: self[0])
    qtype = property(lambda self: self[1])
    qclass = property(lambda self: self[2])


Rdata = Union[ipaddress.IPv4Address, DomainName, bytes]


@dataclass
class ResourceRecord:
    name: DomainName
    rtype: int
    rclass: int
    ttl: int
    rdata: Rdata

    def __post_init__(self):
        if self.rtype == TYPE_A and isinstance(self.rdata, (str, int)):
            self.rdata = ipaddress.IPv4Address(self.rdata)


@dataclass
class DnsMessage:
    id: int
    is_response: bool = False
    opcode: int = 0
    rcode: int = 0
    questions: list[Question] = field(default_factory=list)
    answers: list[ResourceRecord] = field(default_factory=list)
    # authority/additional rdata is never interpreted
    authority: list[ResourceRecord] = field(default_factory=list)
    additional: list[ResourceRecord] = field(default_factory=list)
    aa: bool = False
    tc: bool = False
    rd: bool = True
    ra: bool = False
    z: int = 0

    @property
    def authority_count(self) -> int:
        return len(self.authority)

    @property
    def additional_count(self) -> int:
        return len(self.additional)

    @property
    def flags(self) -> int:
        return (
            (int(self.is_response) << 15)
            | ((self.opcode & 0xF) << 11)
            | (int(self.aa) << 10)
            | (int(self.tc) << 9)
            | (int(self.rd) << 8)
            | (int(self.ra) << 7)
            | ((self.z & 0x7) << 4)
            | (self.rcode & 0xF)
        )


# -- encoding ---------------------------------------------------------------


def encode_name(name: DomainName) -> bytes:
    out = bytearray()
    for label in name.labels:
        if len(label) > MAX_LABEL:
            raise LabelTooLong(f"label of {len(label)} bytes exceeds {MAX_LABEL}")
        out.append(len(label))
        out += label
    out.append(0)
    if len(out) > MAX_NAME:
        raise NameTooLong(f"encoded name of {len(out)} bytes exceeds {MAX_NAME}")
    return bytes(out)


def _encode_rdata(rr: ResourceRecord) -> bytes:
    rdata = rr.rdata
    if isinstance(rdata, ipaddress.IPv4Address):
        return rdata.packed
    if isinstance(rdata, DomainName):
        return encode_name(rdata)
    return bytes(rdata)


def _encode_rr(rr: ResourceRecord) -> bytes:
    rdata = _encode_rdata(rr)
    return encode_name(rr.name) + RRFIXED.pack(rr.rtype, rr.rclass, rr.ttl, len(rdata)) + rdata


def encode_message(msg: DnsMessage) -> bytes:
    out = [
        HEADER.pack(
            msg.id,
            msg.flags,
            len(msg.questions),
            len(msg.answers),
            len(msg.authority),
            len(msg.additional),
        )
    ]
    for q in msg.questions:
        out.append(encode_name(q.name) + QFIXED.pack(q.qtype, q.qclass))
    for section in (msg.answers, msg.authority, msg.additional):
        out.extend(_encode_rr(rr) for rr in section)
    return b"".join(out)


# -- parsing ----------------------------------------------------------------


def _read_name(wire: bytes, offset: int) -> tuple[DomainName, int]:
    """Decode the name at ``offset``; return it and the offset just past it.

    Pointers may target any offset inside the message body (not the
    header).  A chain longer than the message itself in hops is a loop.
    """
    size = len(wire)
    labels = []
    pos = offset
    resume = None
    hops = 0
    encoded = 1
    while True:
        if pos >= size:
            raise Truncated(f"name runs past end of message at offset {pos}")
        length = wire[pos]
        kind = length & 0xC0
        if kind == 0xC0:
            if pos + 1 >= size:
                raise Truncated("pointer cut short")
            target = ((length & 0x3F) << 8) | wire[pos + 1]
            if resume is None:
                resume = pos + 2
            if target < HEADER.size or target >= size:
                raise BadPointer(f"pointer at {pos} targets offset {target}")
            hops += 1
            if hops > size:
                raise PointerLoop(f"pointer chain from offset {offset} does not terminate")
            pos = target
            continue
        if kind:
            raise BadPointer(f"reserved label type 0x{kind:02x} at offset {pos}")
        if length == 0:
            pos += 1
            break
        end = pos + 1 + length
        if end > size:
            raise Truncated(f"label at offset {pos} runs past end of message")
        encoded += length + 1
        if encoded > MAX_NAME:
            raise NameTooLong("decoded name exceeds 255 bytes")
        labels.append(wire[pos + 1 : end])
        pos = end
    return DomainName(tuple(labels)), (resume if resume is not None else pos)


def _read_rr(wire: bytes, offset: int, interpret: bool) -> tuple[ResourceRecord, int]:
    name, pos = _read_name(wire, offset)
    if pos + RRFIXED.size > len(wire):
        raise Truncated("resource record header cut short")
    rtype, rclass, ttl, rdlength = RRFIXED.unpack_from(wire, pos)
    pos += RRFIXED.size
    end = pos + rdlength
    if end > len(wire):
        raise Truncated("rdata runs past end of message")
    rdata: Rdata = wire[pos:end]
    if interpret and rtype == TYPE_A:
        if rdlength != 4:
            raise BadRdata(f"A record with {rdlength} rdata bytes")
        rdata = ipaddress.IPv4Address(rdata)
    elif interpret and rtype == TYPE_CNAME:
        rdata, name_end = _read_name(wire, pos)
        if name_end != end:
            raise BadRdata("CNAME target does not fill rdata")
    return ResourceRecord(name, rtype, rclass, ttl, rdata), end


def parse_message(wire: bytes) -> DnsMessage:
    wire = bytes(wire)
    if len(wire) < HEADER.size:
        raise Truncated(f"{len(wire)} bytes is shorter than the 12-byte header")
    ident, flags, qdcount, ancount, nscount, arcount = HEADER.unpack_from(wire)
    msg = DnsMessage(
        id=ident,
        is_response=bool(flags >> 15),
        opcode=(flags >> 11) & 0xF,
        aa=bool(flags & 0x0400),
        tc=bool(flags & 0x0200),
        rd=bool(flags & 0x0100),
        ra=bool(flags & 0x0080),
        z=(flags >> 4) & 0x7,
        rcode=flags & 0xF,
    )
    pos = HEADER.size
    for _ in range(qdcount):
        name, pos = _read_name(wire, pos)
        if pos + QFIXED.size > len(wire):
            raise Truncated("question cut short")
        qtype, qclass = QFIXED.unpack_from(wire, pos)
        pos += QFIXED.size
        msg.questions.append(Question(name, qtype, qclass))
    for count, section, interpret in (
        (ancount, msg.answers, True),
        (nscount, msg.authority, False),
        (arcount, msg.additional, False),
    ):
        for _ in range(count):
            rr, pos = _read_rr(wire, pos, interpret)
            section.append(rr)
    return msg


# -- inspection -------------------------------------------------------------


def extract_checkable_domains(msg: DnsMessage) -> list[DomainName]:
    """Question names, answer owners and CNAME targets, deduplicated in order."""
    seen: dict[DomainName, None] = {}

    def add(name: DomainName) -> None:
        if not name.is_root:
            seen.setdefault(name, None)

    for q in msg.questions:
        add(q.name)
    for rr in msg.answers:
        add(rr.name)
        if rr.rtype == TYPE_CNAME and isinstance(rr.rdata, DomainName):
            add(rr.rdata)
    return list(seen)


def extract_a_records(msg: DnsMessage) -> list[tuple[DomainName, ipaddress.IPv4Address, int]]:
    if not msg.is_response:
        raise NotAResponse("A records are only extracted from responses")
    return [
        (rr.name, rr.rdata, rr.ttl)
        for rr in msg.answers
        if rr.rtype == TYPE_A and isinstance(rr.rdata, ipaddress.IPv4Address)
    ]


# -- builders used by the simulated resolver and the tests -------------------


def make_query(ident: int, name: Union[str, DomainName], qtype: int = TYPE_A) -> DnsMessage:
    if not isinstance(name, DomainName):
        name = DomainName.from_text(name)
    return DnsMessage(id=ident, questions=[Question(name, qtype, CLASS_IN)])


def make_response(
    query: DnsMessage,
    addresses: Iterable = (),
    rcode: int = RCODE_NOERROR,
    ttl: int = 300,
) -> DnsMessage:
    """Answer the first question with one A record per address."""
    name = query.questions[0].name if query.questions else DomainName()
    answers = [
        ResourceRecord(name, TYPE_A, CLASS_IN, ttl, ipaddress.IPv4Address(addr))
        for addr in addresses
    ]
    return DnsMessage(
        id=query.id,
        is_response=True,
        opcode=query.opcode,
        rcode=rcode,
        questions=list(query.questions),
        answers=answers,
        rd=query.rd,
        ra=True,
    )
