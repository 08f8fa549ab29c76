import ipaddress
import random
import struct

import pytest
from scapy.contrib import openflow as scapy_of

from sdnransim.openflow_codec import (
    OFPFC_ADD,
    OFPFC_DELETE,
    OFPP_CONTROLLER,
    OFPP_FLOOD,
    OFPR_ACTION,
    EchoReply,
    EchoRequest,
    FlowMod,
    Hello,
    LengthMismatch,
    OfMatch,
    Output,
    PacketIn,
    PacketOut,
    Truncated,
    UnknownType,
    UnsupportedAction,
    VersionUnsupported,
    decode,
    decode_stream,
    encode,
)

MAC_A = bytes.fromhex("020000000001")
MAC_B = bytes.fromhex("020000000002")


def test_hello_bytes():
    assert encode(Hello(), 1) == bytes.fromhex("0100000800000001")


def test_flow_mod_with_one_output_is_80_bytes():
    wire = encode(FlowMod(OfMatch(dl_type=0x0800, nw_src="10.0.0.5"), [Output(2)], priority=300), 9)
    assert struct.unpack_from("!H", wire, 2)[0] == 80 == len(wire)


def test_packet_in_with_60_byte_frame():
    wire = encode(PacketIn(1, bytes(60)), 3)
    assert struct.unpack_from("!H", wire, 2)[0] == 78 == len(wire)


def test_version_4_rejected():
    with pytest.raises(VersionUnsupported):
        decode(bytes.fromhex("0400000800000001"))


def test_short_buffers():
    with pytest.raises(Truncated):
        decode(bytes(7))
    with pytest.raises(Truncated):
        decode(encode(PacketIn(1, bytes(10)))[:-1])


def test_unknown_type():
    with pytest.raises(UnknownType):
        decode(bytes.fromhex("0105000800000001"))  # FEATURES_REQUEST is outside the subset


def test_bad_flow_mod_length():
    wire = bytearray(encode(FlowMod(OfMatch(), [Output(1)])))
    wire += b"\x00\x00\x00\x00"
    struct.pack_into("!H", wire, 2, len(wire))
    with pytest.raises(LengthMismatch):
        decode(bytes(wire))


def test_non_output_action_rejected():
    with pytest.raises(UnsupportedAction):
        encode(FlowMod(OfMatch(), ["drop"]))
    wire = bytearray(encode(FlowMod(OfMatch(), [Output(1)])))
    struct.pack_into("!H", wire, 72, 5)  # rewrite action type
    with pytest.raises(UnsupportedAction):
        decode(bytes(wire))


def test_decoder_ignores_trailing_bytes():
    wire = encode(EchoRequest(b"ping"), 4)
    assert decode(wire + b"garbage") == (EchoRequest(b"ping"), 4)


def test_stream_framing():
    msgs = [(Hello(), 1), (PacketIn(2, b"abc"), 2), (FlowMod(OfMatch(tp_dst=53)), 3)]
    stream = b"".join(encode(m, x) for m, x in msgs)
    out, rest = decode_stream(stream + stream[:5])
    assert out == msgs
    assert rest == stream[:5]


def test_flow_mod_against_scapy():
    match = OfMatch(dl_src=MAC_A, dl_dst=MAC_B, dl_type=0x0800, nw_proto=17, nw_dst="192.0.2.10", tp_src=53)
    wire = encode(
        FlowMod(match, [Output(3), Output(OFPP_CONTROLLER, 0xFFFF)], priority=250, idle_timeout=60, cookie=7),
        42,
    )
    ref = scapy_of.OFPTFlowMod(wire)
    assert ref.xid == 42 and ref.len == len(wire)
    assert ref.priority == 250 and ref.idle_timeout == 60 and ref.cookie == 7
    assert ref.match.dl_src == "02:00:00:00:00:01"
    assert ref.match.nw_dst == "192.0.2.10"
    assert ref.match.tp_src == 53
    expected_actions = bytes(scapy_of.OFPATOutput(port=3, max_len=0)) + bytes(
        scapy_of.OFPATOutput(port=OFPP_CONTROLLER, max_len=0xFFFF)
    )
    assert wire[72:] == expected_actions
    # and scapy's own encoding decodes back through ours
    theirs = bytes(
        scapy_of.OFPTFlowMod(
            xid=5, priority=300, cmd=OFPFC_DELETE, actions=[scapy_of.OFPATOutput(port=2)]
        )
    )
    msg, xid = decode(theirs)
    assert xid == 5 and msg.priority == 300 and msg.command == OFPFC_DELETE
    assert msg.match == OfMatch()
    assert msg.actions == (Output(2, 0xFFFF),)


def test_packet_in_and_out_against_scapy():
    frame = bytes(range(64))
    ref = scapy_of.OFPTPacketIn(encode(PacketIn(4, frame, OFPR_ACTION), 77))
    assert ref.in_port == 4 and ref.reason == OFPR_ACTION and ref.total_len == 64
    assert bytes(ref.data) == frame
    ref = scapy_of.OFPTPacketOut(encode(PacketOut([Output(OFPP_FLOOD)], frame, in_port=1), 78))
    assert ref.in_port == 1 and ref.actions[0].port == OFPP_FLOOD
    assert bytes(ref.data) == frame


def random_match(rng):
    def maybe(make):
        return make() if rng.random() < 0.5 else None

    return OfMatch(
        in_port=maybe(lambda: rng.randrange(65536)),
        dl_src=maybe(lambda: rng.randbytes(6)),
        dl_dst=maybe(lambda: rng.randbytes(6)),
        dl_type=maybe(lambda: rng.randrange(65536)),
        nw_proto=maybe(lambda: rng.randrange(256)),
        nw_src=maybe(lambda: ipaddress.IPv4Address(rng.randrange(2**32))),
        nw_dst=maybe(lambda: ipaddress.IPv4Address(rng.randrange(2**32))),
        tp_src=maybe(lambda: rng.randrange(65536)),
        tp_dst=maybe(lambda: rng.randrange(65536)),
    )


def random_actions(rng):
    return [Output(rng.randrange(65536), rng.randrange(65536)) for _ in range(rng.randint(0, 4))]


def random_message(rng):
    kind = rng.randrange(6)
    if kind == 0:
        return FlowMod(
            random_match(rng),
            random_actions(rng),
            command=rng.choice([OFPFC_ADD, OFPFC_DELETE]),
            priority=rng.randrange(65536),
            idle_timeout=rng.randrange(65536),
            hard_timeout=rng.randrange(65536),
            cookie=rng.randrange(2**64),
            buffer_id=rng.randrange(2**32),
            out_port=rng.randrange(65536),
            flags=rng.randrange(65536),
        )
    if kind == 1:
        return PacketIn(
            rng.randrange(65536),
            rng.randbytes(rng.randint(0, 1500)),
            rng.randrange(256),
            rng.randrange(2**32),
            rng.randrange(65536),
        )
    if kind == 2:
        return PacketOut(random_actions(rng), rng.randbytes(rng.randint(0, 1500)), rng.randrange(65536), rng.randrange(2**32))
    return rng.choice([Hello(), EchoRequest(rng.randbytes(rng.randint(0, 20))), EchoReply(rng.randbytes(3))])


def test_round_trip_10000_random_messages():
    rng = random.Random(1)
    for _ in range(10_000):
        msg = random_message(rng)
        xid = rng.randrange(2**32)
        wire = encode(msg, xid)
        assert struct.unpack_from("!H", wire, 2)[0] == len(wire)
        assert decode(wire) == (msg, xid)


def test_wildcarded_fields_store_zero():
    wire = encode(FlowMod(OfMatch(tp_dst=53)))
    match_bytes = wire[8:48]
    # everything except wildcards and tp_dst is zero
    assert match_bytes[4:38] == bytes(34)
    assert match_bytes[38:40] == b"\x00\x35"
