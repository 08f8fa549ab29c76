"""Controller event loop, application chain and the L2 learning switch.

The controller speaks OpenFlow bytes on both sides: ``handle`` takes one
encoded message from the switch and returns the encoded messages to send
back, each with the controller-side processing delay that precedes it.

Flow priorities are layered so mitigation always overrides forwarding:

==========  ========================================
priority    flows
==========  ========================================
100         learned L2 forwarding (idle 60 s)
200         DNS tap flows installed at switch connect
250         per-pair DNS tap refinements
300         block / quarantine flows (permanent)
==========  ========================================
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Protocol

from . import openflow_codec as of
from .packet import ETH_IPV4, PROTO_UDP, Frame, FrameError

log = logging.getLogger(__name__)

PRIO_LEARNING = 100
PRIO_DNS_TAP = 200
PRIO_DNS_PAIR = 250
PRIO_BLOCK = 300
LEARNING_IDLE_S = 60
DNS_PORT = 53


class DuplicateApp(ValueError):
    pass


@dataclass(frozen=True)
class Emit:
    """A message leaving the controller after ``delay_s`` of processing."""

    msg: of.OfMessage
    delay_s: float = 0.0


class MacTable(dict):
    """MAC -> (port, last_seen).  No aging; the topology is static."""

    def learn(self, mac: bytes, port: int, now: float = 0.0) -> None:
        if mac[0] & 1:
            return  # never learn group addresses
        self[mac] = (port, now)

    def port_of(self, mac: bytes) -> Optional[int]:
        hit = self.get(mac)
        return hit[0] if hit else None


def on_packet_in_learning(pkt: of.PacketIn, state: MacTable, now: float = 0.0) -> list[of.OfMessage]:
    frame = Frame.from_bytes(pkt.frame, pkt.in_port)
    state.learn(frame.src_mac, pkt.in_port, now)
    port = None if frame.dst_mac[0] & 1 else state.port_of(frame.dst_mac)
    if port is None:
        return [of.PacketOut([of.Output(of.OFPP_FLOOD)], pkt.frame, in_port=pkt.in_port)]
    if port == pkt.in_port:
        return []
    return [
        of.FlowMod(
            of.OfMatch(dl_src=frame.src_mac, dl_dst=frame.dst_mac),
            [of.Output(port)],
            priority=PRIO_LEARNING,
            idle_timeout=LEARNING_IDLE_S,
        ),
        of.PacketOut([of.Output(port)], pkt.frame, in_port=pkt.in_port),
    ]


def dns_match(side: str) -> of.OfMatch:
    """UDP/53 match: ``query`` is tp_dst=53, ``response`` is tp_src=53."""
    if side == "query":
        return of.OfMatch(dl_type=ETH_IPV4, nw_proto=PROTO_UDP, tp_dst=DNS_PORT)
    return of.OfMatch(dl_type=ETH_IPV4, nw_proto=PROTO_UDP, tp_src=DNS_PORT)


def startup_flows(policy) -> list[of.FlowMod]:
    """DNS tap flows a mitigation policy installs when the switch connects.

    Queries are always forwarded in the data plane with a copy to the
    controller.  Under SDN1 responses go to the controller only, so a
    hostile one can be held back; under SDN2 they are forwarded and copied.
    """
    name = getattr(policy, "value", policy)
    if name in (None, "none"):
        return []
    copy = [of.Output(of.OFPP_FLOOD), of.Output(of.OFPP_CONTROLLER, 0xFFFF)]
    divert = [of.Output(of.OFPP_CONTROLLER, 0xFFFF)]
    if name == "sdn1":
        response_actions = divert
    elif name == "sdn2":
        response_actions = copy
    else:
        raise ValueError(f"unknown policy {policy!r}")
    return [
        of.FlowMod(dns_match("query"), copy, priority=PRIO_DNS_TAP),
        of.FlowMod(dns_match("response"), response_actions, priority=PRIO_DNS_TAP),
    ]


class ControllerApp(Protocol):
    name: str

    def on_switch_connect(self, ctl: "Controller") -> list[Emit]:
        ...

    def on_packet_in(self, pkt: of.PacketIn, frame: Frame, ctl: "Controller") -> Optional[list[Emit]]:
        """Return ``None`` to pass the event down the chain."""
        ...


class LearningSwitch:
    name = "learning"

    def on_switch_connect(self, ctl):
        return []

    def on_packet_in(self, pkt, frame, ctl):
        return [Emit(m) for m in on_packet_in_learning(pkt, ctl.mac_table, ctl.now)]


@dataclass
class ControllerStats:
    packet_ins: int = 0
    unhandled: int = 0
    bad_frames: int = 0
    sent: int = 0


class Controller:
    """Single-threaded controller: one event at a time, apps in chain order."""

    def __init__(self, apps=()):
        self.apps: list = []
        self.mac_table = MacTable()
        self.stats = ControllerStats()
        self.now = 0.0
        self.connected = False
        # (kind, payload) notes for whoever drives the controller
        self.events: list[tuple[str, object]] = []
        self._xid = itertools.count(1)
        for app in apps:
            self.connect_app(app)

    def connect_app(self, app) -> None:
        if any(a is app or a.name == app.name for a in self.apps):
            raise DuplicateApp(app.name)
        self.apps.append(app)

    def note(self, kind: str, payload) -> None:
        self.events.append((kind, payload))

    def _encode(self, emits: list[Emit]) -> list[tuple[float, of.OfMessage, bytes]]:
        out = []
        for e in emits:
            out.append((e.delay_s, e.msg, of.encode(e.msg, next(self._xid))))
        self.stats.sent += len(out)
        return out

    def handle(self, wire: bytes, now: float) -> list[tuple[float, of.OfMessage, bytes]]:
        self.now = now
        msg, xid = of.decode(wire)
        if isinstance(msg, of.Hello):
            emits = [Emit(of.Hello())]
            self.connected = True
            for app in self.apps:
                emits.extend(app.on_switch_connect(self))
            return self._encode(emits)
        if isinstance(msg, of.EchoRequest):
            return [(0.0, of.EchoReply(msg.data), of.encode(of.EchoReply(msg.data), xid))]
        if isinstance(msg, of.PacketIn):
            return self._encode(self.packet_in(msg))
        return []

    def packet_in(self, pkt: of.PacketIn) -> list[Emit]:
        self.stats.packet_ins += 1
        try:
            frame = Frame.from_bytes(pkt.frame, pkt.in_port)
        except FrameError:
            self.stats.bad_frames += 1
            self.note("unhandled", pkt.frame)
            return []
        self.mac_table.learn(frame.src_mac, pkt.in_port, self.now)
        for app in self.apps:
            verdict = app.on_packet_in(pkt, frame, self)
            if verdict is not None:
                return verdict
        self.stats.unhandled += 1
        self.note("unhandled", pkt.frame)
        log.warning("packet-in on port %d not handled by any app", pkt.in_port)
        return []
