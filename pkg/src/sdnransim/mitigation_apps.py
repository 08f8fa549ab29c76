"""The two DNS-blacklist mitigation applications.

SDN1 sits inline on DNS responses: a response naming a blacklisted domain
is discarded and the querying host is quarantined.  SDN2 only sees copies
of DNS traffic, so delivery is never delayed; a hostile response gets the
client blocked from every address the response resolved to.
"""

from __future__ import annotations

import ipaddress
import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from . import openflow_codec as of
from .blacklist_db import BlacklistDb
from .controller_core import (
    DNS_PORT,
    PRIO_BLOCK,
    PRIO_DNS_PAIR,
    Emit,
    dns_match,
    startup_flows,
)
from .dns_codec import DnsError, DnsMessage, extract_a_records, extract_checkable_domains, parse_message
from .packet import ETH_IPV4, PROTO_UDP, Frame

log = logging.getLogger(__name__)


class Policy(str, Enum):
    NONE = "none"
    SDN1 = "sdn1"
    SDN2 = "sdn2"


class Action(Enum):
    FORWARD = "forward"
    DISCARD = "discard"


@dataclass(frozen=True)
class HostQuarantine:
    victim_ip: ipaddress.IPv4Address

    def flow_mods(self) -> list[of.FlowMod]:
        return [
            of.FlowMod(of.OfMatch(dl_type=ETH_IPV4, nw_src=self.victim_ip), priority=PRIO_BLOCK),
            of.FlowMod(of.OfMatch(dl_type=ETH_IPV4, nw_dst=self.victim_ip), priority=PRIO_BLOCK),
        ]


@dataclass(frozen=True)
class PairBlock:
    victim_ip: ipaddress.IPv4Address
    cc_ip: ipaddress.IPv4Address

    def flow_mods(self) -> list[of.FlowMod]:
        return [
            of.FlowMod(of.OfMatch(dl_type=ETH_IPV4, nw_src=self.victim_ip, nw_dst=self.cc_ip), priority=PRIO_BLOCK),
            of.FlowMod(of.OfMatch(dl_type=ETH_IPV4, nw_src=self.cc_ip, nw_dst=self.victim_ip), priority=PRIO_BLOCK),
        ]


@dataclass
class Alert:
    time_s: float
    policy: str
    victim_ip: str
    domain: str
    resolved_ips: list[str]
    action: str
    flows_installed: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "time_s": round(self.time_s, 6),
                "policy": self.policy,
                "victim_ip": self.victim_ip,
                "domain": self.domain,
                "resolved_ips": self.resolved_ips,
                "action": self.action,
                "flows_installed": self.flows_installed,
            },
            separators=(",", ":"),
        )


@dataclass
class Verdict:
    action: Action = Action.FORWARD
    block_rules: list = field(default_factory=list)
    alerts: list[Alert] = field(default_factory=list)
    is_response: bool = False
    parse_failed: bool = False


def _dns_of(frame: Frame) -> Optional[DnsMessage]:
    return parse_message(frame.payload)


def _first_blacklisted(msg: DnsMessage, db: BlacklistDb) -> Optional[str]:
    for name in extract_checkable_domains(msg):
        if db.contains(name):
            return str(name)
    return None


def _frame_of(pkt) -> Frame:
    return pkt if isinstance(pkt, Frame) else Frame.from_bytes(pkt.frame, pkt.in_port)


def sdn1_on_dns(pkt, db: BlacklistDb, now: float = 0.0) -> Verdict:
    """Inline check of one DNS message (a PacketIn or an already parsed Frame)."""
    frame = _frame_of(pkt)
    try:
        msg = _dns_of(frame)
    except DnsError:
        return Verdict(Action.FORWARD, parse_failed=True)
    if not msg.is_response:
        return Verdict(Action.FORWARD)
    domain = _first_blacklisted(msg, db)
    if domain is None:
        return Verdict(Action.FORWARD, is_response=True)
    victim = frame.ip.dst_ip
    rule = HostQuarantine(victim)
    alert = Alert(
        now,
        Policy.SDN1.value,
        str(victim),
        domain,
        [str(ip) for _, ip, _ in extract_a_records(msg)],
        "host_blocked",
        2,
    )
    return Verdict(Action.DISCARD, [rule], [alert], is_response=True)


def sdn2_on_dns_copy(pkt, db: BlacklistDb, now: float = 0.0) -> Verdict:
    """Off-path check of a DNS copy.  Never discards: the original is already on its way."""
    frame = _frame_of(pkt)
    try:
        msg = _dns_of(frame)
    except DnsError:
        return Verdict(Action.FORWARD, parse_failed=True)
    if not msg.is_response:
        return Verdict(Action.FORWARD)
    domain = _first_blacklisted(msg, db)
    if domain is None:
        return Verdict(Action.FORWARD, is_response=True)
    victim = frame.ip.dst_ip
    ips = []
    for _, ip, _ in extract_a_records(msg):
        if ip not in ips:
            ips.append(ip)
    rules = [PairBlock(victim, ip) for ip in ips]
    alert = Alert(now, Policy.SDN2.value, str(victim), domain, [str(ip) for ip in ips], "pair_blocked", 2 * len(rules))
    return Verdict(Action.FORWARD, rules, [alert], is_response=True)


def _is_dns(frame: Frame) -> bool:
    ip = frame.ip
    return ip is not None and ip.proto == PROTO_UDP and DNS_PORT in (ip.src_port, ip.dst_port)


class DnsGuard:
    """Controller app running SDN1 or SDN2 against a blacklist.

    ``db_query_latency_s`` is what a benign inline check costs before the
    response is released (SDN1 only).  ``reaction_s`` is the detect-to-
    FlowMod time for a hostile response, lookup included.
    """

    def __init__(self, policy, db: BlacklistDb, db_query_latency_s: float = 0.0005, reaction_s: float = 0.1):
        self.policy = Policy(getattr(policy, "value", policy))
        if self.policy is Policy.NONE:
            raise ValueError("DnsGuard needs sdn1 or sdn2")
        self.name = self.policy.value
        self.db = db
        self.db_query_latency_s = db_query_latency_s
        self.reaction_s = reaction_s
        self.alerts: list[Alert] = []
        self.parse_failures = 0
        self._alerted: set[tuple[str, str]] = set()
        self._rules: set = set()
        self._pair_taps: set[tuple[bytes, bytes, str]] = set()

    def on_switch_connect(self, ctl):
        return [Emit(m) for m in startup_flows(self.policy)]

    def _is_copy(self, frame: Frame) -> bool:
        if frame.ip.dst_port == DNS_PORT:
            return True
        return self.policy is Policy.SDN2

    def _pair_tap(self, frame: Frame, ctl) -> list[Emit]:
        side = "query" if frame.ip.dst_port == DNS_PORT else "response"
        port = ctl.mac_table.port_of(frame.dst_mac)
        key = (frame.src_mac, frame.dst_mac, side)
        if port is None or port == frame.ingress_port or key in self._pair_taps:
            return []
        self._pair_taps.add(key)
        base = dns_match(side)
        match = of.OfMatch(
            dl_src=frame.src_mac,
            dl_dst=frame.dst_mac,
            dl_type=base.dl_type,
            nw_proto=base.nw_proto,
            tp_src=base.tp_src,
            tp_dst=base.tp_dst,
        )
        return [Emit(of.FlowMod(match, [of.Output(port), of.Output(of.OFPP_CONTROLLER, 0xFFFF)], priority=PRIO_DNS_PAIR))]

    def _react(self, verdict: Verdict, now: float) -> tuple[list[Emit], list[Alert]]:
        fresh = [r for r in verdict.block_rules if r not in self._rules]
        self._rules.update(fresh)
        mods = [m for r in fresh for m in r.flow_mods()]
        emits = [Emit(m, self.reaction_s) for m in mods]
        new_alerts = []
        for alert in verdict.alerts:
            key = (alert.victim_ip, alert.domain)
            if key in self._alerted:
                continue
            self._alerted.add(key)
            alert.time_s = now + self.reaction_s
            alert.flows_installed = len(mods)
            new_alerts.append(alert)
            log.info("alert %s", alert.to_json())
        self.alerts.extend(new_alerts)
        return emits, new_alerts

    def on_packet_in(self, pkt, frame, ctl):
        if not _is_dns(frame):
            return None
        now = ctl.now
        copy = self._is_copy(frame)
        emits = self._pair_tap(frame, ctl) if copy else []
        if self.policy is Policy.SDN1:
            verdict = sdn1_on_dns(frame, self.db, now)
        else:
            verdict = sdn2_on_dns_copy(frame, self.db, now)
        if verdict.parse_failed:
            self.parse_failures += 1
            log.warning("unparseable DNS payload on port %d forwarded", pkt.in_port)
        if verdict.action is Action.DISCARD:
            ctl.note("discard", pkt.frame)
        elif not copy:
            port = ctl.mac_table.port_of(frame.dst_mac)
            out = of.Output(port if port is not None and port != pkt.in_port else of.OFPP_FLOOD)
            delay = 0.0 if verdict.parse_failed else self.db_query_latency_s
            emits.append(Emit(of.PacketOut([out], pkt.frame, in_port=pkt.in_port), delay))
        reaction, alerts = self._react(verdict, now)
        emits.extend(reaction)
        for alert in alerts:
            ctl.note("alert", alert)
        return emits


def reaction_latency(policy, db: BlacklistDb, load: int = 0, trials: int = 20, domain: Optional[str] = None):
    """Mean wall-clock seconds from a hostile response PacketIn to encoded block FlowMods.

    Each trial runs a fresh app (so dedup does not swallow the reaction)
    against the same ``db``, after ``load`` benign responses have been
    pushed through it.  Returns ``None`` when ``domain`` is not in the db,
    because no reaction happens.
    """
    from .controller_core import Controller
    from .dns_codec import encode_message, make_query, make_response
    from .packet import udp_frame

    domain = domain or next(iter(db), None)
    if domain is None or not db.contains(domain):
        return None
    client_mac, server_mac = bytes.fromhex("020000000001"), bytes.fromhex("020000000099")

    def packet_in(name, ident):
        resp = make_response(make_query(ident, name), ["192.0.2.10"])
        f = udp_frame(server_mac, client_mac, "10.0.0.53", "10.0.0.1", 53, 40000, encode_message(resp), ident)
        return of.encode(of.PacketIn(2, f.to_bytes(), of.OFPR_ACTION), ident)

    hostile = packet_in(domain, 1)
    benign = [packet_in(f"benign{i}.example", i + 2) for i in range(load)]
    total = 0.0
    for _ in range(trials):
        app = DnsGuard(policy, db, 0.0, 0.0)
        ctl = Controller([app])
        ctl.mac_table.learn(client_mac, 1)
        for wire in benign:
            ctl.handle(wire, 0.0)
        start = time.perf_counter()
        out = ctl.handle(hostile, 0.0)
        elapsed = time.perf_counter() - start
        if not any(isinstance(m, of.FlowMod) and m.priority == PRIO_BLOCK for _, m, _ in out):
            raise AssertionError("hostile response produced no block flow")
        total += elapsed
    return total / trials
