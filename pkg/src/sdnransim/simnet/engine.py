"""Discrete-event engine for the single-switch star testbed.

Time is integer microseconds.  Every node hangs off one switch port:
the hosts, a DNS resolver, and a gateway that stands in for the whole
Internet (web servers, the external-IP service, proxies and C&C servers
all live behind it).  The switch and controller talk real OpenFlow 1.0
bytes over a channel with its own latency.
"""

from __future__ import annotations

import dataclasses
import heapq
import ipaddress
import logging
import random
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

from .. import openflow_codec as of
from ..blacklist_db import BlacklistDb, synth_domains
from ..controller_core import Controller, LearningSwitch
from ..dns_codec import (
    RCODE_NOERROR,
    RCODE_NXDOMAIN,
    DnsError,
    encode_message,
    extract_a_records,
    make_query,
    make_response,
    parse_message,
)
from ..mitigation_apps import DnsGuard
from ..packet import (
    ARP_REPLY,
    ARP_REQUEST,
    BROADCAST,
    PROTO_TCP,
    PROTO_UDP,
    Frame,
    arp_announce,
    arp_frame,
    parse_arp,
    tcp_frame,
    udp_frame,
)
from ..switch_model import Switch, TableFull
from .config import HostModel, SimConfig
from .metrics import MetricsRecord, Trace, metrics_from_trace
from .workload import (
    EXT_IP_DOMAIN,
    Exchange,
    Mark,
    Resolve,
    Sleep,
    benign_behavior,
    cryptowall_behavior,
    dga_domains,
    dga_registered_index,
    gen_proxy_list,
    locky_behavior,
    locky_cc_ip,
    locky_hardcoded_ips,
)

log = logging.getLogger(__name__)

RESOLVER_IP = ipaddress.IPv4Address("10.0.255.53")
GATEWAY_IP = ipaddress.IPv4Address("10.0.255.1")
EXT_IP_ADDR = ipaddress.IPv4Address("203.0.113.200")
WARMUP_US = 100_000
HTTP_PORT = 80

# event kinds, ordered only by (time, sequence)
SW_RX, NODE_RX, CTL_RX, SW_CTL_RX, WAKE, TIMEOUT = range(6)


def _mac(group: int, index: int) -> bytes:
    return bytes([0x02, 0, 0, group, index >> 8, index & 0xFF])


def _web_ip(i: int) -> ipaddress.IPv4Address:
    return ipaddress.IPv4Address(int(ipaddress.IPv4Address("203.0.113.0")) + 1 + i % 190)


@lru_cache(maxsize=8)
def filler_db(size: int) -> BlacklistDb:
    """Background blacklist content unrelated to the workload, fixed seed."""
    return BlacklistDb(synth_domains(size, seed=0))


@dataclass
class Node:
    name: str
    mac: bytes
    ip: ipaddress.IPv4Address
    port: int
    ip_id: int = 0
    ephemeral: int = 49152

    def next_ip_id(self) -> int:
        self.ip_id = (self.ip_id + 1) & 0xFFFF
        return self.ip_id

    def next_port(self) -> int:
        self.ephemeral = 49152 + (self.ephemeral - 49152 + 1) % 16384
        return self.ephemeral


@dataclass
class HostState:
    node: Node
    model: object
    index: int
    script: object = None
    token: int = 0
    pending: Optional[tuple] = None  # ("dns", qid, sport) or ("http", ip, sport)
    qid: int = 0
    queries: int = 0
    done: bool = False


@dataclass
class Workload:
    """Per-run materialized workload: zone, services and hostile names."""

    zone: dict = field(default_factory=dict)  # domain -> [ip]
    services: dict = field(default_factory=dict)  # ip -> kind ("web", "proxy", "cc")
    hostile: list = field(default_factory=list)


class Sim:
    def __init__(self, config: SimConfig):
        self.cfg = config.validate()
        self.params = config.workload
        self.link_us = round(config.link_latency_ms * 1000)
        self.chan_us = round(config.controller_channel_latency_ms * 1000)
        self.dns_proc_us = round(config.dns_server_processing_ms * 1000)
        self.timeout_us = round(self.params.proxy_timeout_s * 1e6)
        self.end_us = round(config.duration_s * 1e6)
        self.trace = Trace()
        self._queue: list = []
        self._seq = 0
        self.now = 0
        self._uid = 0
        self.outcomes: dict[int, str] = {}
        self._xid = 0
        self._build()

    # -- construction -------------------------------------------------------

    def _build(self) -> None:
        cfg = self.cfg
        self.hosts: list[HostState] = []
        self.nodes: dict[int, Node] = {}
        port = 1
        for i, model in enumerate(cfg.hosts):
            node = Node(
                f"h{i}",
                model.mac or _mac(1, i),
                ipaddress.IPv4Address(model.ip) if model.ip else ipaddress.IPv4Address(int(ipaddress.IPv4Address("10.0.0.1")) + i),
                port,
            )
            self.nodes[port] = node
            self.hosts.append(HostState(node, model, i))
            port += 1
        self.resolver = Node("resolver", _mac(2, 53), RESOLVER_IP, port)
        self.nodes[port] = self.resolver
        self.gateway = Node("gateway", _mac(2, 1), GATEWAY_IP, port + 1)
        self.nodes[port + 1] = self.gateway
        self.by_mac = {n.mac: n for n in self.nodes.values()}
        self.host_by_port = {h.node.port: h for h in self.hosts}

        self.work = self._materialize()
        db = filler_db(cfg.db_size).copy() if cfg.db_size else BlacklistDb()
        if cfg.feed:
            db.ingest_file(cfg.feed)
        pick = random.Random(f"{cfg.seed}:blacklist")
        listed = [d for d in self.work.hostile if pick.random() < cfg.blacklist_fraction]
        db.insert_batch(listed, instrument=False)
        self.db = db

        self.switch = Switch(ports=sorted(self.nodes))
        apps = []
        if cfg.policy != "none":
            apps.append(
                DnsGuard(cfg.policy, db, cfg.db_query_latency_ms / 1000, cfg.reaction_processing_ms / 1000)
            )
        apps.append(LearningSwitch())
        self.ctl = Controller(apps)

    def _materialize(self) -> Workload:
        cfg = self.cfg
        w = Workload()
        w.zone[EXT_IP_DOMAIN] = [EXT_IP_ADDR]
        w.services[EXT_IP_ADDR] = "web"
        days = int(cfg.duration_s // self.params.day_length_s) + 1
        for h in self.hosts:
            m = h.model
            rng = random.Random(f"{cfg.seed}:workload:{h.index}")
            if m.kind == "benign":
                for j, d in enumerate(m.benign_domains):
                    ip = _web_ip(j)
                    w.zone.setdefault(d.lower(), [ip])
                    w.services[ip] = "web"
            elif m.kind in ("cryptowall_v3", "cryptowall_v4"):
                if m.proxy_list is None:
                    m.proxy_list = gen_proxy_list(rng, self.params, slot=h.index)
                else:
                    m.proxy_list = [(d, ipaddress.IPv4Address(ip)) for d, ip in m.proxy_list]
                alive = [rng.random() < self.params.proxy_alive_probability for _ in m.proxy_list]
                if not any(alive):
                    alive[rng.randrange(len(alive))] = True
                for (d, ip), up in zip(m.proxy_list, alive):
                    w.zone.setdefault(d, []).append(ip)
                    if up:
                        w.services[ip] = "proxy"
                    w.hostile.append(d)
            else:
                if m.hardcoded_ips is None:
                    m.hardcoded_ips = locky_hardcoded_ips(rng, self.params, slot=h.index)
                if m.dga_seed is None:
                    m.dga_seed = rng.getrandbits(32)
                per_day = self.params.locky_dga_domains_per_day
                for day in range(days):
                    batch = dga_domains(m.dga_seed, day, per_day)
                    live = batch[dga_registered_index(m.dga_seed, day, per_day)]
                    ip = locky_cc_ip(h.index, day)
                    w.zone[live] = [ip]
                    w.services[ip] = "cc"
                    w.hostile.extend(batch)
        return w

    # -- event plumbing -----------------------------------------------------

    def _at(self, t: int, kind: int, *payload) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (t, self._seq, kind, payload))

    def _outcome(self, uid: Optional[int], outcome: str) -> None:
        if uid is None or uid in self.outcomes:
            return
        self.outcomes[uid] = outcome
        self.trace.add(self.now, "frame", uid=uid, outcome=outcome)

    def _send(self, node: Node, frame: Frame) -> None:
        frame.uid = self._uid
        self._uid += 1
        frame.ingress_port = node.port
        self._at(self.now + self.link_us, SW_RX, frame)

    def _to_controller(self, msg, uid: Optional[int]) -> None:
        self._xid += 1
        self._at(self.now + self.chan_us, CTL_RX, of.encode(msg, self._xid), uid)

    # -- switch -------------------------------------------------------------

    def _switch_rx(self, frame: Frame) -> None:
        outputs, packet_in = self.switch.process_frame(frame, self.now / 1e6)
        for port, out in outputs:
            out.uid = frame.uid
            self._at(self.now + self.link_us, NODE_RX, port, out)
        if packet_in is not None:
            # with nothing forwarded, the controller holds the only copy
            self._to_controller(packet_in, None if outputs else frame.uid)
        elif not outputs:
            self._outcome(frame.uid, "dropped_by_flow")

    def _switch_ctl_rx(self, wire: bytes, uid: Optional[int]) -> None:
        msg, _ = of.decode(wire)
        try:
            outputs, _replies = self.switch.handle_message(msg, self.now / 1e6)
        except TableFull:
            self.trace.add(self.now, "table_full")
            return
        if isinstance(msg, of.FlowMod):
            self.trace.add(
                self.now,
                "flow_mod",
                priority=msg.priority,
                command=msg.command,
                drop=int(not msg.actions),
            )
        for port, out in outputs:
            out.uid = uid
            self._at(self.now + self.link_us, NODE_RX, port, out)
        if uid is not None and not outputs:
            self._outcome(uid, "dropped_by_flow")

    # -- controller ---------------------------------------------------------

    def _controller_rx(self, wire: bytes, uid: Optional[int]) -> None:
        replies = self.ctl.handle(wire, self.now / 1e6)
        held = of.decode(wire)[0].frame if uid is not None else None
        released = False
        for kind, payload in self.ctl.events:
            if kind == "discard" and uid is not None and payload == held:
                self._outcome(uid, "discarded_by_sdn1")
                released = True
            elif kind == "alert":
                reaction_us = round(payload.time_s * 1e6) - self.now
                self.trace.add(self.now, "alert", json=payload.to_json(), reaction_us=reaction_us)
        self.ctl.events.clear()
        for delay_s, msg, out_wire in replies:
            carry = None
            if uid is not None and not released and isinstance(msg, of.PacketOut) and msg.frame == held:
                carry, released = uid, True
            self._at(self.now + round(delay_s * 1e6) + self.chan_us, SW_CTL_RX, out_wire, carry)
        if uid is not None and not released:
            self._outcome(uid, "dropped_by_controller")

    # -- nodes --------------------------------------------------------------

    def _node_rx(self, port: int, frame: Frame) -> None:
        node = self.nodes[port]
        if frame.dst_mac != node.mac and frame.dst_mac != BROADCAST:
            return  # flooded copy for someone else
        if node is self.resolver:
            self._outcome(frame.uid, "delivered")
            if not self._arp_rx(node, frame):
                self._resolver_rx(frame)
        elif node is self.gateway:
            self._gateway_rx(frame)
        else:
            self._outcome(frame.uid, "delivered")
            self._host_rx(self.host_by_port[port], frame)

    def _resolver_rx(self, frame: Frame) -> None:
        ip = frame.ip
        if ip is None or ip.proto != PROTO_UDP or ip.dst_port != 53:
            return
        try:
            query = parse_message(frame.payload)
        except DnsError:
            return
        if query.is_response or not query.questions:
            return
        name = str(query.questions[0].name)
        ips = self.work.zone.get(name)
        rcode = RCODE_NOERROR if ips else RCODE_NXDOMAIN
        resp = make_response(query, [str(a) for a in ips or ()], rcode)
        self.trace.add(
            self.now,
            "dns_served",
            client=str(ip.src_ip),
            domain=name,
            rcode=rcode,
            hostile=int(self.db.contains(name)),
        )
        out = udp_frame(
            self.resolver.mac, frame.src_mac, RESOLVER_IP, ip.src_ip, 53, ip.src_port,
            encode_message(resp), self.resolver.next_ip_id(),
        )
        self._later(self.dns_proc_us, self.resolver, out)

    def _refresh_arp(self) -> None:
        # unicast ARP refreshes towards the resolver and the gateway; the
        # replies let the learning switch install both directions before
        # any host script starts, so no measured query takes the cold path
        for h in self.hosts:
            for peer in (self.resolver, self.gateway):
                self._send(h.node, arp_frame(ARP_REQUEST, h.node.mac, h.node.ip, peer.mac, peer.ip))

    def _later(self, delay_us: int, node: Node, frame: Frame) -> None:
        self._at(self.now + delay_us, WAKE, ("send", node, frame))

    def _arp_rx(self, node: Node, frame: Frame) -> bool:
        arp = parse_arp(frame)
        if arp is None:
            return False
        op, sha, spa, tpa = arp
        if op == ARP_REQUEST and tpa == node.ip and spa != node.ip:
            self._send(node, arp_frame(ARP_REPLY, node.mac, node.ip, sha, spa))
        return True

    def _gateway_rx(self, frame: Frame) -> None:
        ip = frame.ip
        if ip is None:
            self._outcome(frame.uid, "delivered")
            self._arp_rx(self.gateway, frame)
            return
        kind = self.work.services.get(ip.dst_ip)
        if ip.proto != PROTO_TCP or kind is None:
            self._outcome(frame.uid, "lost")
            return
        self._outcome(frame.uid, "delivered")
        think_us = int(frame.payload.split(b" ")[1]) if frame.payload.startswith(b"REQ ") else 0
        self.trace.add(self.now, "http_served", ip=str(ip.dst_ip), service=kind)
        out = tcp_frame(
            self.gateway.mac, frame.src_mac, ip.dst_ip, ip.src_ip, HTTP_PORT, ip.src_port,
            b"RESP", self.gateway.next_ip_id(),
        )
        self._later(think_us, self.gateway, out)

    # -- hosts --------------------------------------------------------------

    def _start_hosts(self) -> None:
        for h in self.hosts:
            rng = random.Random(f"{self.cfg.seed}:host:{h.index}")
            start = WARMUP_US + round(h.model.start_s * 1e6) if h.model.infected else WARMUP_US
            if h.model.kind == "benign":
                h.script = benign_behavior(h.model, rng, start, h.model.max_queries)
                self._at(0, WAKE, ("step", h, h.token, None))
            else:
                behavior = locky_behavior if h.model.kind == "locky" else cryptowall_behavior
                h.script = behavior(h.model, rng, self.params)
                self._at(start, WAKE, ("step", h, h.token, None))

    def _step(self, h: HostState, value) -> None:
        """Feed ``value`` to the script and run it until it blocks."""
        while not h.done:
            try:
                cmd = h.script.send(value)
            except StopIteration:
                h.done = True
                self.trace.add(self.now, "script_done", host=h.index)
                return
            value = None
            if isinstance(cmd, Mark):
                self.trace.add(self.now, cmd.kind, host=h.index, **cmd.info)
                continue
            h.token += 1
            if isinstance(cmd, Sleep):
                t = cmd.us if cmd.absolute else self.now + cmd.us
                if t <= self.now:
                    continue
                self._at(t, WAKE, ("step", h, h.token, None))
                return
            if isinstance(cmd, Resolve):
                if h.model.kind == "benign" and self.now > self.end_us - self.timeout_us:
                    h.done = True
                    return
                self._resolve(h, cmd.domain)
                return
            if isinstance(cmd, Exchange):
                self._exchange(h, cmd)
                return
            raise TypeError(f"unknown script command {cmd!r}")

    def _resolve(self, h: HostState, domain: str) -> None:
        node = h.node
        h.qid = (h.qid + 1) & 0xFFFF
        sport = node.next_port()
        h.pending = ("dns", h.qid, sport)
        h.queries += 1
        self.trace.add(self.now, "dns_query", host=h.index, qid=h.qid, domain=domain)
        frame = udp_frame(
            node.mac, self.resolver.mac, node.ip, RESOLVER_IP, sport, 53,
            encode_message(make_query(h.qid, domain)), node.next_ip_id(),
        )
        self._send(node, frame)
        self._at(self.now + self.timeout_us, TIMEOUT, h, h.token)

    def _exchange(self, h: HostState, cmd: Exchange) -> None:
        node = h.node
        rtt = 4 * self.link_us
        think = max(0, cmd.duration_us - rtt)
        sport = node.next_port()
        h.pending = ("http", ipaddress.IPv4Address(cmd.ip), sport, cmd.label)
        self.trace.add(self.now, "http_request", host=h.index, ip=str(cmd.ip), label=cmd.label)
        frame = tcp_frame(
            node.mac, self.gateway.mac, node.ip, cmd.ip, sport, HTTP_PORT,
            b"REQ %d" % think, node.next_ip_id(),
        )
        self._send(node, frame)
        self._at(self.now + think + rtt + self.timeout_us, TIMEOUT, h, h.token)

    def _host_rx(self, h: HostState, frame: Frame) -> None:
        ip = frame.ip
        p = h.pending
        if ip is None or p is None:
            return
        if p[0] == "dns" and ip.proto == PROTO_UDP and ip.src_port == 53 and ip.dst_port == p[2]:
            try:
                msg = parse_message(frame.payload)
            except DnsError:
                return
            if not msg.is_response or msg.id != p[1]:
                return
            ips = [a for _, a, _ in extract_a_records(msg)]
            self.trace.add(self.now, "dns_answer", host=h.index, qid=p[1], rcode=msg.rcode, n=len(ips))
            h.pending = None
            self._step(h, ips)
        elif p[0] == "http" and ip.proto == PROTO_TCP and ip.src_ip == p[1] and ip.dst_port == p[2]:
            self.trace.add(self.now, "http_response", host=h.index, ip=str(p[1]), label=p[3])
            h.pending = None
            self._step(h, True)

    def _timeout(self, h: HostState, token: int) -> None:
        if token != h.token or h.pending is None or h.done:
            return
        p = h.pending
        h.pending = None
        if p[0] == "dns":
            self.trace.add(self.now, "dns_timeout", host=h.index, qid=p[1])
            self._step(h, None)
        else:
            self.trace.add(self.now, "http_timeout", host=h.index, ip=str(p[1]), label=p[3])
            self._step(h, False)

    # -- main loop ----------------------------------------------------------

    def run(self) -> tuple[Trace, MetricsRecord]:
        cfg = self.cfg
        self.trace.add(
            0,
            "meta",
            seed=cfg.seed,
            policy=cfg.policy,
            db_size=cfg.db_size,
            key_download_min_s=self.params.key_download_min_s,
            reaction_processing_ms=cfg.reaction_processing_ms,
            hosts=[h.model.kind for h in self.hosts],
            host_ips=[str(h.node.ip) for h in self.hosts],
        )
        self._xid += 1
        self._at(self.chan_us, CTL_RX, of.encode(of.Hello(), self._xid), None)
        for node in self.nodes.values():
            self._send(node, arp_announce(node.mac, node.ip))
        self._at(WARMUP_US // 2, WAKE, ("refresh",))
        self._start_hosts()

        queue = self._queue
        while queue and queue[0][0] <= self.end_us:
            t, _, kind, payload = heapq.heappop(queue)
            self.now = t
            if kind == SW_RX:
                self._switch_rx(*payload)
            elif kind == NODE_RX:
                self._node_rx(*payload)
            elif kind == CTL_RX:
                self._controller_rx(*payload)
            elif kind == SW_CTL_RX:
                self._switch_ctl_rx(*payload)
            elif kind == TIMEOUT:
                self._timeout(*payload)
            else:
                action = payload[0]
                if action[0] == "send":
                    self._send(action[1], action[2])
                elif action[0] == "refresh":
                    self._refresh_arp()
                else:
                    _, h, token, value = action
                    if token == h.token:
                        self._step(h, value)

        self.now = self.end_us
        for uid in range(self._uid):
            if uid not in self.outcomes:
                self._outcome(uid, "in_flight")
        self.trace.add(
            self.end_us,
            "end",
            frames=self._uid,
            packet_ins=self.ctl.stats.packet_ins,
            parse_failures=sum(getattr(a, "parse_failures", 0) for a in self.ctl.apps),
        )
        return self.trace, metrics_from_trace(self.trace)


def run(config: SimConfig) -> tuple[Trace, MetricsRecord]:
    """Execute one simulation; same config and seed give an identical trace."""
    return Sim(config).run()


def measure_dns_delay(config: SimConfig, n: int = 21) -> float:
    """Mean delivery delay (ms) of queries 2..n from one benign host issuing n queries."""
    host = HostModel(kind="benign", query_rate_hz=10.0, max_queries=n)
    duration = max(config.duration_s, WARMUP_US / 1e6 + n / host.query_rate_hz + 10.0)
    cfg = dataclasses.replace(config, hosts=[host], duration_s=duration)
    trace, _ = run(cfg)
    delays = [d for _, d in sorted(trace.dns_delays_us(hosts={0}).items())]
    if len(delays) < 2:
        raise RuntimeError("too few answered queries to measure delay")
    kept = delays[1:]
    return sum(kept) / len(kept) / 1000
