import ipaddress
import json

import pytest

from sdnransim import openflow_codec as of
from sdnransim.blacklist_db import BlacklistDb, synth_domains
from sdnransim.controller_core import PRIO_BLOCK, PRIO_DNS_PAIR, Controller, LearningSwitch
from sdnransim.dns_codec import encode_message, make_query, make_response
from sdnransim.mitigation_apps import (
    Action,
    Alert,
    DnsGuard,
    HostQuarantine,
    PairBlock,
    Policy,
    reaction_latency,
    sdn1_on_dns,
    sdn2_on_dns_copy,
)
from sdnransim.packet import arp_announce, mac, udp_frame

CLIENT = mac("02:00:00:00:00:01")
RESOLVER = mac("02:00:00:00:00:35")
DB = BlacklistDb(["bad.tld", "evil.example"])


def response(name, ips=("192.0.2.10",), ident=1):
    msg = make_response(make_query(ident, name), list(ips))
    return udp_frame(RESOLVER, CLIENT, "10.0.0.53", "10.0.0.1", 53, 40000, encode_message(msg), ident)


def query(name, ident=1):
    return udp_frame(CLIENT, RESOLVER, "10.0.0.1", "10.0.0.53", 40000, 53, encode_message(make_query(ident, name)), ident)


def packet_in(frame, port=2):
    return of.PacketIn(port, frame.to_bytes(), of.OFPR_ACTION)


class TestSdn1:
    def test_hostile_response_discarded(self):
        v = sdn1_on_dns(packet_in(response("bad.tld")), DB)
        assert v.action is Action.DISCARD
        assert v.block_rules == [HostQuarantine(ipaddress.IPv4Address("10.0.0.1"))]
        (alert,) = v.alerts
        assert alert.action == "host_blocked" and alert.domain == "bad.tld"

    def test_benign_response_forwarded(self):
        v = sdn1_on_dns(packet_in(response("benign.org")), DB)
        assert v.action is Action.FORWARD and not v.block_rules and not v.alerts

    def test_query_forwarded(self):
        v = sdn1_on_dns(packet_in(query("bad.tld")), DB)
        assert v.action is Action.FORWARD and not v.alerts

    def test_garbage_payload_fails_open(self):
        f = udp_frame(RESOLVER, CLIENT, "10.0.0.53", "10.0.0.1", 53, 40000, b"\x00\x01")
        v = sdn1_on_dns(packet_in(f), DB)
        assert v.action is Action.FORWARD and v.parse_failed

    def test_quarantine_flows(self):
        mods = HostQuarantine(ipaddress.IPv4Address("10.0.0.1")).flow_mods()
        assert len(mods) == 2
        assert {str(m.match.nw_src) for m in mods} == {"10.0.0.1", "None"}
        assert all(m.priority == PRIO_BLOCK and not m.actions and m.hard_timeout == 0 for m in mods)


class TestSdn2:
    def test_single_a_record(self):
        v = sdn2_on_dns_copy(packet_in(response("bad.tld")), DB)
        assert v.action is Action.FORWARD
        assert sum(len(r.flow_mods()) for r in v.block_rules) == 2
        assert v.alerts[0].action == "pair_blocked" and v.alerts[0].flows_installed == 2

    def test_three_a_records(self):
        ips = ("192.0.2.10", "192.0.2.11", "192.0.2.12")
        v = sdn2_on_dns_copy(packet_in(response("evil.example", ips)), DB)
        assert sum(len(r.flow_mods()) for r in v.block_rules) == 6
        assert len(v.alerts) == 1 and v.alerts[0].resolved_ips == list(ips)

    def test_benign(self):
        v = sdn2_on_dns_copy(packet_in(response("benign.org")), DB)
        assert not v.block_rules and not v.alerts

    def test_pair_block_both_directions(self):
        fwd, rev = PairBlock(ipaddress.IPv4Address("10.0.0.1"), ipaddress.IPv4Address("192.0.2.10")).flow_mods()
        assert (fwd.match.nw_src, fwd.match.nw_dst) == (rev.match.nw_dst, rev.match.nw_src)


def warm(policy, db=DB):
    guard = DnsGuard(policy, db)
    ctl = Controller([guard, LearningSwitch()])
    ctl.handle(of.encode(of.Hello()), 0.0)
    ctl.handle(of.encode(of.PacketIn(1, arp_announce(CLIENT, "10.0.0.1").to_bytes())), 0.0)
    ctl.handle(of.encode(of.PacketIn(2, arp_announce(RESOLVER, "10.0.0.53").to_bytes())), 0.0)
    return guard, ctl


def sent(ctl, frame, port=2, now=1.0):
    return [msg for _, msg, _ in ctl.handle(of.encode(packet_in(frame, port)), now)]


class TestDnsGuard:
    def test_none_policy_rejected(self):
        with pytest.raises(ValueError):
            DnsGuard("none", DB)

    def test_connect_installs_tap_flows(self):
        guard = DnsGuard(Policy.SDN1, DB)
        ctl = Controller([guard, LearningSwitch()])
        out = ctl.handle(of.encode(of.Hello()), 0.0)
        assert sum(isinstance(m, of.FlowMod) for _, m, _ in out) == 2

    def test_chain_dns_to_guard_arp_to_learning(self):
        guard, ctl = warm("sdn1")
        sent(ctl, response("benign.org"))
        assert ctl.stats.unhandled == 0
        out = sent(ctl, arp_announce(CLIENT, "10.0.0.1"), port=1)
        assert isinstance(out[0], of.PacketOut)

    def test_sdn1_benign_response_released_after_lookup(self):
        guard, ctl = warm("sdn1")
        out = ctl.handle(of.encode(packet_in(response("benign.org"))), 1.0)
        (delay, po, _) = out[0]
        assert isinstance(po, of.PacketOut) and po.actions == (of.Output(1),)
        assert delay == pytest.approx(guard.db_query_latency_s)

    def test_sdn1_hostile_response_discarded_and_quarantined(self):
        guard, ctl = warm("sdn1")
        out = ctl.handle(of.encode(packet_in(response("bad.tld"))), 1.0)
        assert not any(isinstance(m, of.PacketOut) for _, m, _ in out)
        blocks = [(d, m) for d, m, _ in out if isinstance(m, of.FlowMod) and m.priority == PRIO_BLOCK]
        assert len(blocks) == 2 and all(d == guard.reaction_s for d, _ in blocks)
        assert [k for k, _ in ctl.events].count("discard") == 1
        assert guard.alerts[0].time_s == pytest.approx(1.0 + guard.reaction_s)

    def test_sdn2_installs_pair_tap_and_never_packets_out(self):
        guard, ctl = warm("sdn2")
        out = sent(ctl, response("benign.org"))
        (tap,) = out
        assert tap.priority == PRIO_DNS_PAIR and tap.actions[0] == of.Output(1)
        assert sent(ctl, response("other.org", ident=2)) == []

    def test_alert_dedup(self):
        guard, ctl = warm("sdn2")
        sent(ctl, response("bad.tld"))
        again = sent(ctl, response("bad.tld", ident=2))
        assert len(guard.alerts) == 1
        assert not any(isinstance(m, of.FlowMod) and m.priority == PRIO_BLOCK for m in again)

    def test_repeat_with_new_address_still_blocks(self):
        guard, ctl = warm("sdn2")
        sent(ctl, response("bad.tld"))
        again = sent(ctl, response("bad.tld", ("192.0.2.99",), ident=2))
        assert len(guard.alerts) == 1
        assert sum(isinstance(m, of.FlowMod) and m.priority == PRIO_BLOCK for m in again) == 2


def test_alert_json_fields():
    alert = Alert(1.25, "sdn2", "10.0.0.1", "bad.tld", ["192.0.2.10"], "pair_blocked", 2)
    assert list(json.loads(alert.to_json())) == [
        "time_s", "policy", "victim_ip", "domain", "resolved_ips", "action", "flows_installed",
    ]


class TestReactionLatency:
    def test_absent_domain(self):
        assert reaction_latency("sdn2", BlacklistDb()) is None

    def test_large_db_under_100ms(self):
        db = BlacklistDb(synth_domains(70_000, seed=1))
        for policy in ("sdn1", "sdn2"):
            assert reaction_latency(policy, db, load=50) < 0.1

    def test_size_insensitive(self):
        small = BlacklistDb(synth_domains(1_000, seed=1))
        big = BlacklistDb(synth_domains(70_000, seed=1))
        t_small = min(reaction_latency("sdn2", small) for _ in range(3))
        t_big = min(reaction_latency("sdn2", big) for _ in range(3))
        # hash lookups: allow generous scheduler noise
        assert t_small <= 3 * t_big + 1e-3
