"""Software OpenFlow 1.0 switch: one flow table, match-action, table-miss.

Semantics worth knowing:

* Highest priority wins; equal priorities go to the earliest installed
  entry.
* Timeout boundaries are inclusive: an entry whose deadline equals
  ``now`` is already gone.
* Matching is exact on every non-wildcarded field; there are no prefix
  masks.
"""

from __future__ import annotations

import bisect
import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional

from . import openflow_codec as of
from .packet import Frame

log = logging.getLogger(__name__)

DEFAULT_CAPACITY = 4096


class TableFull(Exception):
    pass


class UnsupportedCommand(ValueError):
    pass


@dataclass
class FlowEntry:
    match: of.OfMatch
    priority: int
    actions: tuple[of.Output, ...] = ()
    idle_timeout: float = 0
    hard_timeout: float = 0
    install_time: float = 0.0
    last_hit_time: float = 0.0
    packet_count: int = 0
    install_seq: int = 0
    cookie: int = 0

    @property
    def is_drop(self) -> bool:
        return not self.actions

    def expired(self, now: float) -> bool:
        if self.hard_timeout and now >= self.install_time + self.hard_timeout:
            return True
        if self.idle_timeout and now >= self.last_hit_time + self.idle_timeout:
            return True
        return False

    def matches(self, frame: Frame) -> bool:
        m = self.match
        if m.in_port is not None and m.in_port != frame.ingress_port:
            return False
        if m.dl_src is not None and m.dl_src != frame.src_mac:
            return False
        if m.dl_dst is not None and m.dl_dst != frame.dst_mac:
            return False
        if m.dl_type is not None and m.dl_type != frame.ethertype:
            return False
        if m.nw_proto is None and m.nw_src is None and m.nw_dst is None and m.tp_src is None and m.tp_dst is None:
            return True
        ip = frame.ip
        if ip is None:
            return False
        if m.nw_proto is not None and m.nw_proto != ip.proto:
            return False
        if m.nw_src is not None and m.nw_src != ip.src_ip:
            return False
        if m.nw_dst is not None and m.nw_dst != ip.dst_ip:
            return False
        if m.tp_src is not None and m.tp_src != ip.src_port:
            return False
        if m.tp_dst is not None and m.tp_dst != ip.dst_port:
            return False
        return True


class FlowTable:
    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        self.capacity = capacity
        self._entries: list[FlowEntry] = []  # sorted by (-priority, install_seq)
        self._keys: list[tuple[int, int]] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(list(self._entries))

    def _insert(self, entry: FlowEntry) -> None:
        key = (-entry.priority, entry.install_seq)
        i = bisect.bisect(self._keys, key)
        self._keys.insert(i, key)
        self._entries.insert(i, entry)

    def _remove_at(self, i: int) -> FlowEntry:
        del self._keys[i]
        return self._entries.pop(i)

    def classify(self, frame: Frame, now: float) -> Optional[FlowEntry]:
        """Return the winning live entry, or ``None`` for a table miss."""
        for entry in self._entries:
            if entry.matches(frame) and not entry.expired(now):
                entry.packet_count += 1
                entry.last_hit_time = now
                return entry
        return None

    def apply_flow_mod(self, mod: of.FlowMod, now: float) -> Optional[FlowEntry]:
        if mod.command == of.OFPFC_ADD:
            replaced = self._find_strict(mod.match, mod.priority)
            if replaced is None and len(self._entries) >= self.capacity:
                raise TableFull(f"flow table holds {self.capacity} entries")
            if replaced is not None:
                self._remove_at(replaced)
            entry = FlowEntry(
                match=mod.match,
                priority=mod.priority,
                actions=tuple(mod.actions),
                idle_timeout=mod.idle_timeout,
                hard_timeout=mod.hard_timeout,
                install_time=now,
                last_hit_time=now,
                install_seq=next(self._seq),
                cookie=mod.cookie,
            )
            self._insert(entry)
            return entry
        if mod.command == of.OFPFC_DELETE:
            for i in reversed(range(len(self._entries))):
                e = self._entries[i]
                if e.priority == mod.priority and e.match == mod.match:
                    self._remove_at(i)
            return None
        raise UnsupportedCommand(f"FLOW_MOD command {mod.command}")

    def _find_strict(self, match: of.OfMatch, priority: int) -> Optional[int]:
        for i, e in enumerate(self._entries):
            if e.priority == priority and e.match == match:
                return i
        return None

    def expire(self, now: float) -> list[FlowEntry]:
        evicted = []
        for i in reversed(range(len(self._entries))):
            if self._entries[i].expired(now):
                evicted.append(self._remove_at(i))
        evicted.reverse()
        return evicted


def classify(table: FlowTable, frame: Frame, now: float) -> Optional[FlowEntry]:
    return table.classify(frame, now)


def apply_flow_mod(table: FlowTable, mod: of.FlowMod, now: float) -> Optional[FlowEntry]:
    return table.apply_flow_mod(mod, now)


def expire(table: FlowTable, now: float) -> list[FlowEntry]:
    return table.expire(now)


@dataclass
class SwitchStats:
    frames_in: int = 0
    table_misses: int = 0
    controller_action_hits: int = 0
    packet_ins: int = 0
    dropped_by_flow: int = 0
    flow_mods: int = 0


@dataclass
class Switch:
    """A switch with numbered ports and one flow table.

    ``process_frame`` handles data-plane arrivals; ``handle_message``
    consumes controller bytes.  Both return the frames to emit as
    ``(egress_port, frame)`` pairs.
    """

    ports: list[int]
    table: FlowTable = field(default_factory=FlowTable)
    stats: SwitchStats = field(default_factory=SwitchStats)

    def _outputs(self, actions, frame: Frame, ingress: int):
        out = []
        to_controller = False
        for action in actions:
            port = action.port
            if port in (of.OFPP_FLOOD, of.OFPP_ALL):
                out.extend((p, frame) for p in self.ports if p != ingress)
            elif port == of.OFPP_CONTROLLER:
                to_controller = True
            elif port in self.ports and port != ingress:
                out.append((port, frame))
            else:
                log.debug("dropping output to port %d (ingress %d)", port, ingress)
        return out, to_controller

    def process_frame(self, frame: Frame, now: float) -> tuple[list[tuple[int, Frame]], Optional[of.PacketIn]]:
        self.stats.frames_in += 1
        entry = self.table.classify(frame, now)
        if entry is None:
            self.stats.table_misses += 1
            self.stats.packet_ins += 1
            return [], of.PacketIn(frame.ingress_port, frame.to_bytes(), of.OFPR_NO_MATCH)
        if entry.is_drop:
            self.stats.dropped_by_flow += 1
            return [], None
        out, to_controller = self._outputs(entry.actions, frame, frame.ingress_port)
        packet_in = None
        if to_controller:
            self.stats.controller_action_hits += 1
            self.stats.packet_ins += 1
            packet_in = of.PacketIn(frame.ingress_port, frame.to_bytes(), of.OFPR_ACTION)
        return out, packet_in

    def handle_message(self, msg: of.OfMessage, now: float) -> tuple[list[tuple[int, Frame]], list[of.OfMessage]]:
        """Apply one controller message; return emitted frames and replies."""
        if isinstance(msg, of.FlowMod):
            self.stats.flow_mods += 1
            self.table.expire(now)
            self.table.apply_flow_mod(msg, now)
            return [], []
        if isinstance(msg, of.PacketOut):
            frame = Frame.from_bytes(msg.frame, msg.in_port)
            out, _ = self._outputs(msg.actions, frame, msg.in_port)
            return out, []
        if isinstance(msg, of.EchoRequest):
            return [], [of.EchoReply(msg.data)]
        return [], []


def process_frame(switch: Switch, frame: Frame, now: float):
    return switch.process_frame(frame, now)
