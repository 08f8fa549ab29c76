"""Event trace and the metrics derived from it.

Everything in a MetricsRecord is recomputed from the trace alone; the
engine never reports a number the trace cannot back up.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

CSV_HEADER = (
    "seed,policy,db_size,avg_dns_delay_ms,reaction_ms,key_downloads_completed,"
    "infections_blocked,drop_flows_installed,benign_dns_success_rate"
)


class Trace(list):
    """Ordered ``(time_us, kind, fields)`` events."""

    def add(self, t: int, kind: str, **fields) -> None:
        if self and t < self[-1][0]:
            raise AssertionError(f"trace time went backwards: {t} < {self[-1][0]}")
        self.append((t, kind, fields))

    def of_kind(self, kind: str):
        return [e for e in self if e[1] == kind]

    def lines(self):
        for t, kind, fields in self:
            yield f"{t} {kind} {json.dumps(fields, sort_keys=True, separators=(',', ':'))}\n"

    def dumps(self) -> str:
        return "".join(self.lines())

    @classmethod
    def loads(cls, text: str) -> "Trace":
        trace = cls()
        for line in text.splitlines():
            t, kind, body = line.split(" ", 2)
            trace.append((int(t), kind, json.loads(body)))
        return trace

    def dns_delays_us(self, hosts=None) -> dict[tuple[int, int], int]:
        """(host, query number starting at 1) -> answer delay, for answered queries."""
        pending = {}
        count = Counter()
        out = {}
        for t, kind, f in self:
            if kind == "dns_query" and (hosts is None or f["host"] in hosts):
                count[f["host"]] += 1
                pending[f["host"]] = (t, f["qid"], count[f["host"]])
            elif kind == "dns_answer" and f["host"] in pending:
                sent, qid, n = pending.pop(f["host"])
                if qid == f["qid"]:
                    out[(f["host"], n)] = t - sent
        return out


@dataclass
class MetricsRecord:
    seed: int
    policy: str
    db_size: int
    avg_dns_delay_ms: Optional[float]
    reaction_ms: Optional[float]
    key_downloads_completed: int
    infections_blocked: int
    drop_flows_installed: int
    benign_dns_success_rate: Optional[float]
    # beyond the CSV columns
    blacklisted_resolutions_attempted: int = 0
    mitigation_margin: Optional[float] = None
    cc_exchanges_completed: int = 0
    encryptions_started: int = 0
    packet_ins: int = 0
    frames_injected: int = 0
    frame_outcomes: dict = field(default_factory=dict)
    alerts: list = field(default_factory=list)

    def csv_row(self) -> str:
        def num(x):
            return "" if x is None else f"{x:.3f}"

        return ",".join(
            [
                str(self.seed),
                self.policy,
                str(self.db_size),
                num(self.avg_dns_delay_ms),
                num(self.reaction_ms),
                str(self.key_downloads_completed),
                str(self.infections_blocked),
                str(self.drop_flows_installed),
                num(self.benign_dns_success_rate),
            ]
        )


def metrics_from_trace(trace: Trace) -> MetricsRecord:
    meta = next(f for _, k, f in trace if k == "meta")
    kinds = meta["hosts"]
    ips = meta["host_ips"]
    benign = {i for i, k in enumerate(kinds) if k == "benign"}
    infected = set(range(len(kinds))) - benign

    # the first query of every host is a cold-path outlier and is left out
    delays = [d for (host, n), d in trace.dns_delays_us(benign).items() if n > 1]
    avg_delay = sum(delays) / len(delays) / 1000 if delays else None

    issued = sum(1 for _, k, f in trace if k == "dns_query" and f["host"] in benign)
    answered = sum(1 for _, k, f in trace if k == "dns_answer" and f["host"] in benign)
    success = answered / issued if issued else None

    alerts = trace.of_kind("alert")
    reactions = [f["reaction_us"] for _, _, f in alerts]
    reaction_ms = sum(reactions) / len(reactions) / 1000 if reactions else None
    victims = {json.loads(f["json"])["victim_ip"] for _, _, f in alerts}

    keyed = {f["host"] for _, k, f in trace if k == "key_download" and f["host"] in infected}
    blocked = {i for i in infected if i not in keyed and ips[i] in victims}

    drops = sum(1 for _, k, f in trace if k == "flow_mod" and f["drop"] and f["command"] == 0)
    hostile = {(f["client"], f["domain"]) for _, k, f in trace if k == "dns_served" and f["hostile"]}
    margin = meta["key_download_min_s"] * 1000 / reaction_ms if reaction_ms else None

    end = next((f for _, k, f in reversed(trace) if k == "end"), {})
    outcomes = Counter(f["outcome"] for _, k, f in trace if k == "frame")
    return MetricsRecord(
        seed=meta["seed"],
        policy=meta["policy"],
        db_size=meta["db_size"],
        avg_dns_delay_ms=avg_delay,
        reaction_ms=reaction_ms,
        key_downloads_completed=len(keyed),
        infections_blocked=len(blocked),
        drop_flows_installed=drops,
        benign_dns_success_rate=success,
        blacklisted_resolutions_attempted=len(hostile),
        mitigation_margin=margin,
        cc_exchanges_completed=sum(
            1 for _, k, f in trace if k == "http_response" and f["label"].startswith("post")
        ),
        encryptions_started=sum(1 for _, k, _ in trace if k == "encryption_started"),
        packet_ins=end.get("packet_ins", 0),
        frames_injected=end.get("frames", 0),
        frame_outcomes=dict(sorted(outcomes.items())),
        alerts=[f["json"] for _, _, f in alerts],
    )
