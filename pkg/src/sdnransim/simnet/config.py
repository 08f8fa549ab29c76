"""Simulation configuration and host models."""

from __future__ import annotations

import dataclasses
import ipaddress
from dataclasses import dataclass, field
from typing import Optional

from .workload import DEFAULT_PARAMS, WorkloadParams

HOST_KINDS = ("benign", "cryptowall_v3", "cryptowall_v4", "locky")
POLICIES = ("none", "sdn1", "sdn2")
DEFAULT_BENIGN_DOMAINS = tuple(f"site{i}.example" for i in range(1, 21))


class ConfigInvalid(ValueError):
    pass


@dataclass
class HostModel:
    kind: str = "benign"
    query_rate_hz: float = 0.2
    benign_domains: tuple[str, ...] = DEFAULT_BENIGN_DOMAINS
    max_queries: Optional[int] = None
    # infected kinds; generated from the run seed when left as None
    proxy_list: Optional[list] = None
    hardcoded_ips: Optional[list] = None
    dga_seed: Optional[int] = None
    start_s: float = 1.0
    mac: Optional[bytes] = None
    ip: Optional[ipaddress.IPv4Address] = None

    @property
    def infected(self) -> bool:
        return self.kind != "benign"


@dataclass
class SimConfig:
    seed: int = 0
    policy: str = "none"
    db_size: int = 1000
    hosts: list[HostModel] = field(default_factory=lambda: [HostModel()])
    duration_s: float = 300.0
    link_latency_ms: float = 1.0
    controller_channel_latency_ms: float = 1.0
    db_query_latency_ms: float = 0.5
    dns_server_processing_ms: float = 1.0
    reaction_processing_ms: float = 100.0
    # share of the workload's hostile domains present in the blacklist
    blacklist_fraction: float = 1.0
    workload: WorkloadParams = DEFAULT_PARAMS
    feed: Optional[str] = None

    def validate(self) -> "SimConfig":
        latencies = (
            self.link_latency_ms,
            self.controller_channel_latency_ms,
            self.db_query_latency_ms,
            self.dns_server_processing_ms,
            self.reaction_processing_ms,
        )
        if any(x < 0 for x in latencies):
            raise ConfigInvalid("latencies must be >= 0")
        if not self.duration_s > 0:
            raise ConfigInvalid("duration_s must be > 0")
        if self.policy not in POLICIES:
            raise ConfigInvalid(f"unknown policy {self.policy!r}")
        if self.db_size < 0:
            raise ConfigInvalid("db_size must be >= 0")
        if not 0.0 <= self.blacklist_fraction <= 1.0:
            raise ConfigInvalid("blacklist_fraction must be in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ConfigInvalid("seed must fit in 64 bits")
        if not self.hosts:
            raise ConfigInvalid("at least one host is required")
        if len(self.hosts) > 1000:
            raise ConfigInvalid("at most 1000 hosts")
        for h in self.hosts:
            if h.kind not in HOST_KINDS:
                raise ConfigInvalid(f"unknown host kind {h.kind!r}")
            if h.kind == "benign" and (h.query_rate_hz <= 0 or not h.benign_domains):
                raise ConfigInvalid("benign hosts need a positive query rate and a domain list")
            if h.proxy_list is not None and not h.proxy_list:
                raise ConfigInvalid("proxy_list must be nonempty")
            if h.start_s < 0:
                raise ConfigInvalid("start_s must be >= 0")
        return self


_HOST_KEYS = {f.name for f in dataclasses.fields(HostModel)} - {"mac", "ip", "proxy_list", "hardcoded_ips"} | {"count"}
_SIM_KEYS = {f.name for f in dataclasses.fields(SimConfig)} - {"hosts", "workload"}
_WORKLOAD_KEYS = {f.name for f in dataclasses.fields(WorkloadParams)}


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigInvalid(f"{where} must be an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigInvalid(f"unknown key(s) in {where}: {', '.join(unknown)}")


def hosts_from_list(items: list) -> list[HostModel]:
    if not isinstance(items, list):
        raise ConfigInvalid("hosts must be a list")
    hosts = []
    for i, item in enumerate(items):
        _reject_unknown(item, _HOST_KEYS, f"hosts[{i}]")
        item = dict(item)
        count = item.pop("count", 1)
        if not isinstance(count, int) or count < 1:
            raise ConfigInvalid(f"hosts[{i}].count must be a positive integer")
        if "benign_domains" in item:
            item["benign_domains"] = tuple(item["benign_domains"])
        for _ in range(count):
            hosts.append(HostModel(**item))
    return hosts


def sim_config_from_dict(data: dict, extra_keys: set = frozenset()) -> SimConfig:
    """Build a SimConfig from parsed JSON; unknown keys are an error."""
    _reject_unknown(data, _SIM_KEYS | {"hosts", "workload"} | set(extra_keys), "config")
    kwargs = {k: v for k, v in data.items() if k in _SIM_KEYS}
    if "hosts" in data:
        kwargs["hosts"] = hosts_from_list(data["hosts"])
    if "workload" in data:
        _reject_unknown(data["workload"], _WORKLOAD_KEYS, "workload")
        try:
            kwargs["workload"] = WorkloadParams(**data["workload"])
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from exc
    try:
        return SimConfig(**kwargs).validate()
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from exc
