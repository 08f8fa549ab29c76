"""Deterministic discrete-event testbed: one switch, one controller, seeded hosts."""

from .config import ConfigInvalid, HostModel, SimConfig, sim_config_from_dict
from .engine import Sim, measure_dns_delay, run
from .metrics import CSV_HEADER, MetricsRecord, Trace, metrics_from_trace
from .workload import (
    WorkloadParams,
    cryptowall_behavior,
    dga_domains,
    gen_proxy_list,
    key_download_sigmas,
    locky_behavior,
    sample_key_download_time,
)

__all__ = [
    "CSV_HEADER",
    "ConfigInvalid",
    "HostModel",
    "MetricsRecord",
    "Sim",
    "SimConfig",
    "Trace",
    "WorkloadParams",
    "cryptowall_behavior",
    "dga_domains",
    "gen_proxy_list",
    "key_download_sigmas",
    "locky_behavior",
    "measure_dns_delay",
    "metrics_from_trace",
    "run",
    "sample_key_download_time",
    "sim_config_from_dict",
]
