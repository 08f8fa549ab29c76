"""Seeded workload models: key-download timing, proxy lists, host scripts.

Host behaviors are generators that yield commands (``Resolve``,
``Exchange``, ``Sleep``, ``Mark``) to the engine and receive the outcome
of each command back through ``send``.  They never see the clock directly.
"""

from __future__ import annotations

import hashlib
import ipaddress
import math
import string
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Generator, Optional

EXT_IP_DOMAIN = "ip-check.example"
PROXY_POOL = ipaddress.IPv4Network("198.18.0.0/15")
LOCKY_HARDCODED_POOL = ipaddress.IPv4Network("198.51.100.0/24")
CC_POOL = ipaddress.IPv4Network("192.0.2.0/24")

_PROXY_TLDS = ("com", "net", "org", "pl", "de", "it", "br", "in")


@dataclass(frozen=True)
class WorkloadParams:
    proxy_list_len_mean: float = 40
    proxy_list_len_max: int = 70
    key_download_min_s: float = 3.76
    key_download_max_s: float = 27.38
    key_download_mean_s: float = 9.28
    key_download_median_s: float = 6.36
    exchanges_v3: int = 5
    exchanges_v4: int = 3
    locky_exchanges: int = 3
    locky_hardcoded_min: int = 2
    locky_hardcoded_max: int = 7
    locky_dga_domains_per_day: int = 13
    day_length_s: float = 86400.0
    proxy_timeout_s: float = 5.0
    proxy_alive_probability: float = 0.8

    def __post_init__(self):
        if not (self.key_download_min_s <= self.key_download_median_s <= self.key_download_mean_s <= self.key_download_max_s):
            raise ValueError("key download bounds must satisfy min <= median <= mean <= max")
        if not 0 < self.proxy_list_len_mean <= self.proxy_list_len_max:
            raise ValueError("proxy list mean must lie in (0, max]")
        if self.locky_dga_domains_per_day <= 12:
            raise ValueError("Locky queries more than a dozen DGA domains per day")
        if not 2 <= self.locky_hardcoded_min <= self.locky_hardcoded_max <= 7:
            raise ValueError("hardcoded C&C count range must sit inside [2, 7]")


DEFAULT_PARAMS = WorkloadParams()


# -- key-download time ------------------------------------------------------
#
# A split log-normal pinned at the median: below it a half log-normal with
# the textbook sigma sqrt(2 ln(mean/median)), truncated at the minimum;
# above it a half log-normal truncated at the maximum whose sigma is solved
# so the overall mean lands on the target.  Each half has mass 1/2, so the
# median is exact.


def _phi(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _half_mean(median: float, sigma: float, bound: float, upper: bool) -> float:
    """E[X | X on one side of the median, inside ``bound``] for X = median * exp(+-sigma |Z|)."""
    c = abs(math.log(bound / median)) / sigma
    mass = 2.0 * _phi(c) - 1.0
    if upper:
        partial = 2.0 * math.exp(sigma * sigma / 2) * (_phi(c - sigma) - _phi(-sigma))
    else:
        partial = 2.0 * math.exp(sigma * sigma / 2) * (_phi(c + sigma) - _phi(sigma))
    return median * partial / mass


@lru_cache(maxsize=None)
def key_download_sigmas(params: WorkloadParams = DEFAULT_PARAMS) -> tuple[float, float]:
    m = params.key_download_median_s
    sigma_lo = math.sqrt(2.0 * math.log(params.key_download_mean_s / m)) if params.key_download_mean_s > m else 1e-9
    lower_mean = _half_mean(m, sigma_lo, params.key_download_min_s, upper=False) if params.key_download_min_s < m else m
    target_upper = 2.0 * params.key_download_mean_s - lower_mean
    if params.key_download_max_s <= m:
        return sigma_lo, 1e-9
    top = _half_mean(m, 10.0, params.key_download_max_s, upper=True)
    if not m < target_upper < top:
        raise ValueError("mean is not reachable inside [min, max] with this median")
    lo, hi = 1e-6, 10.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if _half_mean(m, mid, params.key_download_max_s, upper=True) < target_upper:
            lo = mid
        else:
            hi = mid
    return sigma_lo, (lo + hi) / 2


def sample_key_download_time(rng, params: WorkloadParams = DEFAULT_PARAMS) -> float:
    """Seconds needed to fetch the public key from a responsive proxy."""
    sigma_lo, sigma_hi = key_download_sigmas(params)
    m = params.key_download_median_s
    upper = rng.random() < 0.5
    while True:
        z = abs(rng.normalvariate(0.0, 1.0))
        if upper:
            x = m * math.exp(sigma_hi * z)
            if x <= params.key_download_max_s:
                return x
        else:
            x = m * math.exp(-sigma_lo * z)
            if x >= params.key_download_min_s:
                return x


# -- proxy lists and DGA ----------------------------------------------------


def _label(rng, lo: int, hi: int) -> str:
    return "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(lo, hi)))


def gen_proxy_list(rng, params: WorkloadParams = DEFAULT_PARAMS, slot: int = 0) -> list[tuple[str, ipaddress.IPv4Address]]:
    """Proxy (domain, ip) list: binomial length with the configured mean, at least 1.

    ``slot`` picks a disjoint block of the proxy address pool so different
    infected hosts never share addresses.
    """
    p = params.proxy_list_len_mean / params.proxy_list_len_max
    # random.binomialvariate only exists from 3.12
    n = max(1, sum(rng.random() < p for _ in range(params.proxy_list_len_max)))
    base = int(PROXY_POOL.network_address) + 256 * (slot + 1)
    out = []
    seen = set()
    while len(out) < n:
        domain = f"{_label(rng, 4, 10)}-{_label(rng, 3, 8)}.{rng.choice(_PROXY_TLDS)}"
        if domain in seen:
            continue
        seen.add(domain)
        out.append((domain, ipaddress.IPv4Address(base + len(out) + 1)))
    return out


def dga_domains(dga_seed: int, day: int, count: int = 13) -> list[str]:
    """Deterministic pseudo-DGA batch for one day."""
    out = []
    for i in range(count):
        digest = hashlib.sha256(f"{dga_seed}:{day}:{i}".encode()).digest()
        length = 15 + digest[0] % 6
        label = "".join(chr(ord("a") + b % 26) for b in digest[1 : 1 + length])
        out.append(label + ".ru")
    return out


def dga_registered_index(dga_seed: int, day: int, count: int = 13) -> int:
    """Which domain of the day's batch the operators actually registered."""
    digest = hashlib.sha256(f"registered:{dga_seed}:{day}".encode()).digest()
    return digest[0] % count


def locky_hardcoded_ips(rng, params: WorkloadParams = DEFAULT_PARAMS, slot: int = 0) -> list[ipaddress.IPv4Address]:
    n = rng.randint(params.locky_hardcoded_min, params.locky_hardcoded_max)
    base = int(LOCKY_HARDCODED_POOL.network_address) + 8 * slot + 1
    return [ipaddress.IPv4Address(base + i) for i in range(n)]


def locky_cc_ip(slot: int, day: int) -> ipaddress.IPv4Address:
    return ipaddress.IPv4Address(int(CC_POOL.network_address) + 1 + (slot * 31 + day) % 250)


# -- host scripts -----------------------------------------------------------


@dataclass(frozen=True)
class Resolve:
    domain: str


@dataclass(frozen=True)
class Exchange:
    """One request/response pair with ``ip``; ``duration_us`` is the intended round trip."""

    ip: ipaddress.IPv4Address
    duration_us: int = 0
    label: str = ""


@dataclass(frozen=True)
class Sleep:
    us: int
    absolute: bool = False


@dataclass(frozen=True)
class Mark:
    kind: str
    info: dict = field(default_factory=dict, hash=False)


Script = Generator[object, object, None]


def _cc_session(ip, rng, exchanges: int, params: WorkloadParams, target: str):
    """Key download over ``exchanges`` POSTs; the key arrives with the second one."""
    total_us = round(sample_key_download_time(rng, params) * 1e6)
    share = total_us // exchanges
    for k in range(1, exchanges + 1):
        ok = yield Exchange(ip, share, f"post{k}")
        if not ok:
            return False
        if k == 2:
            yield Mark("key_download", {"target": target, "ip": str(ip)})
    yield Mark("encryption_started", {"target": target})
    return True


def cryptowall_behavior(host, rng, params: WorkloadParams = DEFAULT_PARAMS) -> Script:
    exchanges = params.exchanges_v3 if host.kind == "cryptowall_v3" else params.exchanges_v4
    ext = yield Resolve(EXT_IP_DOMAIN)
    if ext:
        yield Exchange(ext[0], 0, "ext_ip")
    for domain, _ in host.proxy_list:
        ips = yield Resolve(domain)
        if not ips:
            continue
        if (yield from _cc_session(ips[0], rng, exchanges, params, domain)):
            return
    # one pass over the list, no retries
    yield Mark("proxy_list_exhausted")


def locky_behavior(host, rng, params: WorkloadParams = DEFAULT_PARAMS) -> Script:
    for ip in host.hardcoded_ips:
        if (yield from _cc_session(ip, rng, params.locky_exchanges, params, str(ip))):
            return
    day_us = round(params.day_length_s * 1e6)
    day = 0
    while True:
        for domain in dga_domains(host.dga_seed, day, params.locky_dga_domains_per_day):
            ips = yield Resolve(domain)
            if ips and (yield from _cc_session(ips[0], rng, params.locky_exchanges, params, domain)):
                return
        day += 1
        yield Sleep(day * day_us, absolute=True)


def benign_behavior(host, rng, start_us: int, max_queries: Optional[int] = None) -> Script:
    period = max(1, round(1e6 / host.query_rate_hz))
    t = start_us + rng.randrange(period)
    i = 0
    while max_queries is None or i < max_queries:
        yield Sleep(t, absolute=True)
        yield Resolve(rng.choice(host.benign_domains))
        i += 1
        t += period
