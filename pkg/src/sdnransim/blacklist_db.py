"""Blacklist of known ransomware proxy / C&C domains.

Exact-match, hash-indexed, canonical text forms only.  Feed files are
UTF-8 lines with ``#`` comments; for CSV feeds the first comma-separated
field is the domain.  Snapshots are a header line followed by the sorted
domains, written atomically.
"""

from __future__ import annotations

import logging
import os
import random
import statistics
import string
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

from .dns_codec import DnsError, DomainName, MalformedDomain, canonicalize

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = "sdnransim-blacklist v1"


class HeaderMismatch(ValueError):
    pass


class CountMismatch(ValueError):
    pass


@dataclass
class IngestResult:
    inserted: int = 0
    skipped: int = 0
    errors: list[tuple[int, str, str]] = field(default_factory=list)


@dataclass
class BatchResult:
    elapsed: float
    inserted: int
    errors: list[tuple[str, str]] = field(default_factory=list)


NameLike = Union[str, bytes, DomainName]


class BlacklistDb:
    """Set of canonical domain names.

    Readers never take the lock; a batch is canonicalized first and then
    published with a single set update under the writer lock, after which
    ``generation`` is bumped.
    """

    def __init__(self, domains: Iterable[NameLike] = ()):
        self._domains: set[str] = set()
        self._lock = threading.Lock()
        self.generation = 0
        self.source_feeds: list[tuple[str, int, float]] = []
        self.errors: list[tuple[str, str]] = []
        if domains:
            self.insert_batch(domains, instrument=False)

    def __len__(self) -> int:
        return len(self._domains)

    def __iter__(self):
        return iter(sorted(self._domains))

    def __contains__(self, name: NameLike) -> bool:
        return self.contains(name)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlacklistDb):
            return NotImplemented
        return self._domains == other._domains

    def copy(self) -> "BlacklistDb":
        clone = BlacklistDb()
        clone._domains = set(self._domains)
        return clone

    def contains(self, name: NameLike) -> bool:
        if isinstance(name, DomainName):
            return str(name) in self._domains
        if isinstance(name, bytes):
            name = name.decode("ascii", "replace")
        # anything non-canonical that survives this cannot be a member anyway
        key = name.strip().lower()
        if key.endswith("."):
            key = key[:-1]
        return key in self._domains

    def insert(self, name: NameLike) -> bool:
        key = canonicalize(name)
        if not key:
            raise MalformedDomain("the root name cannot be blacklisted")
        with self._lock:
            if key in self._domains:
                return False
            self._domains.add(key)
            self.generation += 1
        return True

    def insert_batch(self, names: Iterable[NameLike], instrument: bool = True) -> BatchResult:
        """Insert every valid name; malformed entries are recorded and skipped.

        With ``instrument`` the returned ``elapsed`` is the wall-clock
        duration of the whole batch in seconds, otherwise 0.
        """
        start = time.perf_counter() if instrument else 0.0
        keys = []
        errors = []
        for name in names:
            try:
                key = canonicalize(name)
            except DnsError as exc:
                errors.append((str(name), str(exc)))
                continue
            if not key:
                errors.append((str(name), "root name"))
                continue
            keys.append(key)
        with self._lock:
            before = len(self._domains)
            self._domains.update(keys)
            inserted = len(self._domains) - before
            self.generation += 1
        elapsed = time.perf_counter() - start if instrument else 0.0
        self.errors.extend(errors)
        return BatchResult(elapsed, inserted, errors)

    def replace_all(self, names: Iterable[NameLike]) -> None:
        """The only way to delete: swap in a complete new set."""
        fresh = BlacklistDb(names)
        with self._lock:
            self._domains = fresh._domains
            self.generation += 1

    # -- feeds --------------------------------------------------------------

    def ingest_feed(self, text: Union[str, bytes]) -> IngestResult:
        if isinstance(text, bytes):
            text = text.decode("utf-8", "replace")
        result = IngestResult()
        keys = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            field_ = line.split(",", 1)[0].strip()
            try:
                key = canonicalize(field_)
                if not key:
                    raise MalformedDomain("empty domain")
            except DnsError as exc:
                result.skipped += 1
                result.errors.append((lineno, line, str(exc)))
                continue
            keys.append(key)
        with self._lock:
            before = len(self._domains)
            self._domains.update(keys)
            result.inserted = len(self._domains) - before
            self.generation += 1
        for lineno, line, reason in result.errors:
            log.warning("feed line %d skipped (%s): %r", lineno, reason, line)
        return result

    def ingest_file(self, path: Union[str, os.PathLike]) -> IngestResult:
        data = Path(path).read_bytes()
        result = self.ingest_feed(data)
        self.source_feeds.append((str(path), result.inserted, time.time()))
        return result

    # -- persistence --------------------------------------------------------

    def snapshot(self, path: Union[str, os.PathLike]) -> None:
        path = Path(path)
        domains = sorted(self._domains)
        body = f"{SNAPSHOT_MAGIC} {len(domains)}\n" + "".join(d + "\n" for d in domains)
        fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(body)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except FileNotFoundError:
                pass
            raise

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "BlacklistDb":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise HeaderMismatch(f"{path}: empty file")
        magic, _, count = lines[0].rpartition(" ")
        if magic != SNAPSHOT_MAGIC or not count.isdigit():
            raise HeaderMismatch(f"{path}: unexpected header {lines[0]!r}")
        domains = [line for line in lines[1:] if line]
        if len(domains) != int(count):
            raise CountMismatch(f"{path}: header says {count}, file holds {len(domains)}")
        db = cls()
        db._domains = {canonicalize(d) for d in domains}
        if len(db._domains) != len(domains):
            raise CountMismatch(f"{path}: duplicate entries")
        return db


# -- benchmarking -----------------------------------------------------------

_TLDS = ("com", "net", "org", "info", "biz", "ru", "de", "pl", "top", "xyz")


def synth_domains(count: int, seed: int = 0, prefix: str = "") -> list[str]:
    """Deterministic, distinct, syntactically valid domain names."""
    rng = random.Random(f"synth:{seed}:{prefix}")
    letters = string.ascii_lowercase + string.digits
    out = []
    seen = set()
    while len(out) < count:
        label = "".join(rng.choice(letters) for _ in range(rng.randint(6, 14)))
        name = f"{prefix}{label}.{rng.choice(_TLDS)}"
        if name not in seen:
            seen.add(name)
            out.append(name)
    return out


def lookup_timings_ns(db: BlacklistDb, probes: list[str]) -> list[int]:
    clock = time.perf_counter_ns
    contains = db.contains
    out = []
    append = out.append
    for probe in probes:
        t0 = clock()
        contains(probe)
        append(clock() - t0)
    return out


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile, ``q`` in [0, 100]."""
    if not values:
        raise ValueError("no values")
    ordered = sorted(values)
    rank = max(1, -(-len(ordered) * q // 100))
    return ordered[int(rank) - 1]


@dataclass
class BenchRow:
    size: int
    insert_batch_ms: float
    lookup_p50_us: Optional[float]
    lookup_p99_us: Optional[float]


def bench(size: int, batch: int, probes: int, seed: int = 0, repeats: int = 5) -> BenchRow:
    """Time a batch insert into a ``size``-entry db and ``probes`` lookups.

    The insert is repeated on fresh copies and the median kept; inputs come
    from a fixed seed so runs are comparable across machines.
    """
    base = BlacklistDb(synth_domains(size, seed, "base-"))
    fresh = synth_domains(batch, seed, "new-")
    timings = []
    for _ in range(max(1, repeats)):
        db = base.copy()
        timings.append(db.insert_batch(fresh).elapsed)
    insert_ms = statistics.median(timings) * 1e3

    p50 = p99 = None
    if probes:
        rng = random.Random(f"probe:{seed}")
        members = list(base._domains) or ["absent.example"]
        probe_names = [
            rng.choice(members) if rng.random() < 0.5 else f"miss{rng.randrange(10**9)}.example"
            for _ in range(probes)
        ]
        ns = lookup_timings_ns(base, probe_names)
        p50 = percentile(ns, 50) / 1e3
        p99 = percentile(ns, 99) / 1e3
    return BenchRow(size, insert_ms, p50, p99)
