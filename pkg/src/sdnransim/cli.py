"""Command-line entry point: ``sdnransim {ingest,bench-db,run,report}``.

Exit codes: 0 success, 1 operational failure, 2 success with warnings.
Diagnostics go to standard error at the level named by SDNRANSIM_LOG.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional
from xml.sax.saxutils import escape

from .blacklist_db import BlacklistDb, bench
from .simnet import CSV_HEADER, ConfigInvalid, run, sim_config_from_dict

log = logging.getLogger("sdnransim")

EXIT_OK, EXIT_FAIL, EXIT_WARN = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
SWEEP_KEYS = {"seeds", "policies", "db_sizes"}


class ColumnMissing(KeyError):
    pass


class EmptyInput(ValueError):
    pass


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, _):
        pass


def setup_logging() -> None:
    name = os.environ.get("SDNRANSIM_LOG", "warn").lower()
    level = LOG_LEVELS.get(name)
    if not any(isinstance(h, _StderrHandler) for h in log.handlers):
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)
    log.setLevel(level or logging.WARNING)
    if level is None:
        log.warning("SDNRANSIM_LOG=%r not one of %s; using warn", name, ",".join(LOG_LEVELS))


# -- ingest -----------------------------------------------------------------


def cmd_ingest(args) -> int:
    db_path = Path(args.db)
    try:
        db = BlacklistDb.load(db_path) if db_path.exists() else BlacklistDb()
        result = db.ingest_file(args.feed)
        db.snapshot(db_path)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"inserted={result.inserted} skipped={result.skipped}")
    return EXIT_WARN if result.skipped else EXIT_OK


# -- bench-db ---------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.3f}"


def cmd_bench_db(args) -> int:
    sizes = args.sizes
    if not sizes or sizes != sorted(sizes) or min(sizes) < 0 or args.batch < 0 or args.probes < 0:
        print("error: --sizes must be ascending non-negative integers; --batch/--probes >= 0", file=sys.stderr)
        return EXIT_FAIL
    out = sys.stdout
    out.write("size,insert_batch_ms,lookup_p50_us,lookup_p99_us\n")
    for size in sizes:
        row = bench(size, args.batch, args.probes, seed=args.seed)
        out.write(f"{row.size},{_fmt(row.insert_batch_ms)},{_fmt(row.lookup_p50_us)},{_fmt(row.lookup_p99_us)}\n")
        out.flush()
    return EXIT_OK


# -- run --------------------------------------------------------------------


def load_experiment(path) -> tuple[list, list, list, object]:
    """Parse an experiment file into (seeds, policies, db_sizes, base SimConfig)."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid("experiment config must be a JSON object")
    base = sim_config_from_dict({k: v for k, v in data.items() if k not in SWEEP_KEYS})
    seeds = data.get("seeds", [base.seed])
    policies = data.get("policies", [base.policy])
    db_sizes = data.get("db_sizes", [base.db_size])
    for name, axis in (("seeds", seeds), ("policies", policies), ("db_sizes", db_sizes)):
        if not isinstance(axis, list) or not axis:
            raise ConfigInvalid(f"{name} must be a nonempty list")
    # validate every cell before running anything
    for seed in seeds:
        for policy in policies:
            for size in db_sizes:
                if not isinstance(seed, int) or not isinstance(size, int):
                    raise ConfigInvalid("seeds and db_sizes must be integers")
                dataclasses.replace(base, seed=seed, policy=policy, db_size=size).validate()
    return seeds, policies, db_sizes, base


def _run_cell(cfg):
    trace, metrics = run(cfg)
    return metrics, trace.dumps()


def cmd_run(args) -> int:
    try:
        seeds, policies, db_sizes, base = load_experiment(args.config)
    except (ConfigInvalid, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    cells = [
        dataclasses.replace(base, seed=s, policy=p, db_size=d, hosts=[dataclasses.replace(h) for h in base.hosts])
        for s in seeds
        for p in policies
        for d in db_sizes
    ]
    log.info("running %d cells", len(cells))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_cell, cells, chunksize=4))
    else:
        results = [_run_cell(c) for c in cells]

    csv_text = CSV_HEADER + "\n" + "".join(m.csv_row() + "\n" for m, _ in results)
    alerts_text = "".join(a + "\n" for m, _ in results for a in m.alerts)
    try:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        Path(args.alerts).write_text(alerts_text, encoding="utf-8")
        if args.trace:
            with open(args.trace, "w", encoding="utf-8") as fh:
                for cfg, (_, trace_text) in zip(cells, results):
                    fh.write(f"# seed={cfg.seed} policy={cfg.policy} db_size={cfg.db_size}\n")
                    fh.write(trace_text)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    failures = sum(m.frame_outcomes.get("dropped_by_controller", 0) for m, _ in results)
    if failures:
        log.warning("%d frames were dropped by the controller", failures)
    print(f"rows={len(results)} alerts={alerts_text.count(chr(10))}")
    return EXIT_OK


# -- report -----------------------------------------------------------------


def _number(text: str) -> Optional[float]:
    try:
        return float(text)
    except ValueError:
        return None


def aggregate(rows: list[dict], x: str, y: str, series: str) -> dict[str, list[tuple[object, float]]]:
    """Mean of ``y`` per (series, x), skipping empty cells; x sorted numerically when possible."""
    if not rows:
        raise EmptyInput("no data rows")
    for col in (x, y, series):
        if col not in rows[0]:
            raise ColumnMissing(col)
    sums: dict[tuple[str, str], list[float]] = {}
    for row in rows:
        value = _number(row[y])
        if value is None:
            continue
        sums.setdefault((row[series], row[x]), []).append(value)
    out: dict[str, list] = {}
    for (s, xv), values in sums.items():
        out.setdefault(s, []).append((xv, sum(values) / len(values)))
    numeric = all(_number(xv) is not None for pts in out.values() for xv, _ in pts)
    for pts in out.values():
        pts.sort(key=lambda p: _number(p[0]) if numeric else p[0])
    return dict(sorted(out.items()))


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def render_svg(data: dict[str, list[tuple[object, float]]], x: str, y: str) -> str:
    width, height = 640, 400
    left, right, top, bottom = 70, 150, 20, 50
    xs_all = [xv for pts in data.values() for xv, _ in pts]
    numeric = all(_number(v) is not None for v in xs_all)
    if numeric:
        xnums = sorted({_number(v) for v in xs_all})
    else:
        xnums = sorted(set(xs_all))
    ys = [yv for pts in data.values() for _, yv in pts] or [0.0]
    y_lo, y_hi = min(0.0, min(ys)), max(ys)
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    y_hi *= 1.1 if y_hi > 0 else 1.0

    def px(v) -> float:
        if numeric:
            lo, hi = xnums[0], xnums[-1]
            frac = 0.5 if hi == lo else (_number(v) - lo) / (hi - lo)
        else:
            frac = 0.5 if len(xnums) == 1 else xnums.index(v) / (len(xnums) - 1)
        return left + frac * (width - left - right)

    def py(v: float) -> float:
        return top + (1 - (v - y_lo) / (y_hi - y_lo)) * (height - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
    ]
    for i in range(5):
        v = y_lo + (y_hi - y_lo) * i / 4
        parts.append(
            f'<text x="{left - 6}" y="{py(v) + 4:.1f}" font-size="11" text-anchor="end">{v:.3g}</text>'
        )
    for v in xnums:
        parts.append(
            f'<text x="{px(v):.1f}" y="{height - bottom + 16}" font-size="11" text-anchor="middle">{escape(str(v if not numeric else f"{v:g}"))}</text>'
        )
    parts.append(
        f'<text x="{(left + width - right) / 2}" y="{height - 10}" font-size="13" text-anchor="middle">{escape(x)}</text>'
    )
    parts.append(
        f'<text x="16" y="{(top + height - bottom) / 2}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {(top + height - bottom) / 2})">{escape(y)}</text>'
    )
    for i, (name, pts) in enumerate(data.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = [(px(xv), py(yv)) for xv, yv in pts]
        if len(coords) > 1:
            points = " ".join(f"{a:.1f},{b:.1f}" for a, b in coords)
            parts.append(
                f'<polyline class="series" data-series="{escape(name)}" points="{points}" fill="none" stroke="{color}" stroke-width="2"/>'
            )
        for a, b in coords:
            parts.append(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="3" fill="{color}"/>')
        ly = top + 16 * i + 10
        parts.append(f'<rect x="{width - right + 12}" y="{ly - 8}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{width - right + 28}" y="{ly + 1}" font-size="12">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_report(args) -> int:
    try:
        text = Path(args.input).read_text(encoding="utf-8")
        rows = list(csv.DictReader(io.StringIO(text)))
        data = aggregate(rows, args.x, args.y, args.series)
        Path(args.plot).write_text(render_svg(data, args.x, args.y), encoding="utf-8")
    except ColumnMissing as exc:
        print(f"error: column {exc.args[0]!r} not in {args.input}", file=sys.stderr)
        return EXIT_FAIL
    except (EmptyInput, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for name, pts in data.items():
        print(name + " " + " ".join(f"{xv}:{yv:.3f}" for xv, yv in pts))
    return EXIT_OK


# -- entry ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdnransim", description="SDN ransomware-mitigation testbed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest a domain feed into a blacklist snapshot")
    p.add_argument("--db", required=True)
    p.add_argument("--feed", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("bench-db", help="time batch inserts and lookups at several db sizes")
    p.add_argument("--sizes", required=True, type=_int_list)
    p.add_argument("--batch", type=int, default=1000)
    p.add_argument("--probes", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench_db)

    p = sub.add_parser("run", help="run a seeds x policies x db_sizes sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alerts", required=True)
    p.add_argument("--trace")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="plot a metrics CSV as SVG")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--plot", required=True)
    p.add_argument("--x", default="db_size")
    p.add_argument("--y", default="avg_dns_delay_ms")
    p.add_argument("--series", default="policy")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
