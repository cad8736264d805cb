"""Throughput benchmarks in emulated time, and their CSV report.

Runs use the deterministic scheduler with a seeded random choice at every
yield point, so a (config, seed) pair always produces the same row.
Threads accumulate emulated nanoseconds for transactional accesses,
transaction boundaries and drains.  Elapsed time is the busiest thread's
total, except for the mutex-serialized baselines, whose critical sections
cannot overlap: there it is the sum over threads.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path as FsPath

from ..scheduler import Schedule, Scheduler
from .runner import RunConfig, build

COLUMNS = (
    "engine", "workload", "threads", "contention", "latency_ns", "seed", "txns",
    "via_redo", "via_validate", "via_sgl", "via_readonly",
    "htm_commits", "ab_conflict", "ab_capacity", "ab_explicit", "ab_zero",
    "flushes", "drains", "throughput",
)

SERIALIZED = ("undo", "redo")


@dataclass
class RunReport:
    engine: str
    workload: str
    threads: int
    contention: str
    latency_ns: int
    seed: int
    txns: int
    via_redo: int
    via_validate: int
    via_sgl: int
    via_readonly: int
    htm_commits: int
    ab_conflict: int
    ab_capacity: int
    ab_explicit: int
    ab_zero: int
    flushes: int
    drains: int
    # committed transactions per emulated second
    throughput: float
    elapsed_ns: int = 0

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in COLUMNS}


def elapsed_ns(engine_name: str, emulated: dict[int, int], threads: int) -> int:
    per_thread = [emulated.get(t, 0) for t in range(threads)]
    if engine_name in SERIALIZED:
        return sum(per_thread)
    return max(per_thread, default=0)


def run_bench(cfg: RunConfig) -> RunReport:
    """Run ``cfg`` to completion and collect its counters."""
    sched = Scheduler(Schedule(seed=cfg.seed))
    sc = build(cfg, sched)
    sched.run(sc.thread_fns())
    sys_ = sc.system
    es, hs, pc = sc.engine.stats, sys_.htm.stats, sys_.mem.counters
    txns = len(sys_.commits.txns) + es.via_readonly
    ns = elapsed_ns(cfg.engine, sys_.mem.emulated_ns, cfg.threads)
    return RunReport(
        engine=cfg.engine, workload=cfg.workload, threads=cfg.threads,
        contention=cfg.contention, latency_ns=cfg.latency_ns, seed=cfg.seed, txns=txns,
        via_redo=es.via_redo, via_validate=es.via_validate, via_sgl=es.via_sgl,
        via_readonly=es.via_readonly, htm_commits=hs.commits, ab_conflict=hs.conflict,
        ab_capacity=hs.capacity, ab_explicit=hs.explicit, ab_zero=hs.zero,
        flushes=pc.flushes, drains=pc.drains,
        throughput=txns * 1e9 / ns if ns else 0.0, elapsed_ns=ns,
    )


def _group(r: RunReport) -> tuple:
    return (r.workload, r.contention, r.latency_ns)


def normalize(reports) -> list[float | None]:
    """Throughput relative to single-thread htm-only of the same workload.

    ``None`` where no such reference run is among ``reports``.
    """
    ref = {_group(r): r.throughput for r in reports
           if r.engine == "htm-only" and r.threads == 1 and r.throughput}
    return [r.throughput / ref[_group(r)] if _group(r) in ref else None for r in reports]


def plot_data(reports) -> dict:
    """Series of (threads, normalized throughput) per engine and workload."""
    out: dict = {}
    for r, norm in zip(reports, normalize(reports)):
        key = f"{r.workload}/{r.contention}/{r.latency_ns}ns"
        value = norm if norm is not None else r.throughput
        out.setdefault(key, {}).setdefault(r.engine, []).append([r.threads, value])
    for series in out.values():
        for points in series.values():
            points.sort()
    return out


def write_plot_data(reports, path: str) -> None:
    FsPath(path).write_text(json.dumps(plot_data(reports), indent=2))


def to_csv(reports, path: str | None = None, normalized: bool = False) -> str:
    """Render reports with the fixed column set; also writes ``path`` if given."""
    reports = list(reports)
    cols = COLUMNS + (("normalized",) if normalized else ())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r, norm in zip(reports, normalize(reports)):
        row = r.row()
        row["throughput"] = f"{row['throughput']:.1f}"
        if normalized:
            row["normalized"] = "" if norm is None else f"{norm:.4f}"
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        FsPath(path).write_text(text)
    return text
