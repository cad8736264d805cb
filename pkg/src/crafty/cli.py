"""Command line entry point: ``crafty {bench,fuzz,explore,recover}``.

Every flag can also be set through an environment variable named
``CRAFTY_`` plus the flag in upper case with dashes as underscores
(``--latency-ns`` becomes ``CRAFTY_LATENCY_NS``).  Flags on the command
line take precedence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path as FsPath

from .harness.bench import run_bench, to_csv, write_plot_data
from .harness.engines import DURABLE, ENGINES, recovery_for
from .harness.fuzz import explore, fuzz_crashes, reproduce
from .harness.runner import RunConfig, build
from .memory import dump_snapshot, load_snapshot
from .recovery import LogsMeta
from .scheduler import Schedule, Scheduler
from .system import Layout

ENV_PREFIX = "CRAFTY_"


def _names(allowed):
    def parse(text: str) -> list[str]:
        out = list(allowed) if text == "all" else [t for t in text.split(",") if t]
        bad = [t for t in out if t not in allowed]
        if bad or not out:
            raise argparse.ArgumentTypeError(
                f"expected a comma list of {', '.join(allowed)} (or 'all'), got {text!r}")
        return out
    return parse


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list of integers, got {text!r}")


def _run_args(p: argparse.ArgumentParser, engines=ENGINES) -> None:
    p.add_argument("--engine", choices=engines, default="crafty")
    p.add_argument("--workload", choices=("bank", "btree"), default="bank")
    p.add_argument("--contention", choices=("high", "medium", "none"), default="medium")
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--txns", type=int, default=25, help="transactions per thread")
    p.add_argument("--writes", type=int, default=10,
                   help="bank writes per transaction (two per transfer)")
    p.add_argument("--latency-ns", type=int, default=300, help="drain latency")
    p.add_argument("--log-capacity", type=int, default=4096)
    p.add_argument("--max-lag", type=int, default=10**6)
    p.add_argument("--p-zero", type=float, default=0.0,
                   help="probability of a spurious abort per transaction")


def _config(a, seed: int | None = None) -> RunConfig:
    return RunConfig(
        engine=a.engine, workload=a.workload, threads=a.threads, contention=a.contention,
        txns_per_thread=a.txns, seed=a.seed if seed is None else seed,
        latency_ns=a.latency_ns, log_capacity=a.log_capacity, max_lag=a.max_lag,
        p_zero=a.p_zero, transfers_per_txn=max(1, a.writes // 2),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crafty", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run benchmark configurations, emit CSV rows")
    _run_args(b)
    # engines and thread counts accept comma lists for sweeps
    for action in b._actions:
        if action.dest == "engine":
            action.choices, action.type, action.default = None, _names(ENGINES), ["crafty"]
        elif action.dest == "threads":
            action.type, action.default = _ints, [4]
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="CSV file (stdout if omitted)")
    b.add_argument("--normalized", action="store_true",
                   help="add throughput relative to 1-thread htm-only")
    b.add_argument("--plot-data", help="also write normalized series as JSON")
    b.add_argument("--crash-step", type=int,
                   help="stop at this scheduler step and dump a crash snapshot")
    b.add_argument("--snapshot", default="crash.bin",
                   help="snapshot file written with --crash-step")

    f = sub.add_parser("fuzz", help="crash-injection fuzzing against the replay oracle")
    _run_args(f, DURABLE)
    f.add_argument("--points", type=int, default=1000)
    f.add_argument("--seeds", type=int, default=10, help="run seeds 0..N-1")
    f.add_argument("--out-dir", default="crash-repro", help="reproducer schedules go here")
    f.add_argument("--reproduce", help="re-check one reproducer file instead")

    e = sub.add_parser("explore", help="every interleaving and crash point of a tiny instance")
    e.add_argument("--engine", choices=DURABLE, default="crafty")
    e.add_argument("--threads", type=int, default=2)
    e.add_argument("--txns", type=int, default=2)
    e.add_argument("--max-steps", type=int, help="only crash at steps up to this bound")
    e.add_argument("--budget", type=int, default=10**6, help="maximum schedules")
    e.add_argument("--time-limit", type=float, help="stop after this many seconds")
    e.add_argument("--retries", type=int, default=5, help="HTM attempts per phase before the lock")
    e.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("recover", help="recover a crash snapshot")
    r.add_argument("--snapshot", required=True)
    r.add_argument("--layout", help="layout JSON (default: <snapshot>.layout.json)")
    r.add_argument("--engine", choices=DURABLE, default="crafty")
    r.add_argument("--out", help="write the recovered image here")

    for p in (b, f, e, r):
        _env_defaults(p)
    return parser


def _env_defaults(p: argparse.ArgumentParser) -> None:
    for action in p._actions:
        if not action.option_strings or action.dest == "help":
            continue
        raw = os.environ.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise SystemExit(f"{ENV_PREFIX}{action.dest.upper()}={raw!r}: {e}")
        if action.choices is not None and value not in action.choices:
            raise SystemExit(f"{ENV_PREFIX}{action.dest.upper()}={raw!r} is not one of "
                             f"{', '.join(map(str, action.choices))}")
        action.default = value
        action.required = False


def cmd_bench(a) -> int:
    engines, threads = a.engine, a.threads
    if a.crash_step is not None:
        a.engine, a.threads = engines[0], threads[0]
        return _crash_dump(_config(a), a.crash_step, a.snapshot)
    reports = []
    for engine in engines:
        for n in threads:
            a.engine, a.threads = engine, n
            reports.append(run_bench(_config(a)))
    text = to_csv(reports, a.out, normalized=a.normalized)
    if a.plot_data:
        write_plot_data(reports, a.plot_data)
    if a.out is None:
        sys.stdout.write(text)
    return 0


def _crash_dump(cfg: RunConfig, step: int, path: str) -> int:
    sched = Scheduler(Schedule(seed=cfg.seed, crash_point=step, fallback=True))
    sc = build(cfg, sched)
    trace = sched.run(sc.thread_fns())
    snap = sc.system.mem.crash_snapshot(sched.evict_rng)
    dump_snapshot(snap, path)
    FsPath(path + ".layout.json").write_text(sc.layout.to_json())
    at = trace.halted_at if trace.halted_at is not None else len(trace.steps)
    print(f"snapshot {path} at step {at}, {len(sc.system.commits.txns)} commits, "
          f"clock {sc.system.clock.value}")
    return 0


def cmd_fuzz(a) -> int:
    if a.reproduce:
        res = reproduce(a.reproduce)
        print(("pass" if res.ok else "FAIL") + (f": {res.reason}" if res.reason else ""))
        return 0 if res.ok else 1
    rep = fuzz_crashes(_config(a, 0), a.points, range(a.seeds), a.out_dir)
    print(f"{rep.passed}/{rep.points} crash points recovered to a committed prefix "
          f"({rep.runs} runs, {rep.steps} steps)")
    for fl in rep.failures[:20]:
        print(f"  seed {fl.seed} step {fl.step}: {fl.reason} -> {fl.schedule_file}")
    return 0 if rep.ok else 1


def cmd_explore(a) -> int:
    cfg = RunConfig(engine=a.engine, threads=a.threads, txns_per_thread=a.txns,
                    transfers_per_txn=1, accounts=4, log_capacity=64,
                    evict_word_prob=0.0, seed=a.seed, retries=a.retries)
    rep = explore(cfg, budget=a.budget, max_steps=a.max_steps, time_limit=a.time_limit)
    print(f"{rep.schedules} schedules, {rep.crash_states} crash states, "
          f"{rep.checks} recoveries checked, {len(rep.failures)} failures "
          f"in {rep.seconds:.1f}s"
          + (" (budget exhausted)" if rep.budget_exhausted else "")
          + (" (time limit reached)" if rep.timed_out else ""))
    for steps, at, reason in rep.failures[:20]:
        print(f"  {steps} crash at {at}: {reason}")
    return 0 if rep.ok else 1


def cmd_recover(a) -> int:
    layout = Layout.from_json(FsPath(a.layout or a.snapshot + ".layout.json").read_text())
    snap = load_snapshot(a.snapshot)
    if snap.size != layout.size_words:
        print(f"snapshot has {snap.size} words, layout expects {layout.size_words}",
              file=sys.stderr)
        return 2
    rec = recovery_for(a.engine)(snap, LogsMeta.from_layout(layout))
    if a.out:
        dump_snapshot(rec.words, a.out)
    changed = int((rec.words != snap).sum())
    print(json.dumps({
        "frontier_ts": rec.rollback_frontier_ts if rec.rollback_frontier_ts != float("inf") else None,
        "words_restored": changed,
        "rolled_back": [{"tid": s.tid, "ts": s.ts, "entries": len(s.entries)}
                        for s in rec.rolled_back],
    }, indent=2))
    return 0


COMMANDS = {"bench": cmd_bench, "fuzz": cmd_fuzz, "explore": cmd_explore,
            "recover": cmd_recover}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
