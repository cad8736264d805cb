"""Crash-injection fuzzing and exhaustive small-instance exploration.

Crashes are observed without stopping the run: a scheduler hook copies the
persisted view at the chosen step boundary (resolving in-flight words with a
seeded RNG), recovers it and checks the result against the prefix-replay
oracle.  Each failure is written out as a schedule file that replays the
same run up to the crash point.
"""

from __future__ import annotations

import hashlib
import random
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from ..recovery import LogsMeta, LogView
from ..scheduler import BudgetExceeded, Schedule, Scheduler, enumerate_all
from .bank import InvariantViolation
from .engines import DURABLE, recovery_for
from .oracle import prefix_replay_oracle
from .runner import RunConfig, Scenario, build


@dataclass
class CrashCheck:
    ok: bool
    reason: str = ""
    m: int | None = None
    frontier: float | None = None
    clock: int = 0


@dataclass
class FuzzFailure:
    seed: int
    step: int
    point: int
    reason: str
    schedule_file: str | None = None


@dataclass
class FuzzReport:
    points: int = 0
    passed: int = 0
    runs: int = 0
    steps: int = 0
    max_laps: int = 0
    stale_accepted: int = 0
    frontier_violations: int = 0
    min_frontier_slack: float = float("inf")
    failures: list[FuzzFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.passed == self.points and not self.failures

    def merge(self, other: "FuzzReport") -> None:
        self.points += other.points
        self.passed += other.passed
        self.runs += other.runs
        self.steps += other.steps
        self.max_laps = max(self.max_laps, other.max_laps)
        self.stale_accepted += other.stale_accepted
        self.frontier_violations += other.frontier_violations
        self.min_frontier_slack = min(self.min_frontier_slack, other.min_frontier_slack)
        self.failures += other.failures


class CrashChecker:
    """Recovers a snapshot of a live scenario and judges the result."""

    def __init__(self, sc: Scenario, check_stale: bool = False,
                 check_frontier: bool = False):
        if sc.cfg.engine not in DURABLE:
            raise ValueError(f"engine {sc.cfg.engine!r} is not crash consistent")
        self.sc = sc
        self.recover = recovery_for(sc.cfg.engine)
        self.meta = LogsMeta.from_layout(sc.layout)
        self.check_stale = check_stale
        self.check_frontier = check_frontier
        self.initial = sc.data(sc.initial)
        self.stale_accepted = 0

    def __call__(self, snapshot: np.ndarray) -> CrashCheck:
        sc = self.sc
        clock = sc.system.clock.value
        try:
            rec = self.recover(snapshot, self.meta)
        except Exception as e:  # recovery must never crash
            return CrashCheck(False, f"recovery raised {e!r}", clock=clock)
        res = prefix_replay_oracle(self.initial, sc.system.commits.txns,
                                   sc.data(rec.words), sc.data_origin)
        out = CrashCheck(res.ok, m=res.m, frontier=rec.rollback_frontier_ts, clock=clock)
        if not res.ok:
            out.reason = f"no prefix matches (closest differs in {res.closest} words)"
            return out
        try:
            sc.workload.check(rec.words, sc.layout)
        except InvariantViolation as e:
            return CrashCheck(False, str(e), res.m, rec.rollback_frontier_ts, clock)
        if self.check_stale and self._stale(snapshot, rec):
            return CrashCheck(False, "recovery accepted a stale-lap entry", res.m,
                              rec.rollback_frontier_ts, clock)
        if self.check_frontier and rec.rollback_frontier_ts < clock - sc.cfg.max_lag:
            return CrashCheck(False, f"frontier {rec.rollback_frontier_ts} lags clock {clock}",
                              res.m, rec.rollback_frontier_ts, clock)
        return out

    def _stale(self, snapshot: np.ndarray, rec) -> bool:
        """Did recovery use a log entry that is not the slot's latest content?

        Data entries are written once per lap, so an accepted entry must equal
        the volatile content.  A control entry may since have been
        overwritten with a later commit timestamp in the same lap.
        """
        vol = self.sc.system.mem.volatile
        base = self.meta.base
        bad = False
        for seq in rec.rolled_back:
            log = self.meta.logs[seq.tid]
            for slot, _addr, _old in seq.entries:
                i = (log.slot_addr(slot) - base) // 8
                if snapshot[i] != vol[i] or snapshot[i + 1] != vol[i + 1]:
                    bad = True
            i = (log.slot_addr(seq.control_slot) - base) // 8
            if snapshot[i] != vol[i] or snapshot[i + 1] > vol[i + 1]:
                bad = True
        if bad:
            self.stale_accepted += 1
        return bad


def _crash_rng(seed: int, step: int, point: int) -> random.Random:
    return random.Random((seed * 1_000_003 + step) * 7919 + point)


def _laps(sc: Scenario) -> int:
    io = _MemIO(sc.system.mem)
    return max(log.cursor(io) // log.capacity for log in sc.system.logs)


class _MemIO:
    def __init__(self, mem):
        self.mem = mem

    def get(self, addr: int) -> int:
        return self.mem.read_word(addr)


def fuzz_run(cfg: RunConfig, points: int, out_dir: str | None = None,
             check_stale: bool = False, check_frontier: bool = False) -> FuzzReport:
    """One seeded run observed at ``points`` uniformly drawn crash points."""
    dry = build(cfg, Scheduler(Schedule(seed=cfg.seed)))
    total = len(dry.system.sched.run(dry.thread_fns()).steps)
    pick = random.Random(cfg.seed ^ 0xC0FFEE)
    at: dict[int, list[int]] = {}
    for j in range(points):
        at.setdefault(pick.randint(0, total), []).append(j)

    sched = Scheduler(Schedule(seed=cfg.seed))
    sc = build(cfg, sched)
    checker = CrashChecker(sc, check_stale, check_frontier)
    report = FuzzReport(runs=1, steps=total)

    def observe(step, s):
        for j in at.get(step, ()):
            snap = sc.system.mem.crash_snapshot(_crash_rng(cfg.seed, step, j))
            res = checker(snap)
            report.points += 1
            if res.frontier is not None and res.frontier != float("inf"):
                report.min_frontier_slack = min(report.min_frontier_slack,
                                                res.frontier - (res.clock - cfg.max_lag))
            if res.ok:
                report.passed += 1
                continue
            if "frontier" in res.reason:
                report.frontier_violations += 1
            fail = FuzzFailure(cfg.seed, step, j, res.reason)
            if out_dir is not None:
                fail.schedule_file = write_reproducer(out_dir, cfg, s.trace.steps, step, j)
            report.failures.append(fail)

    sched.step_hooks.append(observe)
    sched.run(sc.thread_fns())
    report.max_laps = _laps(sc)
    report.stale_accepted = checker.stale_accepted
    return report


def fuzz_crashes(cfg: RunConfig, n_points: int, seeds=range(10), out_dir: str | None = None,
                 check_stale: bool = False, check_frontier: bool = False) -> FuzzReport:
    """Spread ``n_points`` crash points evenly over runs with the given seeds."""
    seeds = list(seeds)
    report = FuzzReport()
    for k, seed in enumerate(seeds):
        share = n_points // len(seeds) + (1 if k < n_points % len(seeds) else 0)
        run_cfg = RunConfig.from_json(cfg.to_json())
        run_cfg.seed = seed
        report.merge(fuzz_run(run_cfg, share, out_dir, check_stale, check_frontier))
    return report


# -- reproducers ------------------------------------------------------------


def write_reproducer(out_dir: str, cfg: RunConfig, steps, crash_step: int, point: int) -> str:
    d = FsPath(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"crash-seed{cfg.seed}-step{crash_step}-p{point}.sched"
    sched = Schedule(seed=cfg.seed, steps=list(steps), crash_point=crash_step)
    text = sched.to_text()
    header = f"# point {point}\n# config {cfg.to_json()}\n"
    path.write_text(header + text)
    return str(path)


def reproduce(path: str) -> CrashCheck:
    """Re-run a reproducer file up to its crash point and re-check recovery."""
    text = FsPath(path).read_text()
    cfg, point = None, 0
    for line in text.splitlines():
        if line.startswith("# config "):
            cfg = RunConfig.from_json(line[len("# config "):])
        elif line.startswith("# point "):
            point = int(line.split()[2])
    if cfg is None:
        raise ValueError(f"{path}: no config line")
    sched_spec = Schedule.from_text(text)
    sched = Scheduler(sched_spec)
    sc = build(cfg, sched)
    checker = CrashChecker(sc)
    sched.run(sc.thread_fns())
    snap = sc.system.mem.crash_snapshot(_crash_rng(cfg.seed, sched_spec.crash_point, point))
    return checker(snap)


# -- exhaustive exploration ---------------------------------------------------


@dataclass
class ExploreReport:
    schedules: int = 0
    crash_states: int = 0
    checks: int = 0
    failures: list[tuple[list[int], int, str]] = field(default_factory=list)
    budget_exhausted: bool = False
    timed_out: bool = False
    seconds: float = 0.0

    @property
    def complete(self) -> bool:
        return not self.budget_exhausted and not self.timed_out

    @property
    def ok(self) -> bool:
        return not self.failures and self.complete


def _resolutions(mem, rng: random.Random, extra: int):
    units = mem.in_flight_units()
    yield True
    if not units:
        return
    yield False
    for u in units:
        yield {u[0]}
        yield {v[0] for v in units if v is not u}
    for _ in range(extra):
        yield {u[0] for u in units if rng.random() < 0.5}


def _crash_state_key(sc: Scenario) -> bytes:
    mem = sc.system.mem
    h = hashlib.blake2b(mem.persisted.tobytes(), digest_size=16)
    for unit in mem.in_flight_units():
        for w in unit:
            h.update(b"w%d=%d;" % (w, int(mem.volatile[w])))
        h.update(b"|")
    for c in sorted(sc.system.commits.txns, key=lambda c: c.ts):
        h.update(repr((c.ts, sorted(c.writes.items()))).encode())
    return h.digest()


def explore(cfg: RunConfig | None = None, budget: int = 10**6, max_steps: int | None = None,
            random_resolutions: int = 8, time_limit: float | None = None) -> ExploreReport:
    """Every interleaving (at coarse yield points) crossed with every crash point.

    For each crash point, in-flight words are resolved all-new, all-old, each
    single word flipped either way, and a few random mixes.  Crash states
    are keyed by what a crash there can observe (persisted image, in-flight
    words and the commit history the oracle replays), so a state reached by
    many schedules is checked once.

    Enumeration uses sleep sets over per-step footprints, so schedules that
    differ only in the order of independent steps are run once; every
    reachable crash state is still checked.  ``time_limit`` (seconds) stops
    the search early and marks the report incomplete.
    """
    if cfg is None:
        cfg = RunConfig(threads=2, txns_per_thread=2, transfers_per_txn=1,
                        accounts=4, contention="medium", log_capacity=64, evict_word_prob=0.0)
    report = ExploreReport()
    seen_states: set[bytes] = set()

    def run_prefix(prefix, chooser):
        sched = Scheduler(Schedule(seed=cfg.seed, steps=list(prefix), fallback=True),
                          granularity="coarse", chooser=chooser, track_footprints=True)
        sc = build(cfg, sched)
        checker = CrashChecker(sc)

        def observe(step, s):
            if max_steps is not None and step > max_steps:
                return False
            key = _crash_state_key(sc)
            if key in seen_states:
                return None
            seen_states.add(key)
            report.crash_states += 1
            rng = random.Random(int.from_bytes(key[:8], "little"))
            for res in _resolutions(sc.system.mem, rng, random_resolutions):
                snap = sc.system.mem.crash_snapshot(resolve=res)
                out = checker(snap)
                report.checks += 1
                if not out.ok:
                    report.failures.append((list(s.trace.steps), step, out.reason))
            return None

        sched.step_hooks.append(observe)
        return sched.run(sc.thread_fns())

    start = time.monotonic()
    try:
        for _trace in enumerate_all(run_prefix, budget, reduce=True):
            report.schedules += 1
            if time_limit is not None and time.monotonic() - start > time_limit:
                report.timed_out = True
                break
    except BudgetExceeded:
        report.budget_exhausted = True
    report.seconds = time.monotonic() - start
    return report
