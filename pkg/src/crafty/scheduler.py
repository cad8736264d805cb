"""Deterministic cooperative scheduling and crash-point control.

Logical threads run as greenlets multiplexed on one real thread.  Every
instrumented operation calls :meth:`Scheduler.yield_point`, handing control
back to the scheduler, which picks the next thread according to a
:class:`Schedule`.  Between two scheduling decisions a thread runs
atomically, so a run is a pure function of (program, schedule, config).

A *step* is one such atomic segment.  Crash points are step boundaries:
crash point ``i`` is the instant before step ``i`` runs; ``len(steps)`` is
the instant after the program finished.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import greenlet

# yield-point taxonomy
TXN_BEGIN = "txn-begin"
TXN_ACCESS = "txn-access"
TXN_COMMIT = "txn-commit"
NONTX = "non-txn"
FLUSH = "flush"
DRAIN = "drain"
WAIT = "wait"
START = "start"


class ScheduleExhausted(Exception):
    pass


class BudgetExceeded(Exception):
    pass


class Deadlock(Exception):
    pass


class IllegalStep(Exception):
    pass


@dataclass
class Schedule:
    """How to pick threads.  Serializable as one step per line.

    ``steps`` forces the thread chosen at each decision; once it runs out the
    scheduler falls back to seeded random choices when ``fallback`` is set,
    otherwise raises :class:`ScheduleExhausted`.
    """

    seed: int = 0
    steps: list[int] | None = None
    crash_point: int | None = None
    fallback: bool = True

    def to_text(self) -> str:
        lines = [f"# seed {self.seed}"]
        if self.crash_point is not None:
            lines.append(f"# crash {self.crash_point}")
        lines.extend(str(s) for s in self.steps or [])
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Schedule":
        seed, crash, steps = 0, None, []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts[:1] == ["seed"]:
                    seed = int(parts[1])
                elif parts[:1] == ["crash"]:
                    crash = int(parts[1])
                continue
            steps.append(int(line))
        return cls(seed=seed, steps=steps, crash_point=crash, fallback=False)


@dataclass
class ExecutionTrace:
    steps: list[int] = field(default_factory=list)
    labels: list[tuple[str, str]] = field(default_factory=list)
    # eligible threads at each decision (used by enumeration)
    eligible_sets: list[tuple[int, ...]] = field(default_factory=list)
    # (reads, writes) of each step, filled when the scheduler tracks them
    footprints: list[tuple[frozenset, frozenset]] = field(default_factory=list)
    halted_at: int | None = None
    results: list = field(default_factory=list)


class Footprint:
    """Shared state touched during the current step.

    Keys are cache-line numbers or names of other shared objects
    (``"clock"``, ``"alloc"``).  Components record into it when the
    scheduler tracks footprints; enumeration uses them to skip reorderings
    of independent steps.
    """

    __slots__ = ("reads", "writes")

    def __init__(self):
        self.reads: set = set()
        self.writes: set = set()

    def read(self, key) -> None:
        self.reads.add(key)

    def write(self, key) -> None:
        self.writes.add(key)

    def take(self) -> tuple[frozenset, frozenset]:
        out = (frozenset(self.reads), frozenset(self.writes))
        self.reads.clear()
        self.writes.clear()
        return out


def independent(a: tuple[frozenset, frozenset], b: tuple[frozenset, frozenset]) -> bool:
    """Two steps commute unless one writes something the other touches."""
    (ra, wa), (rb, wb) = a, b
    return wa.isdisjoint(rb) and wa.isdisjoint(wb) and wb.isdisjoint(ra)


class _Halt(greenlet.GreenletExit):
    """Unwinds a logical thread after a crash halted the run."""


class _Logical:
    __slots__ = ("tid", "glet", "pending", "done", "blocked", "result")

    def __init__(self, tid: int, glet):
        self.tid = tid
        self.glet = glet
        self.pending: tuple[str, str] = (START, "")
        self.done = False
        self.blocked: Callable[[], bool] | None = None
        self.result = None


class Scheduler:
    """Cooperative scheduler.

    ``granularity`` selects which yield kinds are scheduling points:
    ``"fine"`` yields before every transactional access as well;
    ``"coarse"`` only at transaction boundaries and non-transactional
    operations, which keeps exhaustive enumeration tractable.
    """

    def __init__(self, schedule: Schedule | None = None, granularity: str = "fine",
                 chooser: Callable[[Sequence[int], "Scheduler"], int | None] | None = None,
                 track_footprints: bool = False):
        self.schedule = schedule or Schedule()
        self.footprint = Footprint() if track_footprints else None
        self.granularity = granularity
        self.chooser = chooser
        self.rng = random.Random(self.schedule.seed)
        self.evict_rng = random.Random((self.schedule.seed << 1) ^ 0x5EED)
        self._threads: list[_Logical] = []
        self._current: _Logical | None = None
        self._main = None
        self.step = 0
        self.trace: ExecutionTrace | None = None
        self._halting = False
        self.step_hooks: list[Callable[[int, "Scheduler"], bool | None]] = []
        self._skip = {TXN_ACCESS, FLUSH, DRAIN} if granularity == "coarse" else set()

    # -- called from logical threads -----------------------------------

    @property
    def active(self) -> bool:
        return (self._main is not None and not self._halting
                and greenlet.getcurrent() is not self._main)

    @property
    def current_tid(self) -> int | None:
        return self._current.tid if self._current is not None else None

    def yield_point(self, kind: str, label: str = "") -> None:
        if not self.active or kind in self._skip:
            return
        me = self._current
        me.pending = (kind, label)
        self._main.switch()

    def wait_until(self, pred: Callable[[], bool], label: str = "") -> None:
        """Block the calling logical thread until ``pred()`` holds."""
        if not self.active:
            if not pred():
                raise Deadlock(f"wait on {label!r} outside scheduler")
            return
        while not pred():
            me = self._current
            me.blocked = pred
            me.pending = (WAIT, label)
            self._main.switch()
        self._current.blocked = None

    # -- driver --------------------------------------------------------

    def pending(self, tid: int) -> tuple[str, str]:
        return self._threads[tid].pending

    def eligible(self) -> list[int]:
        out = []
        for t in self._threads:
            if t.done:
                continue
            if t.blocked is not None and not t.blocked():
                continue
            out.append(t.tid)
        return out

    def _choose(self, eligible: list[int], trace: ExecutionTrace) -> int | None:
        i = len(trace.steps)
        steps = self.schedule.steps
        if steps is not None and i < len(steps):
            tid = steps[i]
            if tid not in eligible:
                raise IllegalStep(f"step {i}: thread {tid} not eligible ({eligible})")
            return tid
        if steps is not None and not self.schedule.fallback:
            raise ScheduleExhausted(f"schedule ended after {len(steps)} steps")
        if self.chooser is not None:
            return self.chooser(eligible, self)
        if len(eligible) == 1:
            return eligible[0]
        return self.rng.choice(eligible)

    def run(self, thread_fns: Sequence[Callable[[], object]]) -> ExecutionTrace:
        """Run the logical threads to completion (or to the crash point)."""
        trace = ExecutionTrace()
        self.trace = trace
        self._main = greenlet.getcurrent()
        self._threads = []
        for tid, fn in enumerate(thread_fns):
            self._threads.append(_Logical(tid, None))
            self._threads[tid].glet = greenlet.greenlet(self._wrap(tid, fn), parent=self._main)
        crash = self.schedule.crash_point
        try:
            while True:
                if crash is not None and self.step == crash:
                    self._fire_hooks(trace)
                    trace.halted_at = self.step
                    break
                eligible = self.eligible()
                if not eligible:
                    if all(t.done for t in self._threads):
                        self._fire_hooks(trace)
                        break
                    raise Deadlock("all live threads blocked")
                if self._fire_hooks(trace) is False:
                    trace.halted_at = self.step
                    break
                tid = self._choose(eligible, trace)
                if tid is None:  # the chooser ended the run here
                    trace.halted_at = self.step
                    break
                trace.steps.append(tid)
                trace.eligible_sets.append(tuple(eligible))
                t = self._threads[tid]
                trace.labels.append(t.pending)
                self._current = t
                fp = self.footprint
                if fp is not None:
                    fp.take()  # drop accesses made by hooks and predicates
                t.glet.switch()
                if fp is not None:
                    trace.footprints.append(fp.take())
                self._current = None
                self.step += 1
        finally:
            self._halting = True
            for t in self._threads:
                if not t.done and t.glet:
                    t.glet.throw(_Halt)
            self._main = None
            self._halting = False
        trace.results = [t.result for t in self._threads]
        return trace

    def _fire_hooks(self, trace: ExecutionTrace):
        ok = True
        for hook in self.step_hooks:
            if hook(self.step, self) is False:
                ok = False
        return ok

    def _wrap(self, tid: int, fn):
        def body():
            t = self._threads[tid]
            try:
                t.result = fn()
            finally:
                t.done = True
        return body


class NullScheduler:
    """Stand-in used when components run without deterministic scheduling."""

    active = False
    current_tid = None
    granularity = "fine"

    def yield_point(self, kind: str, label: str = "") -> None:
        return None

    def wait_until(self, pred, label: str = "") -> None:
        import time
        while not pred():
            time.sleep(0)


def interleaving_count(segment_counts: Sequence[int]) -> int:
    """Number of interleavings of independent threads with fixed step counts."""
    from math import factorial

    total = factorial(sum(segment_counts))
    for c in segment_counts:
        total //= factorial(c)
    return total


def enumerate_all(run_prefix: Callable[..., ExecutionTrace], budget: int = 10**6,
                  reduce: bool = False) -> Iterator[ExecutionTrace]:
    """Depth-first enumeration of every thread choice at every decision.

    ``run_prefix(steps)`` must execute the program forcing the given step
    prefix and then choosing the lowest eligible thread; it returns the
    trace.  Stateless: each schedule is a fresh re-execution.

    With ``reduce`` the search uses sleep sets: ``run_prefix(steps,
    chooser)`` must hand ``chooser`` to a footprint-tracking scheduler.
    Orderings that only swap independent steps are explored once, and runs
    whose every continuation is such a swap stop early.  Every reachable
    state is still visited, so crash-point coverage is unchanged.
    """
    if reduce:
        yield from _enumerate_sleep_sets(run_prefix, budget)
        return
    prefix: list[int] = []
    count = 0
    while True:
        count += 1
        if count > budget:
            raise BudgetExceeded(f"more than {budget} schedules")
        trace = run_prefix(prefix)
        yield trace
        # backtrack: deepest decision with an untried higher alternative
        steps, options_at = trace.steps, trace.eligible_sets
        nxt = None
        for i in range(len(steps) - 1, -1, -1):
            options = options_at[i]
            pos = options.index(steps[i])
            if pos + 1 < len(options):
                nxt = steps[:i] + [options[pos + 1]]
                break
        if nxt is None:
            return
        prefix = nxt


@dataclass
class _Node:
    eligible: tuple[int, ...]
    sleep: dict  # tid -> footprint of its pending step
    choice: int
    done: dict = field(default_factory=dict)


def _enumerate_sleep_sets(run_prefix, budget: int) -> Iterator[ExecutionTrace]:
    nodes: list[_Node] = []

    def chooser(eligible, sched):
        i = len(sched.trace.steps)
        sleep = {}
        if i:
            parent, fp = nodes[i - 1], sched.trace.footprints[i - 1]
            for pool in (parent.sleep, parent.done):
                for tid, other in pool.items():
                    if independent(other, fp):
                        sleep[tid] = other
        awake = [t for t in eligible if t not in sleep]
        if not awake:
            return None
        nodes.append(_Node(tuple(eligible), sleep, awake[0]))
        return awake[0]

    count = 0
    while True:
        count += 1
        if count > budget:
            raise BudgetExceeded(f"more than {budget} schedules")
        trace = run_prefix([n.choice for n in nodes], chooser)
        yield trace
        while nodes:
            j = len(nodes) - 1
            node = nodes[j]
            node.done[node.choice] = trace.footprints[j]
            rest = [t for t in node.eligible if t not in node.sleep and t not in node.done]
            if rest:
                node.choice = rest[0]
                break
            nodes.pop()
        if not nodes:
            return
