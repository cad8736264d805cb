from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crafty.scheduler import (
    BudgetExceeded,
    Deadlock,
    Footprint,
    IllegalStep,
    Schedule,
    ScheduleExhausted,
    Scheduler,
    enumerate_all,
    independent,
    interleaving_count,
)


def stepper(sched, tid, n, log):
    def run():
        for i in range(n):
            sched.yield_point("non-txn", f"{tid}.{i}")
            log.append((tid, i))
        return tid
    return run


def run_counts(counts, steps=None, seed=0, fallback=True, chooser=None, crash=None):
    sched = Scheduler(Schedule(seed=seed, steps=steps, fallback=fallback, crash_point=crash),
                      chooser=chooser)
    log = []
    tr = sched.run([stepper(sched, t, n, log) for t, n in enumerate(counts)])
    return tr, log


def _prefix_runner(counts):
    def run(prefix):
        sched = Scheduler(Schedule(steps=list(prefix)), chooser=lambda el, s: el[0])
        log = []
        tr = sched.run([stepper(sched, t, n, log) for t, n in enumerate(counts)])
        tr.results = log
        return tr
    return run


def test_interleaving_count_closed_form():
    assert interleaving_count([2, 2]) == 6
    assert interleaving_count([3, 2, 1]) == 60
    assert interleaving_count([5]) == 1


@pytest.mark.parametrize("counts", [(1, 1), (2, 2), (3, 2), (2, 1, 1)])
def test_enumeration_matches_closed_form(counts):
    # each thread takes n yields plus its start step
    traces = list(enumerate_all(_prefix_runner(counts)))
    assert len(traces) == interleaving_count([n + 1 for n in counts])
    assert len({tuple(t.steps) for t in traces}) == len(traces)


def test_enumeration_agrees_with_brute_force():
    counts = (2, 1)
    brute = set(itertools.permutations([0, 0, 0, 1, 1]))
    got = {tuple(t.steps) for t in enumerate_all(_prefix_runner(counts))}
    assert got == brute


def test_budget_exceeded():
    with pytest.raises(BudgetExceeded):
        list(enumerate_all(_prefix_runner((2, 2)), budget=1))


def test_forced_steps_are_followed():
    tr, log = run_counts([2, 2], steps=[1, 1, 1, 0, 0, 0])
    assert tr.steps == [1, 1, 1, 0, 0, 0]
    assert log == [(1, 0), (1, 1), (0, 0), (0, 1)]
    assert tr.results == [0, 1]


def test_ineligible_step_is_illegal():
    with pytest.raises(IllegalStep):
        run_counts([1, 1], steps=[0, 0, 0])


def test_exhausted_schedule_without_fallback():
    with pytest.raises(ScheduleExhausted):
        run_counts([2, 2], steps=[0], fallback=False)


def test_crash_point_halts_before_step():
    tr, log = run_counts([3, 3], seed=5, crash=4)
    assert tr.halted_at == 4 and len(tr.steps) == 4


def test_seeded_runs_are_deterministic():
    a, la = run_counts([4, 4, 4], seed=11)
    b, lb = run_counts([4, 4, 4], seed=11)
    assert a.steps == b.steps and la == lb


def test_wait_until_blocks_and_deadlock_detected():
    sched = Scheduler(Schedule(seed=0))
    flag = []

    def waiter():
        sched.wait_until(lambda: bool(flag), "flag")
        return "woke"

    def setter():
        sched.yield_point("non-txn")
        flag.append(1)

    tr = sched.run([waiter, setter])
    assert tr.results[0] == "woke"
    sched = Scheduler(Schedule(seed=0))
    with pytest.raises(Deadlock):
        sched.run([lambda: sched.wait_until(lambda: False, "never")])


def test_coarse_granularity_skips_access_yields():
    sched = Scheduler(Schedule(seed=0), granularity="coarse")

    def t():
        for _ in range(5):
            sched.yield_point("txn-access")
            sched.yield_point("flush")

    tr = sched.run([t])
    assert len(tr.steps) == 1


@settings(max_examples=100)
@given(st.integers(0, 2**31), st.one_of(st.none(), st.integers(0, 500)),
       st.lists(st.integers(0, 7), max_size=50))
def test_schedule_text_roundtrip(seed, crash, steps):
    s = Schedule(seed=seed, steps=steps, crash_point=crash)
    back = Schedule.from_text(s.to_text())
    assert (back.seed, back.crash_point, back.steps) == (seed, crash, steps)
    assert back.fallback is False


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(0, 1000))
def test_every_thread_runs_to_completion(counts, seed):
    tr, log = run_counts(counts, seed=seed)
    assert len(tr.steps) == sum(counts) + len(counts)
    for t, n in enumerate(counts):
        assert [i for tid, i in log if tid == t] == list(range(n))


def cell_program(plan):
    """Threads doing reads and increments on shared cells, with footprints.

    ``plan[t]`` lists (op, cell) pairs; returns a runner for enumerate_all
    that records every intermediate state, including what each thread read.
    """

    def run(prefix, chooser=None, states=None):
        sched = Scheduler(Schedule(steps=list(prefix)), chooser=chooser or (lambda el, s: el[0]),
                          track_footprints=chooser is not None)
        cells = {}
        seen = [[] for _ in plan]

        def thread(tid):
            def body():
                for op, c in plan[tid]:
                    sched.yield_point("non-txn")
                    fp = sched.footprint
                    if op == "r":
                        if fp is not None:
                            fp.read(c)
                        seen[tid].append(cells.get(c, 0))
                    else:
                        if fp is not None:
                            fp.write(c)
                        cells[c] = cells.get(c, 0) + tid + 1
            return body

        def snap(step, s):
            if states is not None:
                states.add((tuple(sorted(cells.items())), tuple(map(tuple, seen))))

        sched.step_hooks.append(snap)
        return sched.run([thread(t) for t in range(len(plan))])

    return run


def reachable(plan, reduce):
    """(completed runs, halted runs, reachable states)."""
    states = set()
    run = cell_program(plan)
    if reduce:
        traces = list(enumerate_all(lambda p, ch: run(p, ch, states), reduce=True))
    else:
        traces = list(enumerate_all(lambda p: run(p, None, states)))
    done = sum(t.halted_at is None for t in traces)
    return done, len(traces) - done, states


def test_footprint_independence():
    fp = Footprint()
    fp.read("x")
    fp.write(1)
    a = fp.take()
    assert a == (frozenset({"x"}), frozenset({1})) and fp.take() == (frozenset(), frozenset())
    assert independent(a, (frozenset({"x"}), frozenset({2})))
    assert not independent(a, (frozenset(), frozenset({"x"})))
    assert not independent(a, (frozenset({1}), frozenset()))


def test_sleep_sets_collapse_disjoint_threads():
    plan = [[("w", 0), ("w", 0)], [("w", 1), ("w", 1)]]
    done, halted, states = reachable(plan, True)
    full_done, full_halted, full_states = reachable(plan, False)
    # one completed run per equivalence class; sleep-blocked prefixes stop early
    assert done == 1 and halted > 0
    assert full_done == interleaving_count([3, 3]) and full_halted == 0
    assert states == full_states


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.tuples(st.sampled_from("rw"), st.integers(0, 2)),
                         min_size=1, max_size=3), min_size=2, max_size=3))
def test_sleep_sets_reach_every_state(plan):
    done, _, states = reachable(plan, True)
    full_done, _, full_states = reachable(plan, False)
    assert states == full_states
    assert done <= full_done
