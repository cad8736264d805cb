from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crafty.memory import (
    Misaligned,
    NvmConfig,
    NvmImage,
    OutOfRegion,
    WordState,
    dump_snapshot,
    load_snapshot,
)

BASE = 0x1000


def image(words=64, **kw) -> NvmImage:
    return NvmImage(BASE, words, NvmConfig(**kw))


def test_fresh_region_reads_zero():
    m = image()
    assert all(m.read_word(BASE + 8 * i) == 0 for i in range(64))


def test_write_then_read():
    m = image()
    m.write_word(BASE, 7)
    assert m.read_word(BASE) == 7
    assert m.read_persisted(BASE) == 0
    assert m.word_state(BASE) is WordState.DIRTY


def test_identity_write_leaves_state_alone():
    m = image()
    m.write_word(BASE, 0)
    assert m.word_state(BASE) is WordState.CLEAN
    m = image(skip_identical=False)
    m.write_word(BASE, 0)
    assert m.word_state(BASE) is WordState.DIRTY


def test_addressing_errors():
    m = image()
    with pytest.raises(Misaligned):
        m.read_word(BASE + 4)
    with pytest.raises(OutOfRegion):
        m.write_word(BASE + 8 * 64, 1)
    with pytest.raises(OutOfRegion):
        m.read_word(BASE - 8)


def test_last_writer_wins_after_flush_and_drain():
    m = image()
    m.write_word(BASE, 1)
    m.write_word(BASE, 2)
    m.flush_line(BASE, tid=0)
    m.drain(0)
    assert m.read_persisted(BASE) == 2
    assert m.word_state(BASE) is WordState.CLEAN


def test_flush_of_clean_line_still_counts():
    m = image()
    m.flush_line(BASE, 0)
    assert m.counters.flushes == 1
    assert not m.has_pending(0)


def test_drain_without_pending_charges_latency_only():
    m = image(drain_latency_ns=300)
    m.drain(3)
    assert m.counters.drains == 1
    assert m.emulated_ns[3] == 300
    assert not m.persisted.any()


def test_one_drain_covers_many_flushed_words():
    m = image(drain_latency_ns=100)
    for i in range(10):
        m.write_word(BASE + 8 * i, i + 1)
    m.flush_line(BASE, 0)
    m.flush_line(BASE + 64, 0)
    m.drain(0)
    assert [m.read_persisted(BASE + 8 * i) for i in range(10)] == list(range(1, 11))
    assert m.counters.drains == 1 and m.emulated_ns[0] == 100


def test_drain_only_covers_own_flushes():
    m = image()
    m.write_word(BASE, 5)
    m.flush_line(BASE, tid=1)
    m.drain(0)
    assert m.read_persisted(BASE) == 0
    assert m.word_state(BASE) is WordState.FLUSH_PENDING
    m.drain(1)
    assert m.read_persisted(BASE) == 5


def test_drain_charge_to_other_id():
    m = image(drain_latency_ns=300)
    m.write_word(BASE, 5)
    m.flush_line(BASE, tid=-1)
    m.drain(-1, charge_to=2)
    assert m.read_persisted(BASE) == 5
    assert m.emulated_ns == {2: 300}


def test_write_after_flush_is_not_covered_by_that_flush():
    m = image()
    m.write_word(BASE, 1)
    m.flush_line(BASE, 0)
    m.write_word(BASE, 2)
    m.drain(0)
    assert m.read_persisted(BASE) == 1
    assert m.word_state(BASE) is WordState.DIRTY


@pytest.mark.parametrize("latency", [100, 300])
def test_latency_changes_time_not_data(latency):
    m = image(drain_latency_ns=latency)
    m.write_word(BASE, 9)
    m.flush_line(BASE, 0)
    m.drain(0)
    assert m.read_persisted(BASE) == 9
    assert m.emulated_ns[0] == latency


def test_fence_charges_only_with_pending_flushes():
    m = image()
    m.fence(0)
    assert m.counters.drains == 0
    m.write_word(BASE, 1)
    m.flush_line(BASE, 0)
    m.fence(0)
    assert m.counters.drains == 1 and m.read_persisted(BASE) == 1


def test_dirty_word_crash_resolutions_are_exactly_old_and_new():
    # enumerate both resolutions of a single in-flight word
    m = image()
    m.write_word(BASE, 7)
    outcomes = {int(m.crash_snapshot(resolve=r)[0]) for r in (True, False)}
    assert outcomes == {0, 7}
    assert len(m.in_flight_units()) == 1


def test_flushed_word_may_or_may_not_survive_a_crash():
    m = image()
    m.write_word(BASE, 7)
    m.flush_line(BASE, 0)
    seen = {int(m.crash_snapshot(random.Random(s))[0]) for s in range(64)}
    assert seen == {0, 7}


def test_drained_word_always_survives():
    m = image()
    m.write_word(BASE, 7)
    m.flush_line(BASE, 0)
    m.drain(0)
    assert all(m.crash_snapshot(random.Random(s))[0] == 7 for s in range(32))


def test_clean_crash_equals_volatile():
    m = image()
    m.write_word(BASE, 3)
    m.persist_all()
    assert np.array_equal(m.crash_snapshot(random.Random(0)), m.volatile)


def test_eviction_is_seed_deterministic():
    def evicted(seed):
        m = image(evict_word_prob=0.5)
        for i in range(32):
            m.write_word(BASE + 8 * i, i + 1)
        m.background_evict(random.Random(seed))
        return m.persisted.copy()

    assert np.array_equal(evicted(4), evicted(4))
    assert image().background_evict(random.Random(0)) == 0


def test_eviction_reaches_both_outcomes_over_seeds():
    results = set()
    for seed in range(1000):
        m = image(evict_word_prob=0.05)
        m.write_word(BASE, 1)
        m.background_evict(random.Random(seed))
        results.add(m.read_persisted(BASE))
    assert results == {0, 1}


def test_eviction_converges_under_quiescence():
    m = image(evict_word_prob=0.3)
    for i in range(40):
        m.write_word(BASE + 8 * i, i + 100)
    rng = random.Random(1)
    for _ in range(200):
        m.background_evict(rng)
    assert np.array_equal(m.persisted, m.volatile)
    assert not m.dirty_words()


def test_line_granularity_persists_whole_lines():
    m = image(granularity="line")
    m.write_word(BASE, 1)
    m.write_word(BASE + 8, 2)
    assert len(m.in_flight_units()) == 1
    snaps = {tuple(m.crash_snapshot(random.Random(s))[:2]) for s in range(32)}
    assert snaps == {(0, 0), (1, 2)}


def test_snapshot_file_roundtrip(tmp_path):
    m = image()
    m.write_word(BASE + 8, (1 << 64) - 1)
    m.persist_all()
    path = tmp_path / "snap.bin"
    dump_snapshot(m.persisted, path)
    assert path.stat().st_size == 64 * 8
    assert np.array_equal(load_snapshot(path), m.persisted)


ops = st.lists(st.tuples(st.sampled_from(["w", "f", "d", "e"]),
                         st.integers(0, 15), st.integers(0, 3), st.integers(0, 2**64 - 1)),
               max_size=60)


@settings(max_examples=150, deadline=None)
@given(ops, st.integers(0, 2**32))
def test_crash_snapshot_words_are_old_or_new(seq, seed):
    m = image(words=16)
    rng = random.Random(seed)
    for op, w, tid, v in seq:
        a = BASE + 8 * w
        if op == "w":
            m.write_word(a, v)
        elif op == "f":
            m.flush_line(a, tid)
        elif op == "d":
            m.drain(tid)
        else:
            m.background_evict(rng)
    before = m.persisted.copy()
    snap = m.crash_snapshot(rng)
    for i in range(16):
        assert snap[i] in (before[i], m.volatile[i])


@settings(max_examples=100, deadline=None)
@given(ops)
def test_drain_leaves_no_flush_pending_for_that_thread(seq):
    m = image(words=16)
    for op, w, tid, v in seq:
        a = BASE + 8 * w
        if op == "w":
            m.write_word(a, v)
        elif op == "f":
            m.flush_line(a, tid)
    flushed = {w for p in [m._pending.get(0)] if p for w in p.words}
    m.drain(0)
    for w in flushed:
        state = m.word_state(BASE + 8 * w)
        assert state is not WordState.FLUSH_PENDING or any(
            w in p.words for t, p in m._pending.items() if t != 0)
