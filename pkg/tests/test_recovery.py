from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crafty.memory import NvmConfig, NvmImage
from crafty.recovery import LogsMeta, MalformedLog, recover, rollback_set, scan_sequences
from crafty.system import Layout
from crafty.undo_log import ThreadLog, encode_data


class MemIO:
    def __init__(self, mem):
        self.mem = mem

    def get(self, addr):
        return self.mem.read_word(addr)

    def put(self, addr, value):
        self.mem.write_word(addr, value)


class Machine:
    """A layout with hand-written logs; ``snap()`` persists everything."""

    def __init__(self, nthreads=2, capacity=8, data_words=8):
        self.layout = Layout(nthreads, data_words, log_capacity=capacity)
        self.mem = NvmImage(self.layout.base, self.layout.size_words, NvmConfig())
        self.io = MemIO(self.mem)
        self.logs = [ThreadLog(self.layout.log_meta(t), self.layout.meta_addr(t))
                     for t in range(nthreads)]

    def d(self, i):
        return self.layout.data_addr(i)

    def txn(self, tid, ts, writes):
        """Log old values, apply ``writes`` and close with a control entry."""
        for i, v in writes:
            self.logs[tid].append_data_entry(self.io, self.d(i), self.mem.read_word(self.d(i)))
            self.mem.write_word(self.d(i), v)
        self.logs[tid].append_control_entry(self.io, ts)

    def snap(self):
        self.mem.persist_all()
        return self.mem.persisted.copy()

    @property
    def meta(self):
        return LogsMeta.from_layout(self.layout)

    def data(self, snap):
        return snap[self.layout.data_slice()].tolist()


def test_fresh_logs_recover_to_identity():
    m = Machine()
    snap = m.snap()
    rec = recover(snap, m.meta)
    assert np.array_equal(rec.words, snap)
    assert rec.rollback_frontier_ts == math.inf
    assert scan_sequences(snap, m.meta) == {0: [], 1: []}


def test_rollback_set_uses_smallest_last_timestamp():
    # thread 0 last at 50; thread 1 at 40 then 60 -> roll back 50 and 60
    m = Machine()
    m.txn(1, 40, [(0, 4)])
    m.txn(0, 50, [(1, 5)])
    m.txn(1, 60, [(2, 6)])
    seqs = scan_sequences(m.snap(), m.meta)
    assert [s.ts for s in seqs[0]] == [50]
    assert [s.ts for s in seqs[1]] == [40, 60]
    assert sorted(s.ts for s in rollback_set(seqs)) == [50, 60]
    rec = recover(m.snap(), m.meta)
    assert rec.rollback_frontier_ts == 50
    assert m.data(rec.words)[:3] == [4, 0, 0]


def test_rollback_applies_newest_first_for_shared_words():
    m = Machine()
    m.txn(0, 10, [(0, 1)])
    m.txn(1, 12, [(0, 2)])
    m.txn(0, 14, [(0, 3)])
    m.txn(1, 16, [(0, 4)])
    rec = recover(m.snap(), m.meta)
    # frontier is 14: both 14 and 16 undone, restoring the value after 12
    assert m.data(rec.words)[0] == 2


def test_same_address_twice_restores_first_old_value():
    m = Machine(nthreads=1)
    m.txn(0, 2, [(0, 5), (0, 9)])
    rec = recover(m.snap(), m.meta)
    assert m.data(rec.words)[0] == 0


def test_unpersisted_tail_is_skipped():
    m = Machine(nthreads=1)
    m.txn(0, 2, [(0, 5)])
    m.mem.persist_all()
    log = m.logs[0]
    g = log.cursor(m.io)
    # a newer sequence whose data entry never reached persistence
    m.txn(0, 4, [(1, 7)])
    addr = log.meta.slot_addr(log.slot_of(g))
    m.mem.persisted[(addr - m.layout.base) // 8] = 0
    snap = m.mem.persisted.copy()
    snap[m.layout.data_slice()] = m.mem.volatile[m.layout.data_slice()]
    rec = recover(snap, m.meta)
    assert [s.ts for s in rec.rolled_back] == [2]
    assert m.data(rec.words)[:2] == [0, 7]


def test_recovery_is_idempotent_on_its_own_output():
    m = Machine()
    m.txn(0, 2, [(0, 1), (1, 1)])
    m.txn(1, 4, [(2, 3)])
    rec = recover(m.snap(), m.meta)
    again = recover(rec.words, m.meta)
    assert np.array_equal(again.words, rec.words)


def test_wrapped_log_ignores_previous_lap():
    m = Machine(nthreads=1, capacity=4)
    for k in range(5):
        m.txn(0, 2 + 2 * k, [(0, k + 1)])
    seqs = scan_sequences(m.snap(), m.meta)[0]
    # capacity 4 holds at most two two-entry sequences of the current lap
    assert [s.ts for s in seqs][-1] == 10
    assert all(s.ts >= 8 for s in seqs)
    rec = recover(m.snap(), m.meta)
    assert m.data(rec.words)[0] == 4


def test_snapshot_is_not_modified():
    m = Machine()
    m.txn(0, 2, [(0, 1)])
    snap = m.snap()
    before = snap.copy()
    recover(snap, m.meta)
    assert np.array_equal(snap, before)


def test_data_entry_outside_data_range_is_malformed():
    m = Machine(nthreads=1)
    m.txn(0, 2, [(0, 1)])
    log = m.logs[0]
    addr = log.meta.slot_addr(0)
    w0, w1 = encode_data(m.layout.log_start, 0, 1)
    m.mem.write_word(addr, w0)
    m.mem.write_word(addr + 8, w1)
    with pytest.raises(MalformedLog):
        recover(m.snap(), m.meta)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.lists(
    st.tuples(st.integers(0, 7), st.integers(1, 1000)), min_size=1, max_size=3)),
    min_size=1, max_size=6))
def test_recovery_yields_state_at_frontier(txns):
    # serial history with increasing timestamps; the result must equal the
    # state right before the first rolled-back transaction
    m = Machine(capacity=64)
    states = [m.data(m.mem.volatile)]
    for k, (tid, writes) in enumerate(txns):
        m.txn(tid, 2 * (k + 1), writes)
        states.append(m.data(m.mem.volatile))
    rec = recover(m.snap(), m.meta)
    k = int(rec.rollback_frontier_ts) // 2 - 1
    assert m.data(rec.words) == states[k]
