from __future__ import annotations

import pytest

from crafty.baselines import (
    HtmOnlyEngine,
    RedoBufferedEngine,
    UndoPerWriteEngine,
    recover_redo,
    recover_undo,
)
from crafty.engine import Path
from crafty.htm import HtmConfig
from crafty.memory import NvmConfig
from crafty.recovery import LogsMeta
from crafty.system import Layout, System, SystemConfig


def machine(cls, latency=300, **htm):
    lay = Layout(nthreads=1, data_words=16, log_capacity=64)
    sys_ = System(lay, SystemConfig(nvm=NvmConfig(drain_latency_ns=latency), htm=HtmConfig(**htm)))
    return lay, sys_, cls(sys_)


def write_n(lay, n):
    return lambda acc: [acc.write(lay.data_addr(i), i + 1) for i in range(n)]


def test_undo_drains_once_per_write_plus_commit():
    lay, sys_, eng = machine(UndoPerWriteEngine)
    out = eng.execute_transaction(0, write_n(lay, 5))
    assert out.path is Path.DIRECT
    assert sys_.mem.counters.drains == 6
    assert sys_.mem.emulated_ns[0] >= 6 * 300
    assert [sys_.mem.read_word(lay.data_addr(i)) for i in range(5)] == [1, 2, 3, 4, 5]


def test_redo_drains_once_per_transaction():
    lay, sys_, eng = machine(RedoBufferedEngine)
    for _ in range(3):
        eng.execute_transaction(0, write_n(lay, 5))
    assert sys_.mem.counters.drains == 3


def test_redo_reads_its_own_buffered_writes():
    lay, sys_, eng = machine(RedoBufferedEngine)
    a = lay.data_addr(0)
    out = eng.execute_transaction(0, lambda acc: (acc.write(a, 4), acc.read(a))[1])
    assert out.result == 4


@pytest.mark.parametrize("cls", [UndoPerWriteEngine, RedoBufferedEngine, HtmOnlyEngine])
def test_read_only_transactions(cls):
    lay, sys_, eng = machine(cls)
    out = eng.execute_transaction(0, lambda acc: acc.read(lay.data_addr(0)))
    assert out.path is Path.READ_ONLY
    assert sys_.mem.counters.drains == 0 and sys_.mem.counters.flushes == 0
    assert eng.stats.via_readonly == 1


def test_htm_only_never_flushes():
    lay, sys_, eng = machine(HtmOnlyEngine)
    for _ in range(4):
        eng.execute_transaction(0, write_n(lay, 3))
    assert sys_.mem.counters.flushes == 0 and sys_.mem.counters.drains == 0
    assert sys_.htm.stats.commits == 4


def test_htm_only_falls_back_to_lock_when_htm_always_aborts():
    lay, sys_, eng = machine(HtmOnlyEngine, p_zero=1.0)
    eng.execute_transaction(0, write_n(lay, 2))
    assert sys_.mem.read_word(lay.data_addr(1)) == 2
    assert sys_.htm.stats.zero > 0


def test_undo_recovery_rolls_back_unfinished_transaction():
    lay, sys_, eng = machine(UndoPerWriteEngine)
    eng.execute_transaction(0, write_n(lay, 2))
    done = sys_.mem.volatile.copy()

    class Crash(Exception):
        pass

    def partial(acc):
        acc.write(lay.data_addr(0), 100)
        acc.write(lay.data_addr(1), 200)
        raise Crash

    with pytest.raises(Crash):
        eng.execute_transaction(0, partial)
    sys_.mem.persist_all()
    rec = recover_undo(sys_.mem.persisted, LogsMeta.from_layout(lay))
    assert (rec.words[lay.data_slice()] == done[lay.data_slice()]).all()


def test_redo_recovery_replays_last_transaction():
    lay, sys_, eng = machine(RedoBufferedEngine)
    eng.execute_transaction(0, write_n(lay, 3))
    snap = sys_.mem.persisted.copy()  # drained log, data lines maybe not
    rec = recover_redo(snap, LogsMeta.from_layout(lay))
    assert [rec.words[(lay.data_addr(i) - lay.base) // 8] for i in range(3)] == [1, 2, 3]
