"""Reference mechanisms: per-write undo logging, commit-time redo logging
and plain HTM without durability.

The two logging baselines serialize transactions with a global mutex (undo
and redo logging do not compose with hardware transactions) and append to
one shared log.  Their flushes and drains go to one shared persist domain,
so a drain also covers the previous transaction's flushed data.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from . import scheduler as sch
from .engine import Committed, EngineStats, Path, TAG_SGL, _PlainIO
from .htm import AbortKind, TxnAborted
from .memory import MASK64
from .recovery import LogView, LogsMeta, RecoveredImage
from .system import BASELINE_LOCK, SGL, System
from .undo_log import DataEntry

# pseudo thread id owning the shared persist domain
SHARED_DOMAIN = -1


class BaselineKind(str, enum.Enum):
    UNDO = "undo"
    REDO = "redo"
    HTM_ONLY = "htm-only"


class _Access:
    def __init__(self, eng: "_MutexEngine", tid: int):
        self.eng = eng
        self.tid = tid
        self.writes: list[tuple[int, int]] = []

    def read(self, addr: int) -> int:
        return self.eng.htm.nontx_read(addr, self.tid)

    def alloc(self, nwords: int) -> int:
        return self.eng.sys.alloc.alloc(nwords)

    def free(self, addr: int) -> None:
        self.eng.sys.alloc.free(addr)


class _UndoAccess(_Access):
    def write(self, addr: int, value: int) -> None:
        self.eng._logged_write(self.tid, addr, value & MASK64)
        self.writes.append((addr, value & MASK64))


class _RedoAccess(_Access):
    def __init__(self, eng, tid):
        super().__init__(eng, tid)
        self.buffer: dict[int, int] = {}

    def read(self, addr: int) -> int:
        if addr in self.buffer:
            return self.buffer[addr]
        return super().read(addr)

    def write(self, addr: int, value: int) -> None:
        value &= MASK64
        self.buffer[addr] = value
        self.writes.append((addr, value))


class _MutexEngine:
    kind: BaselineKind

    def __init__(self, system: System):
        self.sys = system
        self.htm = system.htm
        self.mem = system.mem
        self.sched = system.sched
        self.clock = system.clock
        self.log = system.logs[0]
        self.a_lock = system.gaddr(BASELINE_LOCK)
        self.stats = EngineStats()

    @property
    def name(self) -> str:
        return self.kind.value

    def _lock(self, tid: int) -> None:
        while True:
            self.sched.wait_until(lambda: self.mem.read_word(self.a_lock) == 0, "lock")
            self.sched.yield_point(sch.NONTX, "lock")
            if self.htm.compare_and_swap(self.a_lock, 0, 1):
                return

    def _unlock(self, tid: int) -> None:
        self.htm.nontx_write(self.a_lock, 0, tid)

    def _flush(self, addrs) -> None:
        seen = set()
        for a in addrs:
            line = self.mem.line_of(a)
            if line not in seen:
                seen.add(line)
                self.sched.yield_point(sch.FLUSH, "flush")
                self.mem.flush_line(a, SHARED_DOMAIN)

    def _drain(self, tid: int) -> None:
        self.sched.yield_point(sch.DRAIN, "drain")
        self.mem.drain(SHARED_DOMAIN, charge_to=tid)

    def _slot_addr(self, g: int) -> int:
        return self.log.meta.slot_addr(self.log.slot_of(g))

    def execute_transaction(self, tid: int, body) -> Committed:
        self._lock(tid)
        try:
            out = self._run(tid, body)
        finally:
            self._unlock(tid)
        if out.path is Path.READ_ONLY:
            self.stats.via_readonly += 1
        return out


class UndoPerWriteEngine(_MutexEngine):
    """Each write is preceded by a durable undo entry."""

    kind = BaselineKind.UNDO

    def _logged_write(self, tid: int, addr: int, value: int) -> None:
        io = _PlainIO(self.htm, tid)
        g = self.log.cursor(io)
        self.log.append_data_entry(io, addr, self.mem.read_word(addr))
        self._flush([self._slot_addr(g)])
        self._drain(tid)
        self.htm.nontx_write(addr, value, tid, label="write")
        self._flush([addr])

    def _run(self, tid: int, body) -> Committed:
        acc = _UndoAccess(self, tid)
        result = body(acc)
        if not acc.writes:
            return Committed(Path.READ_ONLY, None, result)
        io = _PlainIO(self.htm, tid)
        self._drain(tid)
        ts = self.clock.next()
        g = self.log.cursor(io)
        self.log.append_control_entry(io, ts)
        self.sys.commits.record(ts, tid, self.kind.value, dict(acc.writes))
        self._flush([self._slot_addr(g)])
        return Committed(Path.DIRECT, ts, result)


class RedoBufferedEngine(_MutexEngine):
    """Writes are buffered and logged, then applied after one drain."""

    kind = BaselineKind.REDO

    def _run(self, tid: int, body) -> Committed:
        acc = _RedoAccess(self, tid)
        result = body(acc)
        if not acc.writes:
            return Committed(Path.READ_ONLY, None, result)
        io = _PlainIO(self.htm, tid)
        start = self.log.cursor(io)
        for addr, value in acc.writes:
            self.log.append_data_entry(io, addr, value)
        ts = self.clock.next()
        self.log.append_control_entry(io, ts)
        self._flush(self.log.entry_lines(start, self.log.cursor(io)))
        self._drain(tid)
        self.sys.commits.record(ts, tid, self.kind.value, dict(acc.writes))
        for addr, value in acc.writes:
            self.htm.nontx_write(addr, value, tid, label="write")
        self._flush([a for a, _ in acc.writes])
        return Committed(Path.DIRECT, ts, result)


class HtmOnlyEngine:
    """Each transaction in one emulated hardware transaction; not durable."""

    kind = BaselineKind.HTM_ONLY

    def __init__(self, system: System, retries: int = 5):
        self.sys = system
        self.htm = system.htm
        self.mem = system.mem
        self.sched = system.sched
        self.clock = system.clock
        self.retries = retries
        self.a_sgl = system.gaddr(SGL)
        self.stats = EngineStats()

    @property
    def name(self) -> str:
        return self.kind.value

    def execute_transaction(self, tid: int, body) -> Committed:
        for _ in range(self.retries):
            txn = self.htm.begin(tid, label="htm")
            acc = _TxnAccess(self, txn, tid)
            try:
                if self.htm.read(txn, self.a_sgl, quiet=True):
                    self.htm.abort_explicit(txn, TAG_SGL)
                result = body(acc)
                ts = self.clock.next()
                self.htm.commit(txn, label="htm")
            except TxnAborted as e:
                if e.code.kind is AbortKind.EXPLICIT and e.code.tag == TAG_SGL:
                    self.sched.wait_until(lambda: self.mem.read_word(self.a_sgl) == 0, "sgl")
                continue
            except BaseException:
                self.htm.discard(txn)
                raise
            if not acc.writes:
                self.stats.via_readonly += 1
                return Committed(Path.READ_ONLY, ts, result)
            self.sys.commits.record(ts, tid, self.kind.value, dict(acc.writes))
            return Committed(Path.DIRECT, ts, result)
        while True:
            self.sched.wait_until(lambda: self.mem.read_word(self.a_sgl) == 0, "sgl")
            self.sched.yield_point(sch.NONTX, "sgl-acquire")
            if self.htm.compare_and_swap(self.a_sgl, 0, 1):
                break
        try:
            acc = _NontxAccess(self, tid)
            result = body(acc)
            ts = self.clock.next()
            self.sys.commits.record(ts, tid, self.kind.value, dict(acc.writes))
        finally:
            self.htm.nontx_write(self.a_sgl, 0, tid, label="sgl-release")
        self.stats.via_sgl += 1
        return Committed(Path.SGL, ts, result)


class _TxnAccess:
    def __init__(self, eng, txn, tid):
        self.eng, self.txn, self.tid = eng, txn, tid
        self.writes: list[tuple[int, int]] = []

    def read(self, addr: int) -> int:
        return self.eng.htm.read(self.txn, addr)

    def write(self, addr: int, value: int) -> None:
        self.eng.htm.write(self.txn, addr, value)
        self.writes.append((addr, value & MASK64))

    def alloc(self, nwords: int) -> int:
        return self.eng.sys.alloc.alloc(nwords)

    def free(self, addr: int) -> None:
        self.eng.sys.alloc.free(addr)


class _NontxAccess(_TxnAccess):
    def __init__(self, eng, tid):
        super().__init__(eng, None, tid)

    def read(self, addr: int) -> int:
        return self.eng.htm.nontx_read(addr, self.tid)

    def write(self, addr: int, value: int) -> None:
        self.eng.htm.nontx_write(addr, value, self.tid, label="write")
        self.writes.append((addr, value & MASK64))


# -- recovery -------------------------------------------------------------


def _shared_view(snapshot: np.ndarray, logs_meta: LogsMeta) -> LogView:
    return LogView(snapshot, logs_meta.logs[0], logs_meta.base,
                   logs_meta.data_lo, logs_meta.data_hi)


def recover_undo(snapshot: np.ndarray, logs_meta: LogsMeta) -> RecoveredImage:
    """Roll back the entries that follow the newest control entry."""
    view = _shared_view(snapshot, logs_meta)
    start = view.newest_control()
    if start is None:
        pos, par = view.n - 1, 0  # "before" slot 0 of lap 0
    else:
        pos, par = start
    trailing = []
    for _ in range(view.n - 1):
        pos, par = view.next(pos, par)
        e = view.decode(pos, par)
        if not (isinstance(e, DataEntry) and e.addr):
            break
        trailing.append((e.addr, e.old_value))
    img = snapshot.copy()
    for addr, old in reversed(trailing):
        img[(addr - logs_meta.base) // 8] = old
    return RecoveredImage(img, math.inf)


def recover_redo(snapshot: np.ndarray, logs_meta: LogsMeta) -> RecoveredImage:
    """Replay the newest complete sequence; older ones are already durable."""
    view = _shared_view(snapshot, logs_meta)
    img = snapshot.copy()
    seq = next(view.walk(), None)
    if seq is None:
        return RecoveredImage(img, math.inf)
    for _slot, addr, value in seq.entries:
        img[(addr - logs_meta.base) // 8] = value
    return RecoveredImage(img, seq.ts, [seq])


__all__ = [
    "BaselineKind", "UndoPerWriteEngine", "RedoBufferedEngine", "HtmOnlyEngine",
    "recover_undo", "recover_redo", "SHARED_DOMAIN",
]
