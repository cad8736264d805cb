"""Crafty transactions: Log, Redo and Validate phases over emulated HTM.

A persistent transaction runs its body three ways:

* **Log phase** (one hardware transaction): every persistent write is
  preceded by an undo entry; at the end the writes are rolled back in
  reverse order while a volatile redo log is built, a control entry
  stamped with the LOGGED timestamp is appended, and the transaction
  commits.  Memory is unchanged; only the log grew.  The log lines are
  flushed but not drained.
* **Redo phase** (one hardware transaction): if no other thread has
  written back since our LOGGED timestamp (``gLastRedoTS``), replay the
  redo log and overwrite the control entry with the commit timestamp.
* **Validate phase** (one hardware transaction): otherwise re-execute the
  body, checking each write against the next undo entry.  A mismatch sends
  the transaction back to a fresh Log phase.

After too many aborts a transaction takes the single global lock (SGL) and
executes in chunks of at most ``k`` writes, halving ``k`` on abort; at
``k == 1`` it persists each undo entry with its own drain and writes in
place without any hardware transaction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable

from . import scheduler as sch
from .htm import AbortCode, AbortKind, TxnAborted
from .memory import MASK64
from .system import G_LAST_REDO_TS, SGL, TS_LOWER_BOUND, System
from .undo_log import (
    META_BUSY,
    DataEntry,
    ControlEntry,
    LogMaintenanceRequired,
    ThreadLog,
)

TAG_SGL = 1
TAG_REDO = 2
TAG_VALIDATE = 3
TAG_MAINT = 4

VARIANTS = ("crafty", "crafty-noredo", "crafty-novalidate")


class Path(str, enum.Enum):
    REDO = "redo"
    VALIDATE = "validate"
    SGL = "sgl"
    READ_ONLY = "read-only"
    # baselines commit in place under a mutex
    DIRECT = "direct"


class AllocationReplayMismatch(Exception):
    pass


@dataclass
class EngineConfig:
    variant: str = "crafty"
    retries: int = 5
    max_writes: int = 64
    max_lag: int = 10**6
    # slack added to the clock in the lag check; covers timestamps other
    # threads take between two checks
    lag_margin: int = 64
    maintenance: bool = True
    # abort probability for SGL chunk transactions (None: HTM default)
    sgl_p_zero: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass
class Committed:
    path: Path
    ts: int | None
    result: Any = None


@dataclass
class EngineStats:
    via_redo: int = 0
    via_validate: int = 0
    via_sgl: int = 0
    via_readonly: int = 0
    redo_failed: int = 0
    validation_failed: int = 0
    k1_writes: int = 0
    k1_drains: int = 0
    maintenance_runs: int = 0
    forced_entries: int = 0

    def count(self, path: Path) -> None:
        name = "via_" + path.value.replace("-", "")
        setattr(self, name, getattr(self, name) + 1)


@dataclass
class EngineCtx:
    tid: int
    log: ThreadLog
    redo_log: list[tuple[int, int]] = field(default_factory=list)
    alloc_log: list[tuple[int, int]] = field(default_factory=list)
    free_log: list[int] = field(default_factory=list)
    retries_remaining: int = 0
    k: int = 0
    # current logged sequence
    seq_start: int = 0
    control_g: int = 0
    control_slot: int = 0
    logged_ts: int = 0
    in_sgl: bool = False


class GlobalState:
    """Read-only view of the shared words (for tests and reports)."""

    def __init__(self, system: System):
        self._sys = system

    def _get(self, which: int) -> int:
        return self._sys.mem.read_word(self._sys.gaddr(which))

    @property
    def g_last_redo_ts(self) -> int:
        return self._get(G_LAST_REDO_TS)

    @property
    def ts_lower_bound(self) -> int:
        return self._get(TS_LOWER_BOUND)

    @property
    def sgl(self) -> int:
        return self._get(SGL)

    @property
    def clock(self) -> int:
        return self._sys.clock.value


# -- word access adapters ------------------------------------------------


class _TxIO:
    def __init__(self, htm, txn):
        self.htm = htm
        self.txn = txn

    def get(self, addr: int) -> int:
        return self.htm.read(self.txn, addr, quiet=True)

    def put(self, addr: int, value: int) -> None:
        self.htm.write(self.txn, addr, value, quiet=True)


class _PlainIO:
    def __init__(self, htm, tid: int):
        self.htm = htm
        self.tid = tid

    def get(self, addr: int) -> int:
        return self.htm.mem.read_word(addr)

    def put(self, addr: int, value: int) -> None:
        self.htm.nontx_write(addr, value, self.tid)


# -- body access interfaces ------------------------------------------------


class _ChunkFull(Exception):
    """The body reached the write limit of the current SGL chunk."""


class _Maint:
    def __init__(self, horizon: int | None):
        self.horizon = horizon


class _ReadOnly:
    def __init__(self, result):
        self.result = result


class _Logged:
    def __init__(self, result):
        self.result = result


class _BodyAccess:
    """Persistent read/write/alloc/free as seen by a transaction body.

    ``skip`` leading writes are replayed into a private overlay instead of
    memory: SGL chunks re-execute the body from the start, and those writes
    were already applied by earlier chunks.
    """

    def __init__(self, eng: "CraftyEngine", ctx: EngineCtx, skip: int = 0,
                 overlay: dict[int, int] | None = None,
                 replay_allocs: list[tuple[int, int]] | None = None):
        self.eng = eng
        self.ctx = ctx
        self.skip = skip
        self.overlay = dict(overlay or {})
        self.replay_allocs = replay_allocs or []
        self.nwrites = 0
        self.nallocs = 0
        self.undo: list[tuple[int, int]] = []
        self.writes: list[tuple[int, int]] = []
        self.new_allocs: list[tuple[int, int]] = []
        self.frees: list[int] = []

    @property
    def tid(self) -> int:
        return self.ctx.tid

    def _raw_read(self, addr: int) -> int:
        raise NotImplementedError

    def _live_write(self, addr: int, value: int) -> None:
        raise NotImplementedError

    def read(self, addr: int) -> int:
        if addr in self.overlay:
            return self.overlay[addr]
        return self._raw_read(addr)

    def write(self, addr: int, value: int) -> None:
        value &= MASK64
        i = self.nwrites
        self.nwrites += 1
        if i < self.skip:
            self.overlay[addr] = value
            return
        # replay finished: memory now agrees with the overlay
        self.overlay.clear()
        self._live_write(addr, value)

    def alloc(self, nwords: int) -> int:
        i = self.nallocs
        self.nallocs += 1
        if i < len(self.replay_allocs):
            return self.replay_allocs[i][1]
        addr = self.eng.sys.alloc.alloc(nwords)
        self.new_allocs.append((nwords, addr))
        return addr

    def free(self, addr: int) -> None:
        self.frees.append(addr)


class _LogAccess(_BodyAccess):
    def __init__(self, eng, ctx, txn, limit: int | None = None, **kw):
        super().__init__(eng, ctx, **kw)
        self.txn = txn
        self.io = _TxIO(eng.htm, txn)
        self.limit = limit
        self._lb: int | None = None

    def lower_bound(self) -> int | None:
        if not self.eng.cfg.maintenance:
            return None
        if self._lb is None:
            self._lb = self.io.get(self.eng.a_tslb)
        return self._lb

    def _raw_read(self, addr: int) -> int:
        return self.eng.htm.read(self.txn, addr)

    def _live_write(self, addr: int, value: int) -> None:
        if self.limit is not None and len(self.undo) >= self.limit:
            raise _ChunkFull
        htm = self.eng.htm
        old = htm.read(self.txn, addr, quiet=True)
        self.ctx.log.append_data_entry(self.io, addr, old, self.lower_bound())
        htm.write(self.txn, addr, value)
        self.undo.append((addr, old))
        self.writes.append((addr, value))


class _ValidateAccess(_BodyAccess):
    def __init__(self, eng, ctx, txn):
        super().__init__(eng, ctx, replay_allocs=ctx.alloc_log)
        self.txn = txn
        self.io = _TxIO(eng.htm, txn)
        self.g = ctx.seq_start

    def _raw_read(self, addr: int) -> int:
        return self.eng.htm.read(self.txn, addr)

    def _live_write(self, addr: int, value: int) -> None:
        htm, log = self.eng.htm, self.ctx.log
        expected = None
        if self.g < self.ctx.control_g:
            expected = log.read_entry(self.io, log.slot_of(self.g), log.parity_of(self.g))
        self.g += 1
        if (not isinstance(expected, DataEntry) or expected.addr != addr
                or htm.read(self.txn, addr, quiet=True) != expected.old_value):
            htm.abort_explicit(self.txn, TAG_VALIDATE)
        htm.write(self.txn, addr, value)
        self.writes.append((addr, value))

    def alloc(self, nwords: int) -> int:
        i = self.nallocs
        self.nallocs += 1
        log = self.ctx.alloc_log
        if i >= len(log) or log[i][0] != nwords:
            self.eng.htm.abort_explicit(self.txn, TAG_VALIDATE)
        return log[i][1]


class _K1Access(_BodyAccess):
    """SGL execution with one write per step and no hardware transaction."""

    def __init__(self, eng, ctx, S: int, **kw):
        super().__init__(eng, ctx, **kw)
        self.S = S

    def _raw_read(self, addr: int) -> int:
        return self.eng.htm.nontx_read(addr, self.ctx.tid)

    def _live_write(self, addr: int, value: int) -> None:
        old = self.eng.mem.read_word(addr)
        self.eng._k1_write(self.ctx, addr, old, value, self.S)
        self.undo.append((addr, old))
        self.writes.append((addr, value))
        raise _ChunkFull


Body = Callable[[_BodyAccess], Any]


def _is_sgl(code: AbortCode) -> bool:
    return code.kind is AbortKind.EXPLICIT and code.tag == TAG_SGL


class CraftyEngine:
    """Executes persistent transactions for every thread of a :class:`System`."""

    def __init__(self, system: System, config: EngineConfig | None = None):
        self.sys = system
        self.cfg = config or EngineConfig()
        self.htm = system.htm
        self.mem = system.mem
        self.sched = system.sched
        self.clock = system.clock
        self.a_last = system.gaddr(G_LAST_REDO_TS)
        self.a_tslb = system.gaddr(TS_LOWER_BOUND)
        self.a_sgl = system.gaddr(SGL)
        self.ctxs = [EngineCtx(t, system.logs[t], k=self.cfg.max_writes)
                     for t in range(system.layout.nthreads)]
        self.stats = EngineStats()
        self.globals = GlobalState(system)

    @property
    def name(self) -> str:
        return self.cfg.variant

    # -- persistence helpers --------------------------------------------

    def _flush(self, tid: int, addrs) -> None:
        seen = set()
        for a in addrs:
            line = self.mem.line_of(a)
            if line in seen:
                continue
            seen.add(line)
            self.sched.yield_point(sch.FLUSH, "flush")
            self.mem.flush_line(a, tid)

    def _drain(self, tid: int) -> None:
        self.sched.yield_point(sch.DRAIN, "drain")
        self.mem.drain(tid)

    def _release(self, allocs) -> None:
        for _, addr in allocs:
            self.sys.alloc.free(addr)

    def _busy_addr(self, tid: int) -> int:
        return self.sys.logs[tid].meta_addr + 8 * META_BUSY

    def _mark_busy(self, io, ctx: EngineCtx, ts: int) -> None:
        a = self._busy_addr(ctx.tid)
        if io.get(a) == 0:
            io.put(a, ts)

    def _mark_done(self, io, ctx: EngineCtx, logged_ts: int) -> None:
        ctx.log.set_last_committed_ts(io, logged_ts)
        io.put(self._busy_addr(ctx.tid), 0)

    def _abandon(self, ctx: EngineCtx, durable: bool = False) -> None:
        """Give up the logged sequence; it stays in the log and is rolled
        back harmlessly.

        Before blocking on the global lock (``durable``) the sequence is
        drained and becomes the thread's last timestamp.  A busy thread is
        never forced by maintenance, and an old last timestamp would pin the
        lower bound, so either would stall the lock holder's maintenance.
        """
        a = self._busy_addr(ctx.tid)
        if self.mem.read_word(a):
            tid = ctx.tid
            if durable:
                self._drain(tid)
                io = _PlainIO(self.htm, tid)
                if ctx.logged_ts > ctx.log.last_committed_ts(io):
                    ctx.log.set_last_committed_ts(io, ctx.logged_ts)
            self.htm.nontx_write(a, 0, tid, label="abandon")
        self._release(ctx.alloc_log)
        ctx.alloc_log = []

    def _lag_exceeded(self, lower_bound: int | None) -> bool:
        if lower_bound is None:
            return False
        return self.clock.value + self.cfg.lag_margin >= lower_bound + self.cfg.max_lag

    def _sgl_wait(self, code: AbortCode) -> None:
        if code.kind is AbortKind.EXPLICIT and code.tag == TAG_SGL:
            self.sched.wait_until(lambda: self.mem.read_word(self.a_sgl) == 0, "sgl")

    def _check_sgl(self, txn) -> None:
        if self.htm.read(txn, self.a_sgl, quiet=True):
            self.htm.abort_explicit(txn, TAG_SGL)

    # -- phases ---------------------------------------------------------

    def log_phase(self, ctx: EngineCtx, body: Body):
        """Returns ``_Logged``, ``_ReadOnly``, ``_Maint`` or an :class:`AbortCode`."""
        ctx.redo_log = []
        txn = self.htm.begin(ctx.tid, label="log")
        acc = _LogAccess(self, ctx, txn)
        try:
            self._check_sgl(txn)
            ctx.seq_start = ctx.log.cursor(acc.io)
            result = body(acc)
            if not acc.undo:
                self.htm.commit(txn, label="log")
                ctx.alloc_log, ctx.free_log = acc.new_allocs, acc.frees
                return _ReadOnly(result)
            for addr, old in reversed(acc.undo):
                ctx.redo_log.append((addr, self.htm.read(txn, addr, quiet=True)))
                self.htm.write(txn, addr, old, quiet=True)
            ts = self.clock.next()
            lb = acc.lower_bound()
            if self._lag_exceeded(lb):
                raise LogMaintenanceRequired(0)
            ctx.control_g = ctx.log.cursor(acc.io)
            ctx.control_slot = ctx.log.append_control_entry(acc.io, ts, lb)
            self._mark_busy(acc.io, ctx, ts)
            self.htm.commit(txn, label="log")
        except TxnAborted as e:
            self._release(acc.new_allocs)
            return e.code
        except LogMaintenanceRequired as e:
            try:
                self.htm.abort_explicit(txn, TAG_MAINT)
            except TxnAborted:
                pass
            self._release(acc.new_allocs)
            return _Maint(e.horizon or None)
        except BaseException:
            self.htm.discard(txn)
            self._release(acc.new_allocs)
            raise
        ctx.logged_ts = ts
        ctx.alloc_log, ctx.free_log = acc.new_allocs, acc.frees
        self._flush(ctx.tid, ctx.log.entry_lines(ctx.seq_start, ctx.control_g + 1))
        return _Logged(result)

    def redo_phase(self, ctx: EngineCtx):
        """Returns the commit timestamp or an :class:`AbortCode`."""
        txn = self.htm.begin(ctx.tid, label="redo")
        io = _TxIO(self.htm, txn)
        try:
            self._check_sgl(txn)
            if not self.htm.read(txn, self.a_last, quiet=True) < ctx.logged_ts:
                self.htm.abort_explicit(txn, TAG_REDO)
            for addr, value in reversed(ctx.redo_log):
                self.htm.write(txn, addr, value)
            # taken after the last data access, so that timestamp order
            # matches the order in which conflicting transactions serialize
            ts = self.clock.next()
            self.htm.write(txn, self.a_last, ts, quiet=True)
            ctx.log.set_committed_timestamp(io, ctx.control_slot, ts)
            self._mark_done(io, ctx, ctx.logged_ts)
            self.htm.commit(txn, label="redo")
        except TxnAborted as e:
            return e.code
        except BaseException:
            self.htm.discard(txn)
            raise
        writes = {a: v for a, v in reversed(ctx.redo_log)}
        self.sys.commits.record(ts, ctx.tid, Path.REDO.value, writes)
        self._flush(ctx.tid, list(writes) + [ctx.log.meta.slot_addr(ctx.control_slot)])
        for addr in ctx.free_log:
            self.sys.alloc.free(addr)
        ctx.free_log = []
        return ts

    def validate_phase(self, ctx: EngineCtx, body: Body):
        """Returns :class:`Committed` or an :class:`AbortCode`."""
        txn = self.htm.begin(ctx.tid, label="validate")
        acc = _ValidateAccess(self, ctx, txn)
        try:
            self._check_sgl(txn)
            result = body(acc)
            log = ctx.log
            term = log.read_entry(acc.io, log.slot_of(acc.g), log.parity_of(acc.g))
            if (acc.g != ctx.control_g or not isinstance(term, ControlEntry)
                    or acc.nallocs != len(ctx.alloc_log)):
                self.htm.abort_explicit(txn, TAG_VALIDATE)
            self.htm.read(txn, self.a_last, quiet=True)
            ts = self.clock.next()
            self.htm.write(txn, self.a_last, ts, quiet=True)
            log.set_committed_timestamp(acc.io, ctx.control_slot, ts)
            self._mark_done(acc.io, ctx, ctx.logged_ts)
            self.htm.commit(txn, label="validate")
        except TxnAborted as e:
            return e.code
        except BaseException:
            self.htm.discard(txn)
            raise
        writes = dict(acc.writes)
        self.sys.commits.record(ts, ctx.tid, Path.VALIDATE.value, writes)
        self._flush(ctx.tid, list(writes) + [ctx.log.meta.slot_addr(ctx.control_slot)])
        # frees recorded by the log phase are superseded by this execution's
        ctx.free_log = []
        for addr in acc.frees:
            self.sys.alloc.free(addr)
        return Committed(Path.VALIDATE, ts, result)

    # -- orchestration --------------------------------------------------

    def execute_transaction(self, ctx: EngineCtx | int, body: Body) -> Committed:
        if isinstance(ctx, int):
            ctx = self.ctxs[ctx]
        out = self._execute(ctx, body)
        self.stats.count(out.path)
        return out

    def _spend(self, ctx: EngineCtx, code: AbortCode) -> None:
        if _is_sgl(code):
            self._sgl_wait(code)
        else:
            ctx.retries_remaining -= 1

    def _execute(self, ctx: EngineCtx, body: Body) -> Committed:
        variant = self.cfg.variant
        ctx.retries_remaining = self.cfg.retries
        while True:
            if ctx.retries_remaining <= 0:
                return self.sgl_fallback(ctx, body)
            r = self.log_phase(ctx, body)
            if isinstance(r, _Maint):
                self.maintain_log_bounds(ctx, r.horizon)
                continue
            if isinstance(r, AbortCode):
                self._spend(ctx, r)
                continue
            if isinstance(r, _ReadOnly):
                return Committed(Path.READ_ONLY, None, r.result)
            if variant != "crafty-noredo":
                rr = self.redo_phase(ctx)
                if not isinstance(rr, AbortCode):
                    return Committed(Path.REDO, rr, r.result)
                self.stats.redo_failed += 1
                if variant == "crafty-novalidate" or _is_sgl(rr):
                    self._abandon(ctx, durable=_is_sgl(rr) or ctx.retries_remaining <= 1)
                    self._spend(ctx, rr)
                    continue
                self._spend(ctx, rr)
            vr = None
            while True:
                if ctx.retries_remaining <= 0:
                    break
                vr = self.validate_phase(ctx, body)
                if isinstance(vr, Committed):
                    return vr
                if _is_sgl(vr):
                    break
                self._spend(ctx, vr)
                if vr.kind is AbortKind.EXPLICIT and vr.tag == TAG_VALIDATE:
                    self.stats.validation_failed += 1
                    break
            waits = vr is not None and _is_sgl(vr)
            self._abandon(ctx, durable=waits or ctx.retries_remaining <= 0)
            if waits:
                self._spend(ctx, vr)

    # -- SGL fallback ---------------------------------------------------

    def _acquire_sgl(self, tid: int) -> None:
        while True:
            self.sched.wait_until(lambda: self.mem.read_word(self.a_sgl) == 0, "sgl")
            self.sched.yield_point(sch.NONTX, "sgl-acquire")
            if self.htm.compare_and_swap(self.a_sgl, 0, 1):
                return

    def _release_sgl(self, tid: int) -> None:
        self.htm.nontx_write(self.a_sgl, 0, tid, label="sgl-release")

    def sgl_fallback(self, ctx: EngineCtx, body: Body) -> Committed:
        tid = ctx.tid
        self._acquire_sgl(tid)
        ctx.in_sgl = True
        try:
            S = self.clock.next()
            io = _PlainIO(self.htm, tid)
            self._mark_busy(io, ctx, S)
            ctx.k = self.cfg.max_writes
            done: list[tuple[int, int]] = []
            orig: dict[int, int] = {}
            allocs: list[tuple[int, int]] = []
            while True:
                overlay = dict(orig)
                if ctx.k > 1:
                    r = self._chunk(ctx, body, S, len(done), overlay, allocs)
                    if isinstance(r, _Maint):
                        self.maintain_log_bounds(ctx, r.horizon)
                        continue
                    if isinstance(r, AbortCode):
                        ctx.k = max(1, ctx.k // 2)
                        continue
                    acc, finished, result = r
                    if acc.undo:
                        # the chunk's undo entries must be durable before the
                        # unprotected in-place writes
                        self._drain(tid)
                        for addr, value in acc.writes:
                            self.htm.nontx_write(addr, value, tid, label="sgl-redo")
                        self._flush(tid, [a for a, _ in acc.writes])
                else:
                    acc = _K1Access(self, ctx, S, skip=len(done), overlay=overlay,
                                    replay_allocs=allocs)
                    try:
                        result = body(acc)
                        finished = True
                    except _ChunkFull:
                        finished = False
                for addr, old in acc.undo:
                    orig.setdefault(addr, old)
                done.extend(acc.writes)
                allocs.extend(acc.new_allocs)
                if finished:
                    frees = acc.frees
                    break
            self.htm.nontx_write(self.a_last, S, tid, label="sgl-end")
            self._mark_done(io, ctx, S)
        finally:
            ctx.in_sgl = False
        self._release_sgl(tid)
        ctx.free_log = []
        for addr in frees:
            self.sys.alloc.free(addr)
        self.sys.commits.record(S, tid, Path.SGL.value, dict(done))
        return Committed(Path.SGL, S, result)

    def _chunk(self, ctx: EngineCtx, body: Body, S: int, skip: int,
               overlay: dict[int, int], allocs):
        txn = self.htm.begin(ctx.tid, p_zero=self.cfg.sgl_p_zero, label="sgl-log")
        acc = _LogAccess(self, ctx, txn, limit=ctx.k, skip=skip, overlay=overlay,
                         replay_allocs=allocs)
        finished, result = True, None
        try:
            start = ctx.log.cursor(acc.io)
            try:
                result = body(acc)
            except _ChunkFull:
                finished = False
            if acc.undo:
                for addr, old in reversed(acc.undo):
                    self.htm.write(txn, addr, old, quiet=True)
                lb = acc.lower_bound()
                if self._lag_exceeded(lb):
                    raise LogMaintenanceRequired(0)
                end = ctx.log.cursor(acc.io)
                ctx.log.append_control_entry(acc.io, S, lb)
            self.htm.commit(txn, label="sgl-log")
        except TxnAborted as e:
            self._release(acc.new_allocs)
            return e.code
        except LogMaintenanceRequired as e:
            try:
                self.htm.abort_explicit(txn, TAG_MAINT)
            except TxnAborted:
                pass
            self._release(acc.new_allocs)
            return _Maint(e.horizon or None)
        except BaseException:
            self.htm.discard(txn)
            self._release(acc.new_allocs)
            raise
        if acc.undo:
            self._flush(ctx.tid, ctx.log.entry_lines(start, end + 1))
        return acc, finished, result

    def _k1_write(self, ctx: EngineCtx, addr: int, old: int, value: int, S: int) -> None:
        tid = ctx.tid
        io = _PlainIO(self.htm, tid)
        start = ctx.log.cursor(io)
        while True:
            lb = io.get(self.a_tslb) if self.cfg.maintenance else None
            if self._lag_exceeded(lb):
                self.maintain_log_bounds(ctx, None)
                continue
            try:
                ctx.log.append_data_entry(io, addr, old, lb)
                ctx.log.append_control_entry(io, S, lb)
                break
            except LogMaintenanceRequired as e:
                # the data entry may already be in place; start over
                io.put(ctx.log.meta_addr, start)
                self.maintain_log_bounds(ctx, e.horizon)
        self._flush(tid, ctx.log.entry_lines(start, ctx.log.cursor(io)))
        self._drain(tid)
        self.stats.k1_drains += 1
        self.stats.k1_writes += 1
        self.htm.nontx_write(addr, value, tid, label="k1-write")
        self._flush(tid, [addr])

    # -- log maintenance ------------------------------------------------

    def _effective_last(self, io, u: int) -> int:
        log = self.sys.logs[u]
        last = log.last_committed_ts(io)
        busy = io.get(self._busy_addr(u))
        return min(busy, last) if busy else last

    def _atomic(self, ctx: EngineCtx, fn, label: str):
        """Run ``fn(io)`` atomically: HTM first, the global lock as fallback."""
        if ctx.in_sgl:
            return fn(_PlainIO(self.htm, ctx.tid))
        for _ in range(self.cfg.retries):
            txn = self.htm.begin(ctx.tid, label=label)
            try:
                self._check_sgl(txn)
                out = fn(_TxIO(self.htm, txn))
                self.htm.commit(txn, label=label)
                return out
            except TxnAborted as e:
                self._sgl_wait(e.code)
            except BaseException:
                self.htm.discard(txn)
                raise
        self._acquire_sgl(ctx.tid)
        try:
            return fn(_PlainIO(self.htm, ctx.tid))
        finally:
            self._release_sgl(ctx.tid)

    def maintain_log_bounds(self, ctx: EngineCtx, horizon: int | None = None) -> None:
        """Force empty control entries into lagging threads, then raise tsLowerBound."""
        self.stats.maintenance_runs += 1
        cfg = self.cfg
        for u in range(len(self.ctxs)):
            ulog = self.sys.logs[u]

            def force(io, u=u, ulog=ulog):
                if io.get(self._busy_addr(u)):
                    return None
                last = ulog.last_committed_ts(io)
                now = self.clock.value
                lagging = now + cfg.lag_margin >= last + cfg.max_lag
                blocking = horizon is not None and horizon >= last
                if not (lagging or blocking):
                    return None
                ts = self.clock.next()
                slot = ulog.append_control_entry(io, ts)
                ulog.set_last_committed_ts(io, ts)
                return slot

            slot = self._atomic(ctx, force, "maint-force")
            if slot is not None:
                self.stats.forced_entries += 1
                self._flush(ctx.tid, [ulog.meta.slot_addr(slot)])
                self._drain(ctx.tid)

        def raise_bound(io):
            low = min(self._effective_last(io, u) for u in range(len(self.ctxs)))
            if low > io.get(self.a_tslb):
                io.put(self.a_tslb, low)

        self._atomic(ctx, raise_bound, "maint-bound")
