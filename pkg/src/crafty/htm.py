"""Software emulation of restricted hardware transactional memory.

Lazy versioning with line-granular version numbers: reads record the
version of the line they touched, writes go to a private buffer, and commit
validates every recorded version before publishing the buffer to the
volatile view of the :class:`~crafty.memory.NvmImage`.  To keep running
transactions opaque (hardware aborts a transaction as soon as a conflicting
line is written), the read set is revalidated whenever another commit or
non-transactional write has happened since the last check.

Conflicts are also resolved eagerly, as hardware does: an access to a line
that another running transaction has written (or, for writes, read) dooms
that other transaction (requester wins), and it aborts at its next
operation.  This keeps the order of timestamps taken inside transactions
consistent with the serialization order.

Non-transactional writes go through :meth:`Htm.nontx_write`, which bumps
line versions so that concurrent transactions observe them as conflicts
(strong isolation).
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from . import scheduler as sch
from .memory import MASK64, NvmImage


class AbortKind(enum.Enum):
    CONFLICT = "conflict"
    CAPACITY = "capacity"
    EXPLICIT = "explicit"
    ZERO = "zero"


@dataclass(frozen=True)
class AbortCode:
    kind: AbortKind
    tag: int | None = None

    def __str__(self) -> str:
        if self.kind is AbortKind.EXPLICIT:
            return f"explicit({self.tag})"
        return self.kind.value


CONFLICT = AbortCode(AbortKind.CONFLICT)
CAPACITY = AbortCode(AbortKind.CAPACITY)
ZERO = AbortCode(AbortKind.ZERO)


class TxnAborted(Exception):
    """Raised into the transaction body; the abort continuation catches it."""

    def __init__(self, code: AbortCode):
        super().__init__(str(code))
        self.code = code


class NestedTransaction(Exception):
    pass


class TxnStatus(enum.Enum):
    ACTIVE = "active"
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass
class EmuTxn:
    owner: int
    capacity_limit: int
    p_zero: float
    read_set: dict[int, int] = field(default_factory=dict)
    write_buffer: dict[int, int] = field(default_factory=dict)
    # version of each written line when it was first written
    write_lines: dict[int, int] = field(default_factory=dict)
    status: TxnStatus = TxnStatus.ACTIVE
    abort_code: AbortCode | None = None
    seen_epoch: int = 0
    # set when another transaction's access to a shared line wins
    doomed: bool = False

    def lines(self) -> int:
        return len(self.read_set.keys() | self.write_lines.keys())


@dataclass
class HtmStats:
    commits: int = 0
    conflict: int = 0
    capacity: int = 0
    explicit: int = 0
    zero: int = 0

    def record(self, code: AbortCode) -> None:
        name = code.kind.value
        setattr(self, name, getattr(self, name) + 1)

    @property
    def aborts(self) -> int:
        return self.conflict + self.capacity + self.explicit + self.zero


@dataclass
class HtmConfig:
    capacity_limit: int = 512
    p_zero: float = 0.0
    # emulated cost of entering and leaving a hardware transaction
    boundary_ns: int = 20
    access_ns: int = 2


class Htm:
    def __init__(self, mem: NvmImage, config: HtmConfig | None = None,
                 sched=None, seed: int = 0):
        self.mem = mem
        self.config = config or HtmConfig()
        self.sched = sched or sch.NullScheduler()
        self.rng = random.Random(seed ^ 0xA5A5)
        self.versions: dict[int, int] = {}
        self.epoch = 0
        self.open: dict[int, EmuTxn] = {}
        self.stats = HtmStats()
        # line -> owners of running transactions that read / wrote it
        self._readers: dict[int, set[int]] = {}
        self._writers: dict[int, set[int]] = {}

    # -- helpers ---------------------------------------------------------

    def _line(self, addr: int) -> int:
        self.mem.index(addr)
        return (addr - self.mem.base) // self.mem.config.line_size

    def _touch(self, txn: EmuTxn) -> None:
        if txn.lines() > txn.capacity_limit:
            self._abort(txn, CAPACITY)

    def _valid(self, txn: EmuTxn) -> bool:
        v = self.versions
        for line, ver in txn.read_set.items():
            if v.get(line, 0) != ver:
                return False
        for line, ver in txn.write_lines.items():
            if v.get(line, 0) != ver:
                return False
        return True

    def _doom_others(self, me: int, owners: set[int] | None) -> None:
        if owners:
            for tid in owners:
                if tid != me:
                    self.open[tid].doomed = True

    def _note_lines(self, txn: EmuTxn) -> None:
        # whether txn survives depends on every line it has touched
        tr = self.mem.tracker
        if tr is not None:
            for line in txn.read_set:
                tr.read(line)
            for line in txn.write_lines:
                tr.read(line)

    def _release_lines(self, txn: EmuTxn) -> None:
        me = txn.owner
        self._note_lines(txn)
        for line in txn.read_set:
            self._readers.get(line, set()).discard(me)
        for line in txn.write_lines:
            self._writers.get(line, set()).discard(me)

    def _abort(self, txn: EmuTxn, code: AbortCode):
        self._release_lines(txn)
        txn.status = TxnStatus.ABORTED
        txn.abort_code = code
        txn.write_buffer.clear()
        self.open.pop(txn.owner, None)
        self.stats.record(code)
        raise TxnAborted(code)

    def _check_active(self, txn: EmuTxn) -> None:
        if txn.status is not TxnStatus.ACTIVE:
            raise RuntimeError(f"transaction is {txn.status.value}")

    def _check_doomed(self, txn: EmuTxn) -> None:
        self._note_lines(txn)
        if txn.doomed:
            self._abort(txn, CONFLICT)

    # -- transactional interface ------------------------------------------

    def begin(self, tid: int, p_zero: float | None = None, label: str = "") -> EmuTxn:
        """Start a transaction; has drain semantics for ``tid``'s flushes."""
        if tid in self.open:
            raise NestedTransaction(f"thread {tid} already in a transaction")
        self.sched.yield_point(sch.TXN_BEGIN, label)
        with self.mem.lock:
            self.mem.fence(tid)
            self.mem.charge(tid, self.config.boundary_ns)
            txn = EmuTxn(tid, self.config.capacity_limit,
                         self.config.p_zero if p_zero is None else p_zero,
                         seen_epoch=self.epoch)
            self.open[tid] = txn
            return txn

    def read(self, txn: EmuTxn, addr: int, quiet: bool = False) -> int:
        self._check_active(txn)
        if not quiet:
            self.sched.yield_point(sch.TXN_ACCESS, "read")
        with self.mem.lock:
            self.mem.charge(txn.owner, self.config.access_ns)
            self._check_doomed(txn)
            if addr in txn.write_buffer:
                return txn.write_buffer[addr]
            line = self._line(addr)
            if txn.seen_epoch != self.epoch:
                if not self._valid(txn):
                    self._abort(txn, CONFLICT)
                txn.seen_epoch = self.epoch
            if line not in txn.read_set:
                self._doom_others(txn.owner, self._writers.get(line))
                self._readers.setdefault(line, set()).add(txn.owner)
                if line in txn.write_lines:
                    txn.read_set[line] = txn.write_lines[line]
                else:
                    txn.read_set[line] = self.versions.get(line, 0)
                    self._touch(txn)
            return self.mem.read_word(addr)

    def write(self, txn: EmuTxn, addr: int, value: int, quiet: bool = False) -> None:
        self._check_active(txn)
        if not quiet:
            self.sched.yield_point(sch.TXN_ACCESS, "write")
        with self.mem.lock:
            self.mem.charge(txn.owner, self.config.access_ns)
            self._check_doomed(txn)
            line = self._line(addr)
            if line not in txn.write_lines:
                if self.mem.tracker is not None:
                    self.mem.tracker.write(line)
                self._doom_others(txn.owner, self._readers.get(line))
                self._doom_others(txn.owner, self._writers.get(line))
                self._writers.setdefault(line, set()).add(txn.owner)
                txn.write_lines[line] = txn.read_set.get(line, self.versions.get(line, 0))
                self._touch(txn)
            txn.write_buffer[addr] = value & MASK64

    def commit(self, txn: EmuTxn, label: str = "") -> None:
        """Validate and publish; raises :class:`TxnAborted` on failure."""
        self._check_active(txn)
        self.sched.yield_point(sch.TXN_COMMIT, label)
        with self.mem.lock:
            if txn.p_zero:
                if self.mem.tracker is not None:
                    self.mem.tracker.write("htm-rng")
            if txn.p_zero and self.rng.random() < txn.p_zero:
                self._abort(txn, ZERO)
            self._check_doomed(txn)
            if not self._valid(txn):
                self._abort(txn, CONFLICT)
            for addr, value in txn.write_buffer.items():
                self.mem.write_word(addr, value)
            if txn.write_lines:
                self.epoch += 1
                for line in txn.write_lines:
                    if self.mem.tracker is not None:
                        self.mem.tracker.write(line)
                    self.versions[line] = self.versions.get(line, 0) + 1
            self._release_lines(txn)
            txn.status = TxnStatus.COMMITTED
            self.open.pop(txn.owner, None)
            self.stats.commits += 1
            self.mem.fence(txn.owner)
            self.mem.charge(txn.owner, self.config.boundary_ns)

    def abort_explicit(self, txn: EmuTxn, tag: int):
        """Abort with an explicit code; never returns."""
        self._check_active(txn)
        with self.mem.lock:
            self._abort(txn, AbortCode(AbortKind.EXPLICIT, tag))

    def discard(self, txn: EmuTxn) -> None:
        """Drop an active transaction without counting an abort (crash unwinding)."""
        if txn.status is TxnStatus.ACTIVE:
            self._release_lines(txn)
            txn.status = TxnStatus.ABORTED
            self.open.pop(txn.owner, None)

    # -- non-transactional accesses ----------------------------------------

    def nontx_read(self, addr: int, tid: int | None = None, label: str = "") -> int:
        if label:
            self.sched.yield_point(sch.NONTX, label)
        if tid is not None:
            self.mem.charge(tid, self.config.access_ns)
        return self.mem.read_word(addr)

    def nontx_write(self, addr: int, value: int, tid: int | None = None,
                    label: str = "") -> None:
        """Plain store; conflicts with every transaction that touched the line."""
        if label:
            self.sched.yield_point(sch.NONTX, label)
        with self.mem.lock:
            if tid is not None:
                self.mem.charge(tid, self.config.access_ns)
            line = self._line(addr)
            if self.mem.tracker is not None:
                self.mem.tracker.write(line)
            self.mem.write_word(addr, value)
            self.versions[line] = self.versions.get(line, 0) + 1
            self.epoch += 1

    def compare_and_swap(self, addr: int, expected: int, new: int) -> bool:
        with self.mem.lock:
            if self.mem.read_word(addr) != expected:
                return False
            self.nontx_write(addr, new)
            return True
