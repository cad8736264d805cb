"""Address-space layout and the bundle of emulated machine components."""

from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass, field

from .htm import Htm, HtmConfig
from .memory import NvmConfig, NvmImage
from .scheduler import NullScheduler
from .undo_log import ENTRY_WORDS, LogMeta, ThreadLog

LINE_WORDS = 8

# one cache line per global so unrelated globals never conflict
G_LAST_REDO_TS = 0
TS_LOWER_BOUND = 1
SGL = 2
BASELINE_LOCK = 3
N_GLOBALS = 4


@dataclass(frozen=True)
class Layout:
    """Word layout of the emulated persistent region.

    ``[globals][per-thread meta][data][pool][log 0]...[log n-1]``, every
    part cache-line aligned.  Globals and per-thread meta words are volatile
    bookkeeping that merely share the address space (so the emulated HTM
    tracks them); recovery never reads them.
    """

    nthreads: int
    data_words: int
    pool_words: int = 0
    log_capacity: int = 4096
    base: int = 0x10000
    line_bytes: int = 64

    def _lines(self, words: int) -> int:
        return -(-words // LINE_WORDS)

    @property
    def meta_start(self) -> int:
        return self.base + N_GLOBALS * self.line_bytes

    @property
    def data_start(self) -> int:
        return self.meta_start + self.nthreads * self.line_bytes

    @property
    def pool_start(self) -> int:
        return self.data_start + self._lines(self.data_words) * self.line_bytes

    @property
    def data_end(self) -> int:
        """End of everything the recovery oracle compares (data and pool)."""
        return self.pool_start + self._lines(self.pool_words) * self.line_bytes

    @property
    def log_start(self) -> int:
        return self.data_end

    @property
    def log_bytes(self) -> int:
        return self.log_capacity * ENTRY_WORDS * 8

    @property
    def size_words(self) -> int:
        return (self.log_start - self.base) // 8 + self.nthreads * self.log_capacity * ENTRY_WORDS

    def global_addr(self, which: int) -> int:
        return self.base + which * self.line_bytes

    def meta_addr(self, tid: int) -> int:
        return self.meta_start + tid * self.line_bytes

    def log_meta(self, tid: int) -> LogMeta:
        return LogMeta(tid, self.log_start + tid * self.log_bytes, self.log_capacity)

    def logs(self) -> list[LogMeta]:
        return [self.log_meta(t) for t in range(self.nthreads)]

    def data_addr(self, word: int) -> int:
        return self.data_start + 8 * word

    def data_slice(self) -> slice:
        return slice((self.data_start - self.base) // 8, (self.data_end - self.base) // 8)

    def to_json(self) -> str:
        return json.dumps({
            "nthreads": self.nthreads, "data_words": self.data_words,
            "pool_words": self.pool_words, "log_capacity": self.log_capacity,
            "base": self.base, "line_bytes": self.line_bytes,
            "logs": [m.to_json() for m in self.logs()],
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Layout":
        d = json.loads(text)
        return cls(d["nthreads"], d["data_words"], d.get("pool_words", 0),
                   d.get("log_capacity", 4096), d.get("base", 0x10000),
                   d.get("line_bytes", 64))


class Clock:
    """Globally ordered timestamp source (fetch-and-add).

    Timestamps are even.  Bit 0 of a control entry's timestamp is stored in
    the address word, so with even timestamps overwriting LOGGED with
    COMMITTED changes only the value word and cannot tear.
    """

    STEP = 2

    def __init__(self, start: int = 2):
        self._it = itertools.count(start, self.STEP)
        self._last = start - self.STEP
        self._lock = threading.Lock()
        self.tracker = None

    def next(self) -> int:
        with self._lock:
            if self.tracker is not None:
                self.tracker.write("clock")
            self._last = next(self._it)
            return self._last

    @property
    def value(self) -> int:
        if self.tracker is not None:
            self.tracker.read("clock")
        return self._last


class PoolAllocator:
    """Volatile allocator over the pool part of the persistent region.

    Blocks are cache-line aligned.  Allocator state is not persistent; only
    the words written into blocks are.
    """

    def __init__(self, start: int, end: int, line_bytes: int = 64):
        self.start = start
        self.end = end
        self.line_bytes = line_bytes
        self._bump = start
        self._free: dict[int, list[int]] = {}
        self._size: dict[int, int] = {}
        self._lock = threading.Lock()
        self.tracker = None

    def _round(self, nwords: int) -> int:
        nbytes = nwords * 8
        return -(-nbytes // self.line_bytes) * self.line_bytes

    def alloc(self, nwords: int) -> int:
        size = self._round(nwords)
        if self.tracker is not None:
            self.tracker.write("alloc")
        with self._lock:
            bucket = self._free.get(size)
            if bucket:
                addr = bucket.pop()
            else:
                if self._bump + size > self.end:
                    raise MemoryError("persistent pool exhausted")
                addr = self._bump
                self._bump += size
            self._size[addr] = size
            return addr

    def free(self, addr: int) -> None:
        if self.tracker is not None:
            self.tracker.write("alloc")
        with self._lock:
            size = self._size.pop(addr)
            self._free.setdefault(size, []).append(addr)

    def usable_words(self, addr: int) -> int:
        return self._size[addr] // 8


@dataclass
class CommittedTxn:
    ts: int
    tid: int
    path: str
    writes: dict[int, int]


@dataclass
class CommitLog:
    """Metadata about committed transactions, kept outside the modeled NVM."""

    txns: list[CommittedTxn] = field(default_factory=list)

    def record(self, ts: int, tid: int, path: str, writes: dict[int, int]) -> None:
        self.txns.append(CommittedTxn(ts, tid, path, dict(writes)))

    def __len__(self) -> int:
        return len(self.txns)


@dataclass
class SystemConfig:
    nvm: NvmConfig = field(default_factory=NvmConfig)
    htm: HtmConfig = field(default_factory=HtmConfig)
    evict: bool = True


class System:
    """Memory, HTM, clock, allocator and commit log sharing one scheduler."""

    def __init__(self, layout: Layout, config: SystemConfig | None = None,
                 sched=None, seed: int = 0):
        self.layout = layout
        self.config = config or SystemConfig()
        self.sched = sched or NullScheduler()
        self.mem = NvmImage(layout.base, layout.size_words, self.config.nvm)
        self.htm = Htm(self.mem, self.config.htm, self.sched, seed=seed)
        self.clock = Clock()
        self.alloc = PoolAllocator(layout.pool_start, layout.data_end, layout.line_bytes)
        self.commits = CommitLog()
        tracker = getattr(self.sched, "footprint", None)
        self.mem.tracker = self.clock.tracker = self.alloc.tracker = tracker
        self.logs = [ThreadLog(layout.log_meta(t), layout.meta_addr(t))
                     for t in range(layout.nthreads)]
        if self.config.evict and hasattr(self.sched, "step_hooks"):
            self.sched.step_hooks.append(self._evict_hook)

    def _evict_hook(self, step, sched):
        self.mem.background_evict(sched.evict_rng)

    def gaddr(self, which: int) -> int:
        return self.layout.global_addr(which)

    def initial_image(self):
        return self.mem.volatile.copy()
