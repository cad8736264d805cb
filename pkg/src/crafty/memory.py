"""Emulated non-volatile memory with explicit persist ordering.

Every 8-byte word has two views: the *volatile* view, which is what loads
observe, and the *persisted* view, which is what survives a crash.  Writes
only touch the volatile view and mark the word dirty.  A word reaches the
persisted view through one of three routes:

* ``flush_line`` followed by ``drain`` from the same thread,
* ``background_evict`` (caches may write back dirty lines at any time),
* ``crash_snapshot`` resolving each in-flight word to old-or-new.

Speculative writes of emulated hardware transactions never reach this
module before commit; they live in the transaction's write buffer.
"""

from __future__ import annotations

import enum
import random
import threading
from dataclasses import dataclass, field

import numpy as np

WORD = 8
MASK64 = (1 << 64) - 1


class MemoryError_(Exception):
    """Base class for addressing errors."""


class OutOfRegion(MemoryError_):
    pass


class Misaligned(MemoryError_):
    pass


class WordState(enum.IntEnum):
    CLEAN = 0
    DIRTY = 1
    FLUSH_PENDING = 2


@dataclass
class PersistCounters:
    flushes: int = 0
    drains: int = 0
    words_persisted: int = 0

    def copy(self) -> "PersistCounters":
        return PersistCounters(self.flushes, self.drains, self.words_persisted)


@dataclass
class NvmConfig:
    line_size: int = 64
    drain_latency_ns: int = 300
    skip_identical: bool = True
    # "word" or "line": unit that persists atomically on a crash or eviction
    granularity: str = "word"
    # per-word probability that an eviction pass writes a dirty word back
    evict_word_prob: float = 0.05


@dataclass
class _Pending:
    # word index -> (write sequence number, value) captured at flush time
    words: dict[int, tuple[int, int]] = field(default_factory=dict)


class NvmImage:
    """Word-addressed persistent region with a volatile and a persisted view."""

    def __init__(self, base: int, size_words: int, config: NvmConfig | None = None):
        if base % WORD:
            raise Misaligned(hex(base))
        self.base = base
        self.size_words = size_words
        self.config = config or NvmConfig()
        if self.config.line_size % WORD:
            raise ValueError("line size must be a multiple of 8 bytes")
        self.line_words = self.config.line_size // WORD
        self.volatile = np.zeros(size_words, dtype=np.uint64)
        self.persisted = np.zeros(size_words, dtype=np.uint64)
        self._state: dict[int, WordState] = {}
        self._seq: dict[int, int] = {}
        self._persisted_seq: dict[int, int] = {}
        self._write_seq = 0
        self._pending: dict[int, _Pending] = {}
        self.counters = PersistCounters()
        self.emulated_ns: dict[int, int] = {}
        self.lock = threading.RLock()
        # scheduler footprint recorder (see crafty.scheduler.Footprint)
        self.tracker = None

    # -- addressing -----------------------------------------------------

    @property
    def end(self) -> int:
        return self.base + self.size_words * WORD

    def index(self, addr: int) -> int:
        if addr % WORD:
            raise Misaligned(hex(addr))
        idx = (addr - self.base) >> 3
        if idx < 0 or idx >= self.size_words:
            raise OutOfRegion(hex(addr))
        return idx

    def addr_of(self, idx: int) -> int:
        return self.base + idx * WORD

    def line_of(self, addr: int) -> int:
        return (addr - self.base) // self.config.line_size

    def word_state(self, addr: int) -> WordState:
        return self._state.get(self.index(addr), WordState.CLEAN)

    def dirty_words(self) -> list[int]:
        """Indices of words whose persisted value may lag the volatile one."""
        return sorted(self._state)

    # -- emulated time --------------------------------------------------

    def charge(self, tid: int, ns: int) -> None:
        self.emulated_ns[tid] = self.emulated_ns.get(tid, 0) + ns

    # -- data path ------------------------------------------------------

    def read_word(self, addr: int) -> int:
        idx = self.index(addr)
        if self.tracker is not None:
            self.tracker.read(idx // self.line_words)
        return int(self.volatile[idx])

    def read_persisted(self, addr: int) -> int:
        idx = self.index(addr)
        if self.tracker is not None:
            self.tracker.read(idx // self.line_words)
        return int(self.persisted[idx])

    def write_word(self, addr: int, value: int) -> None:
        idx = self.index(addr)
        value &= MASK64
        with self.lock:
            tr = self.tracker
            if self.config.skip_identical and int(self.volatile[idx]) == value:
                if tr is not None:
                    tr.read(idx // self.line_words)
                return
            if tr is not None:
                tr.write(idx // self.line_words)
            self._write_seq += 1
            self._seq[idx] = self._write_seq
            self.volatile[idx] = value
            self._state[idx] = WordState.DIRTY

    def flush_line(self, addr: int, tid: int) -> None:
        """Schedule write-back of every dirty word in ``addr``'s line."""
        idx = self.index(addr)
        first = idx - (idx % self.line_words)
        with self.lock:
            self.counters.flushes += 1
            if self.tracker is not None:
                self.tracker.write(idx // self.line_words)
            pend = self._pending.setdefault(tid, _Pending())
            for w in range(first, min(first + self.line_words, self.size_words)):
                if self._state.get(w) == WordState.DIRTY:
                    self._state[w] = WordState.FLUSH_PENDING
                    pend.words[w] = (self._seq[w], int(self.volatile[w]))

    def has_pending(self, tid: int) -> bool:
        p = self._pending.get(tid)
        return bool(p and p.words)

    def drain(self, tid: int, charge_to: int | None = None) -> None:
        """Wait for this thread's flushes; charges one drain latency.

        ``charge_to`` bills the latency to another id, for callers that
        flush and drain in a shared persist domain.
        """
        with self.lock:
            self.counters.drains += 1
            self.charge(tid if charge_to is None else charge_to, self.config.drain_latency_ns)
            pend = self._pending.pop(tid, None)
            if pend is None:
                return
            tr = self.tracker
            for w, (seq, value) in pend.words.items():
                if tr is not None:
                    tr.write(w // self.line_words)
                self._persist(w, seq, value)

    def fence(self, tid: int) -> None:
        """Drain semantics of a hardware-transaction boundary.

        Only charged when the thread actually has flushes outstanding.
        """
        if self.has_pending(tid):
            self.drain(tid)

    def _persist(self, w: int, seq: int, value: int) -> None:
        if seq <= self._persisted_seq.get(w, 0):
            return
        self._persisted_seq[w] = seq
        self.persisted[w] = value
        self.counters.words_persisted += 1
        if self._seq.get(w) == seq:
            self._state.pop(w, None)

    def _units(self, words: list[int]) -> list[list[int]]:
        if self.config.granularity == "line":
            groups: dict[int, list[int]] = {}
            for w in words:
                groups.setdefault(w // self.line_words, []).append(w)
            return list(groups.values())
        return [[w] for w in words]

    def background_evict(self, rng: random.Random) -> int:
        """Write back a seed-chosen subset of in-flight words.  Returns count."""
        with self.lock:
            if not self._state:
                return 0
            p = self.config.evict_word_prob
            n = 0
            for unit in self._units(sorted(self._state)):
                if rng.random() < p:
                    for w in unit:
                        self._persist(w, self._seq[w], int(self.volatile[w]))
                        n += 1
            return n

    def crash_snapshot(self, rng: random.Random | None = None, resolve=None) -> np.ndarray:
        """Persisted words after a crash at this instant.

        Each in-flight word independently ends up old or new.  ``resolve``
        may force the outcome: ``True`` (all new), ``False`` (all old) or a
        collection of word indices that persist.
        """
        with self.lock:
            snap = self.persisted.copy()
            units = self._units(sorted(self._state))
            for unit in units:
                if resolve is True:
                    take = True
                elif resolve is False:
                    take = False
                elif resolve is not None:
                    take = unit[0] in resolve
                else:
                    take = (rng or random).random() < 0.5
                if take:
                    for w in unit:
                        snap[w] = self.volatile[w]
            return snap

    def in_flight_units(self) -> list[list[int]]:
        with self.lock:
            return self._units(sorted(self._state))

    def persist_all(self) -> None:
        """Quiesce: every in-flight word reaches the persisted view."""
        with self.lock:
            for w in list(self._state):
                self._persist(w, self._seq[w], int(self.volatile[w]))
            self._pending.clear()


def dump_snapshot(snapshot: np.ndarray, path) -> None:
    """Raw little-endian 64-bit words."""
    snapshot.astype("<u8").tofile(path)


def load_snapshot(path) -> np.ndarray:
    return np.fromfile(path, dtype="<u8").astype(np.uint64)
