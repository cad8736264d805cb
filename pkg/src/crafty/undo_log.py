"""Per-thread circular undo log with stolen-bit entry encoding.

An entry is two little-endian 64-bit words, ``addr_word`` then
``value_word``:

========  =====================================================
bits      addr_word
========  =====================================================
63..3     ``address >> 3`` (data) or ``CONTROL_SENTINEL`` (control)
2         0 = data entry, 1 = control entry
1         bit 0 of the value / timestamp
0         wraparound parity
========  =====================================================

``value_word`` holds the old value (data) or timestamp (control) with
bit 0 replaced by the wraparound parity, so each word can be checked for
persistence on its own.  The parity of lap ``n`` is ``1`` for even ``n``;
a zero-filled log therefore reads as "not persisted" on the first lap.

LOGGED and COMMITTED share one control entry kind: committing overwrites
the timestamp in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .memory import MASK64

CONTROL_SENTINEL = 1
ENTRY_WORDS = 2
ENTRY_BYTES = 16

# per-thread metadata words (volatile bookkeeping, one cache line)
META_CURSOR = 0  # global write index: lap * capacity + slot
META_LAST_TS = 1  # LOGGED timestamp of the thread's last committed transaction
META_HALF_MAX = 2  # newest control ts in half 0 / half 1 (two words)
META_HALF_FIRST = 4  # oldest control ts in half 0 / half 1 (two words)
# earliest LOGGED ts of a transaction still in flight, 0 when idle
META_BUSY = 6


class LogMaintenanceRequired(Exception):
    """Reusing the next half of the log could discard entries recovery needs."""

    def __init__(self, horizon: int):
        super().__init__(f"overwrite horizon {horizon}")
        self.horizon = horizon


class SlotMismatch(Exception):
    pass


@dataclass(frozen=True)
class DataEntry:
    addr: int
    old_value: int


@dataclass(frozen=True)
class ControlEntry:
    ts: int


class _NotPersisted:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "NotPersisted"

    def __bool__(self) -> bool:
        return False


NotPersisted = _NotPersisted()


def lap_parity(lap: int) -> int:
    return 1 - (lap & 1)


def encode_data(addr: int, value: int, parity: int) -> tuple[int, int]:
    if addr % 8:
        raise ValueError(f"unaligned address {addr:#x}")
    value &= MASK64
    w0 = (addr & ~7 & MASK64) | ((value & 1) << 1) | parity
    w1 = (value & ~1 & MASK64) | parity
    return w0, w1


def encode_control(ts: int, parity: int) -> tuple[int, int]:
    ts &= MASK64
    w0 = (CONTROL_SENTINEL << 3) | 0b100 | ((ts & 1) << 1) | parity
    w1 = (ts & ~1 & MASK64) | parity
    return w0, w1


def decode_entry(w0: int, w1: int, expected_parity: int):
    """Decode one entry, or return ``NotPersisted`` if either word is stale."""
    if (w0 & 1) != expected_parity or (w1 & 1) != expected_parity:
        return NotPersisted
    value = (w1 & ~1 & MASK64) | ((w0 >> 1) & 1)
    if w0 & 0b100:
        return ControlEntry(value)
    return DataEntry(w0 & ~7 & MASK64, value)


def is_control_word(w0: int) -> bool:
    return bool(w0 & 0b100) and (w0 >> 3) == CONTROL_SENTINEL


class WordIO(Protocol):
    def get(self, addr: int) -> int: ...

    def put(self, addr: int, value: int) -> None: ...


@dataclass(frozen=True)
class LogMeta:
    """Where a thread's log lives; all recovery needs besides the snapshot."""

    tid: int
    base: int
    capacity: int

    def slot_addr(self, slot: int) -> int:
        return self.base + slot * ENTRY_BYTES

    def to_json(self) -> dict:
        return {"tid": self.tid, "base": self.base, "capacity": self.capacity}

    @classmethod
    def from_json(cls, d: dict) -> "LogMeta":
        return cls(int(d["tid"]), int(d["base"]), int(d["capacity"]))


class ThreadLog:
    """A thread's circular log plus its volatile cursor words.

    All state lives in emulated memory and is accessed through a
    :class:`WordIO`, so appends can run inside an emulated transaction
    (the Log phase), as plain stores under the global lock, or on behalf of
    another thread during log maintenance.
    """

    def __init__(self, meta: LogMeta, meta_addr: int):
        if meta.capacity < 4 or meta.capacity % 2:
            raise ValueError("log capacity must be an even number >= 4")
        self.meta = meta
        self.meta_addr = meta_addr
        self.half = meta.capacity // 2

    @property
    def tid(self) -> int:
        return self.meta.tid

    @property
    def capacity(self) -> int:
        return self.meta.capacity

    def _m(self, word: int) -> int:
        return self.meta_addr + 8 * word

    # -- cursor ---------------------------------------------------------

    def cursor(self, io: WordIO) -> int:
        return io.get(self._m(META_CURSOR))

    def slot_of(self, g: int) -> int:
        return g % self.capacity

    def parity_of(self, g: int) -> int:
        return lap_parity(g // self.capacity)

    def last_committed_ts(self, io: WordIO) -> int:
        return io.get(self._m(META_LAST_TS))

    def set_last_committed_ts(self, io: WordIO, ts: int) -> None:
        io.put(self._m(META_LAST_TS), ts)

    def overwrite_horizon(self, io: WordIO, half: int) -> int:
        """Newest timestamp that reusing ``half`` would discard.

        Covers every control entry in the half plus the terminator of a
        sequence that starts in it and ends in the other half.
        """
        newest = io.get(self._m(META_HALF_MAX + half))
        straddle = io.get(self._m(META_HALF_FIRST + (1 - half)))
        return max(newest, straddle)

    def crossing(self, g: int) -> int | None:
        """Half index entered by write index ``g``, if ``g`` starts a half."""
        slot = self.slot_of(g)
        if slot % self.half == 0 and g >= self.half:
            return slot // self.half
        return None

    # -- appends --------------------------------------------------------

    def _write(self, io: WordIO, g: int, words: tuple[int, int]) -> int:
        slot = self.slot_of(g)
        addr = self.meta.slot_addr(slot)
        io.put(addr, words[0])
        io.put(addr + 8, words[1])
        half = slot // self.half
        if slot % self.half == 0:
            io.put(self._m(META_HALF_MAX + half), 0)
            io.put(self._m(META_HALF_FIRST + half), 0)
        io.put(self._m(META_CURSOR), g + 1)
        return slot

    def append_data_entry(self, io: WordIO, addr: int, old_value: int,
                          lower_bound: int | None = None) -> int:
        """Append ``<addr, old_value>`` at the cursor; returns the slot.

        With ``lower_bound`` set, entering a new half first checks that
        every entry about to be reused is older than it.
        """
        g = self.cursor(io)
        self._check_overwrite(io, g, lower_bound)
        return self._write(io, g, encode_data(addr, old_value, self.parity_of(g)))

    def append_control_entry(self, io: WordIO, ts: int,
                             lower_bound: int | None = None) -> int:
        g = self.cursor(io)
        self._check_overwrite(io, g, lower_bound)
        slot = self._write(io, g, encode_control(ts, self.parity_of(g)))
        half = slot // self.half
        io.put(self._m(META_HALF_MAX + half), ts)
        if io.get(self._m(META_HALF_FIRST + half)) == 0:
            io.put(self._m(META_HALF_FIRST + half), ts)
        return slot

    def _check_overwrite(self, io: WordIO, g: int, lower_bound: int | None) -> None:
        if lower_bound is None:
            return
        half = self.crossing(g)
        if half is None:
            return
        horizon = self.overwrite_horizon(io, half)
        if horizon and horizon >= lower_bound:
            raise LogMaintenanceRequired(horizon)

    def set_committed_timestamp(self, io: WordIO, slot: int, ts: int) -> None:
        """Overwrite the control entry at ``slot`` with the commit timestamp."""
        addr = self.meta.slot_addr(slot)
        w0 = io.get(addr)
        if not is_control_word(w0):
            raise SlotMismatch(f"slot {slot} does not hold a control entry")
        old = decode_entry(w0, io.get(addr + 8), w0 & 1)
        new0, new1 = encode_control(ts, w0 & 1)
        io.put(addr, new0)
        io.put(addr + 8, new1)
        half = slot // self.half
        if io.get(self._m(META_HALF_MAX + half)) == getattr(old, "ts", None):
            io.put(self._m(META_HALF_MAX + half), ts)
        if io.get(self._m(META_HALF_FIRST + half)) == getattr(old, "ts", None):
            io.put(self._m(META_HALF_FIRST + half), ts)

    def read_entry(self, io: WordIO, slot: int, parity: int):
        addr = self.meta.slot_addr(slot)
        return decode_entry(io.get(addr), io.get(addr + 8), parity)

    def entry_lines(self, first_g: int, end_g: int) -> list[int]:
        """Addresses covering the entries written at indices ``[first_g, end_g)``."""
        addrs = []
        for g in range(first_g, end_g):
            addrs.append(self.meta.slot_addr(self.slot_of(g)))
        return addrs
