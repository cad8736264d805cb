"""Post-crash recovery from persisted undo logs.

Recovery sees nothing but the crash snapshot and where each log lives.  For
every thread it walks backwards from the newest control entry, splitting
the log into *sequences*: runs of data entries concluded by a control
entry and preceded by another control entry (or by the log's history
boundary).  The newest sequence of a thread may be incomplete if the crash
hit between its flush and the next drain; it is then skipped.

The rollback set holds each thread's newest complete sequence plus every
sequence whose timestamp is at least the smallest of those.  Rolling them
back newest first restores the state as of that smallest timestamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .undo_log import (
    CONTROL_SENTINEL,
    ENTRY_WORDS,
    ControlEntry,
    DataEntry,
    LogMeta,
    NotPersisted,
    decode_entry,
)


class MalformedLog(Exception):
    pass


@dataclass(frozen=True)
class LogsMeta:
    """Log locations plus the address range data entries may refer to."""

    base: int
    logs: tuple[LogMeta, ...]
    data_lo: int
    data_hi: int

    @classmethod
    def from_layout(cls, layout) -> "LogsMeta":
        return cls(layout.base, tuple(layout.logs()), layout.data_start, layout.data_end)


@dataclass(frozen=True)
class PersistedSequence:
    tid: int
    control_slot: int
    ts: int
    # (slot, addr, old_value) in slot (program) order
    entries: tuple[tuple[int, int, int], ...]
    # position in the backwards walk; 0 is the thread's newest sequence
    age: int = 0
    # the control word alone cannot tell LOGGED from COMMITTED
    committed: bool | None = None

    @property
    def first_slot(self) -> int:
        return self.entries[0][0] if self.entries else self.control_slot


@dataclass
class RecoveredImage:
    words: np.ndarray
    rollback_frontier_ts: float
    rolled_back: list[PersistedSequence] = field(default_factory=list)


class LogView:
    """Decoded view of one thread's log inside a snapshot."""

    def __init__(self, snapshot: np.ndarray, meta: LogMeta, base: int,
                 data_lo: int = 0, data_hi: int = 1 << 64):
        i0 = (meta.base - base) // 8
        seg = snapshot[i0:i0 + ENTRY_WORDS * meta.capacity]
        self.meta = meta
        self.n = meta.capacity
        self.w0a = seg[0::2]
        self.w1a = seg[1::2]
        self.w0 = self.w0a.tolist()
        self.w1 = self.w1a.tolist()
        self.data_lo, self.data_hi = data_lo, data_hi

    def decode(self, slot: int, parity: int):
        e = decode_entry(self.w0[slot], self.w1[slot], parity)
        if isinstance(e, DataEntry):
            if e.addr and not (self.data_lo <= e.addr < self.data_hi):
                raise MalformedLog(f"log {self.meta.tid} slot {slot}: address {e.addr:#x}")
        elif isinstance(e, ControlEntry) and (self.w0[slot] >> 3) != CONTROL_SENTINEL:
            raise MalformedLog(f"log {self.meta.tid} slot {slot}: bad control sentinel")
        return e

    def prev(self, slot: int, parity: int) -> tuple[int, int]:
        if slot == 0:
            return self.n - 1, parity ^ 1
        return slot - 1, parity

    def next(self, slot: int, parity: int) -> tuple[int, int]:
        if slot == self.n - 1:
            return 0, parity ^ 1
        return slot + 1, parity

    def newest_control(self) -> tuple[int, int] | None:
        """Slot and parity of the most recently written control entry."""
        w0, w1 = self.w0a, self.w1a
        ctrl = ((w0 & np.uint64(4)) != 0) & ((w0 & np.uint64(1)) == (w1 & np.uint64(1)))
        idx = np.flatnonzero(ctrl)
        if idx.size == 0:
            return None
        ts = (w1[idx] & ~np.uint64(1)) | ((w0[idx] >> np.uint64(1)) & np.uint64(1))
        top = ts.max()
        slot = int(idx[int(np.argmax(ts))])
        parity = self.w0[slot] & 1
        # chunks of one global-lock section share a timestamp; the newest
        # is the last one reachable going forward
        pos, par = slot, parity
        for _ in range(self.n - 1):
            pos, par = self.next(pos, par)
            e = self.decode(pos, par)
            if isinstance(e, ControlEntry):
                if e.ts != int(top):
                    break
                slot, parity = pos, par
            elif not (isinstance(e, DataEntry) and e.addr):
                break
        return slot, parity

    def walk(self) -> Iterator[PersistedSequence]:
        """Complete sequences, newest first."""
        start = self.newest_control()
        if start is None:
            return
        tid = self.meta.tid
        ctrl, par = start
        ts = self.decode(ctrl, par).ts
        data: list[tuple[int, int, int]] = []
        newest, holey, age = True, False, 0
        pos, p = self.prev(ctrl, par)
        for _ in range(self.n - 1):
            e = self.decode(pos, p)
            if isinstance(e, ControlEntry):
                if not holey:
                    yield PersistedSequence(tid, ctrl, ts, tuple(reversed(data)), age)
                    age += 1
                ctrl, ts, data, holey, newest = pos, e.ts, [], False, False
            elif isinstance(e, DataEntry) and e.addr:
                data.append((pos, e.addr, e.old_value))
            elif newest and e is NotPersisted:
                # the thread's last sequence has unpersisted entries
                holey = True
            else:
                # a never-written slot (log origin) or the history boundary;
                # older sequences are gone, and all of them predate the
                # lower bound
                if not holey:
                    yield PersistedSequence(tid, ctrl, ts, tuple(reversed(data)), age)
                return
            pos, p = self.prev(pos, p)


def _views(snapshot, logs_meta: LogsMeta) -> list[LogView]:
    return [LogView(snapshot, m, logs_meta.base, logs_meta.data_lo, logs_meta.data_hi)
            for m in logs_meta.logs]


def scan_sequences(snapshot: np.ndarray, logs_meta: LogsMeta) -> dict[int, list[PersistedSequence]]:
    """Every recognizable complete sequence per thread, oldest first."""
    return {v.meta.tid: list(reversed(list(v.walk()))) for v in _views(snapshot, logs_meta)}


def rollback_set(sequences: dict[int, list[PersistedSequence]]) -> list[PersistedSequence]:
    lasts = [seqs[-1] for seqs in sequences.values() if seqs]
    if not lasts:
        return []
    low = min(s.ts for s in lasts)
    return [s for seqs in sequences.values() for s in seqs if s.ts >= low]


def _apply_order(seqs) -> list[PersistedSequence]:
    return sorted(seqs, key=lambda s: (s.ts, s.tid, -s.age), reverse=True)


def recover(snapshot: np.ndarray, logs_meta: LogsMeta) -> RecoveredImage:
    """Roll back the rollback set; the snapshot itself is not modified."""
    walks = [v.walk() for v in _views(snapshot, logs_meta)]
    heads = []
    for w in walks:
        first = next(w, None)
        heads.append(first)
    lasts = [h for h in heads if h is not None]
    img = snapshot.copy()
    if not lasts:
        return RecoveredImage(img, math.inf, [])
    low = min(s.ts for s in lasts)
    chosen: list[PersistedSequence] = []
    for head, w in zip(heads, walks):
        if head is None:
            continue
        chosen.append(head)
        for s in w:
            if s.ts < low:
                break
            chosen.append(s)
    base = logs_meta.base
    ordered = _apply_order(chosen)
    for s in ordered:
        for _slot, addr, old in reversed(s.entries):
            img[(addr - base) // 8] = old
    return RecoveredImage(img, low, ordered)
