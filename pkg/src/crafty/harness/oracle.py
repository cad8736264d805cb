"""Prefix-replay oracle: is a recovered image some serial prefix of the run?"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class OracleResult:
    ok: bool
    # largest matching prefix length, None on failure
    m: int | None
    total: int
    # fewest differing words over all prefixes (0 when ok)
    closest: int

    def __bool__(self) -> bool:
        return self.ok


def prefix_replay_oracle(initial: np.ndarray, commits: Sequence, recovered: np.ndarray,
                         origin: int) -> OracleResult:
    """Replay ``commits`` in timestamp order onto ``initial``.

    ``initial`` and ``recovered`` are word arrays starting at address
    ``origin``; each commit has ``ts`` and a ``writes`` mapping of address to
    value.  Instead of materializing every prefix, track the number of words
    where the replayed state differs from ``recovered``.
    """
    ordered = sorted(commits, key=lambda c: c.ts)
    diff = np.flatnonzero(initial != recovered)
    mismatched = int(diff.size)
    cur: dict[int, int] = {}
    best_m = 0 if mismatched == 0 else None
    closest = mismatched
    for m, txn in enumerate(ordered, start=1):
        for addr, value in txn.writes.items():
            i = (addr - origin) >> 3
            if i < 0 or i >= initial.size:
                continue
            before = cur.get(i, int(initial[i]))
            target = int(recovered[i])
            mismatched += (value != target) - (before != target)
            cur[i] = value
        if mismatched == 0:
            best_m = m
        closest = min(closest, mismatched)
    return OracleResult(best_m is not None, best_m, len(ordered), closest)
