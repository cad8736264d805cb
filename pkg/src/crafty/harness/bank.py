"""Bank microbenchmark: random transfers between cache-line-aligned accounts."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass

import numpy as np

from ..memory import MASK64
from ..system import LINE_WORDS, Layout


class InvariantViolation(Exception):
    pass


class Contention(str, enum.Enum):
    HIGH = "high"
    MEDIUM = "medium"
    NONE = "none"


ACCOUNTS = {Contention.HIGH: 1024, Contention.MEDIUM: 4096, Contention.NONE: 4096}


@dataclass
class BankConfig:
    contention: Contention = Contention.MEDIUM
    # defaults to the contention level's account count
    accounts: int | None = None
    transfers_per_txn: int = 5
    initial_balance: int = 1000
    max_amount: int = 100
    # fraction of transactions that only read two balances
    read_only_fraction: float = 0.0

    def __post_init__(self):
        self.contention = Contention(self.contention)
        if self.accounts is None:
            self.accounts = ACCOUNTS[self.contention]

    @property
    def writes_per_txn(self) -> int:
        return 2 * self.transfers_per_txn


class Bank:
    def __init__(self, config: BankConfig, nthreads: int):
        self.cfg = config
        self.nthreads = nthreads
        if config.contention is Contention.NONE and config.accounts < 2 * nthreads:
            raise ValueError("too few accounts to partition")

    @property
    def data_words(self) -> int:
        return self.cfg.accounts * LINE_WORDS

    def layout(self, nthreads: int | None = None, log_capacity: int = 4096) -> Layout:
        return Layout(nthreads or self.nthreads, self.data_words, log_capacity=log_capacity)

    def addr(self, layout: Layout, account: int) -> int:
        return layout.data_addr(account * LINE_WORDS)

    def install(self, system) -> None:
        """Write the initial balances straight into both memory views."""
        mem, lay = system.mem, system.layout
        for i in range(self.cfg.accounts):
            idx = mem.index(self.addr(lay, i))
            mem.volatile[idx] = self.cfg.initial_balance
            mem.persisted[idx] = self.cfg.initial_balance

    def _range(self, tid: int) -> tuple[int, int]:
        n = self.cfg.accounts
        if self.cfg.contention is Contention.NONE:
            per = n // self.nthreads
            return tid * per, (tid + 1) * per
        return 0, n

    def make_txn(self, tid: int, rng: random.Random, layout: Layout):
        """Pre-drawn transfers, so re-executions perform identical accesses."""
        lo, hi = self._range(tid)
        if self.cfg.read_only_fraction and rng.random() < self.cfg.read_only_fraction:
            a, b = (self.addr(layout, x) for x in rng.sample(range(lo, hi), 2))
            return lambda acc: (acc.read(a) + acc.read(b)) & MASK64
        plan = []
        for _ in range(self.cfg.transfers_per_txn):
            src, dst = rng.sample(range(lo, hi), 2)
            plan.append((self.addr(layout, src), self.addr(layout, dst),
                         rng.randint(1, self.cfg.max_amount)))

        def body(acc):
            for src, dst, amount in plan:
                acc.write(src, (acc.read(src) - amount) & MASK64)
                acc.write(dst, (acc.read(dst) + amount) & MASK64)
        return body

    def total(self, words: np.ndarray, layout: Layout) -> int:
        """Sum of balances (mod 2**64) in a full-region word array."""
        first = (layout.data_start - layout.base) // 8
        bal = words[first:first + self.data_words:LINE_WORDS]
        return int(bal.sum(dtype=np.uint64))

    def expected_total(self) -> int:
        return (self.cfg.accounts * self.cfg.initial_balance) & MASK64

    def check(self, words: np.ndarray, layout: Layout) -> None:
        got = self.total(words, layout)
        if got != self.expected_total():
            raise InvariantViolation(f"balance total {got} != {self.expected_total()}")
