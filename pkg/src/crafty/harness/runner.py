"""Assembling a run: workload, system, engine and per-thread drivers."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..engine import EngineConfig
from ..htm import HtmConfig
from ..memory import NvmConfig
from ..system import Layout, System, SystemConfig
from .bank import Bank, BankConfig
from .btree import BTree, BTreeConfig
from .engines import make_engine


@dataclass
class RunConfig:
    engine: str = "crafty"
    workload: str = "bank"
    threads: int = 4
    contention: str = "medium"
    txns_per_thread: int = 25
    seed: int = 0
    latency_ns: int = 300
    log_capacity: int = 4096
    max_lag: int = 10**6
    retries: int = 5
    p_zero: float = 0.0
    sgl_p_zero: float | None = None
    # the last ``idle_threads`` threads run ``idle_txns`` transactions, then stop
    idle_threads: int = 0
    idle_txns: int = 1
    evict_word_prob: float = 0.05
    accounts: int | None = None
    transfers_per_txn: int = 5
    read_only_fraction: float = 0.0
    btree_mix: str = "mixed"
    key_range: int = 2**16

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in json.loads(text).items() if k in known})


def make_workload(cfg: RunConfig):
    if cfg.workload == "bank":
        return Bank(BankConfig(cfg.contention, cfg.accounts, cfg.transfers_per_txn,
                               read_only_fraction=cfg.read_only_fraction), cfg.threads)
    if cfg.workload == "btree":
        return BTree(BTreeConfig(mix=cfg.btree_mix, key_range=cfg.key_range,
                                 ops_per_thread=cfg.txns_per_thread), cfg.threads)
    raise ValueError(f"unknown workload {cfg.workload!r}")


@dataclass
class Scenario:
    cfg: RunConfig
    layout: Layout
    system: System
    engine: object
    workload: object
    initial: np.ndarray

    def thread_fns(self):
        return [self._driver(t) for t in range(self.cfg.threads)]

    def _driver(self, tid: int):
        cfg = self.cfg
        idle = tid >= cfg.threads - cfg.idle_threads
        count = cfg.idle_txns if idle else cfg.txns_per_thread

        def run():
            rng = random.Random(cfg.seed * 1_000_003 + tid)
            for _ in range(count):
                body = self.workload.make_txn(tid, rng, self.layout)
                self.engine.execute_transaction(tid, body)
        return run

    @property
    def data_origin(self) -> int:
        return self.layout.data_start

    def data(self, words: np.ndarray) -> np.ndarray:
        return words[self.layout.data_slice()]


def build(cfg: RunConfig, sched=None) -> Scenario:
    wl = make_workload(cfg)
    layout = wl.layout(cfg.threads, cfg.log_capacity)
    sysc = SystemConfig(
        nvm=NvmConfig(drain_latency_ns=cfg.latency_ns, evict_word_prob=cfg.evict_word_prob),
        htm=HtmConfig(p_zero=cfg.p_zero),
    )
    system = System(layout, sysc, sched=sched, seed=cfg.seed)
    wl.install(system)
    ecfg = EngineConfig(variant="crafty", retries=cfg.retries, max_lag=cfg.max_lag,
                        sgl_p_zero=cfg.sgl_p_zero)
    engine = make_engine(cfg.engine, system, ecfg)
    return Scenario(cfg, layout, system, engine, wl, system.mem.persisted.copy())
