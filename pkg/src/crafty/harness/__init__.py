"""Workloads, crash fuzzing, exploration, benchmarking and reporting."""

from .bank import Bank, BankConfig, Contention, InvariantViolation
from .btree import BTree, BTreeConfig, Mix, validate_tree
from .engines import DURABLE, ENGINES, make_engine, recovery_for
from .oracle import OracleResult, prefix_replay_oracle
from .runner import RunConfig, Scenario, build

__all__ = [
    "Bank", "BankConfig", "Contention", "InvariantViolation",
    "BTree", "BTreeConfig", "Mix", "validate_tree",
    "DURABLE", "ENGINES", "make_engine", "recovery_for",
    "OracleResult", "prefix_replay_oracle",
    "RunConfig", "Scenario", "build",
]
