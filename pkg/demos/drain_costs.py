"""Drains per transaction and emulated throughput for each engine.

A single thread runs 200 bank transactions with 10 writes each.  The undo
baseline drains before every write, the redo baseline once per
transaction, and Crafty about twice (log entries are drained by the next
hardware transaction boundary).

    python demos/drain_costs.py
"""

from __future__ import annotations

from crafty.harness.bench import run_bench
from crafty.harness.runner import RunConfig


def main() -> None:
    print(f"{'engine':<18}{'drain ns':>9}{'drains/txn':>12}{'txn/s (emulated)':>19}")
    for engine in ("undo", "redo", "crafty", "crafty-noredo", "crafty-novalidate", "htm-only"):
        for latency in (100, 300):
            rep = run_bench(RunConfig(engine=engine, threads=1, txns_per_thread=200,
                                      transfers_per_txn=5, latency_ns=latency))
            print(f"{engine:<18}{latency:>9}{rep.drains / rep.txns:>12.2f}"
                  f"{rep.throughput:>19,.0f}")


if __name__ == "__main__":
    main()
