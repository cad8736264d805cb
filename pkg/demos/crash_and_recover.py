"""Crash a bank run at random steps, recover, and check the result.

Each crash keeps a random subset of the in-flight cache lines.  Recovery
must yield the state after some prefix of the committed transactions in
timestamp order, with the total balance intact.

    python demos/crash_and_recover.py [crash points]
"""

from __future__ import annotations

import random
import sys

from crafty.harness.fuzz import CrashChecker
from crafty.harness.runner import RunConfig, build
from crafty.recovery import LogsMeta, recover
from crafty.scheduler import Schedule, Scheduler


def main(points: int = 10) -> None:
    cfg = RunConfig(engine="crafty", threads=4, txns_per_thread=20, contention="high",
                    accounts=16, log_capacity=64)
    rng = random.Random(7)
    for _ in range(points):
        step = rng.randrange(1, 1500)
        sched = Scheduler(Schedule(seed=rng.randrange(1 << 30), crash_point=step))
        sc = build(cfg, sched)
        sched.run(sc.thread_fns())
        snap = sc.system.mem.crash_snapshot(rng)
        rec = recover(snap, LogsMeta.from_layout(sc.layout))
        out = CrashChecker(sc)(snap)
        print(f"crash at step {step:4d}: {len(sc.system.commits):2d} committed, "
              f"{len(rec.rolled_back):2d} sequences rolled back, "
              f"recovered prefix {out.m:2d} -> {'ok' if out.ok else 'FAIL ' + out.reason}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 10)
