"""Replay the classic two-thread interleaving step by step.

Thread 0 runs {p = q; r = 1} and thread 1 runs {q = 2; s = 3}.  Thread 1's
log phase commits before thread 0's redo, so its own redo fails the
gLastRedoTS check and it commits through the validate phase instead.

    python demos/two_thread_walkthrough.py
"""

from __future__ import annotations

from crafty.engine import CraftyEngine
from crafty.scheduler import Schedule, Scheduler
from crafty.system import Layout, System


def main() -> None:
    lay = Layout(nthreads=2, data_words=32, log_capacity=64)
    sched = Scheduler(Schedule(steps=[0, 0, 0, 1, 1, 0, 0]), granularity="coarse")
    system = System(lay, sched=sched)
    eng = CraftyEngine(system)
    p, q, r, s = (lay.data_addr(8 * i) for i in range(4))
    outcome = {}

    def t0():
        def body(acc):
            acc.write(p, acc.read(q))
            acc.write(r, 1)
        outcome[0] = eng.execute_transaction(0, body)

    def t1():
        def body(acc):
            acc.write(q, 2)
            acc.write(s, 3)
        outcome[1] = eng.execute_transaction(1, body)

    trace = sched.run([t0, t1])
    for i, (tid, (kind, label)) in enumerate(zip(trace.steps, trace.labels)):
        print(f"step {i:2d}  thread {tid}  {kind:<10} {label}")
    for tid in (0, 1):
        print(f"thread {tid} committed via {outcome[tid].path.value} at ts {outcome[tid].ts}")
    print(f"redo checks failed: {eng.stats.redo_failed}")
    names = dict(p=p, q=q, r=r, s=s)
    print("final:", ", ".join(f"{k}={system.mem.read_word(a)}" for k, a in names.items()))


if __name__ == "__main__":
    main()
