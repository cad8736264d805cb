"""Persistent B+ tree microbenchmark.

Nodes are 24-word blocks from the persistent pool, allocated inside
transactions.  Insertion splits full nodes on the way down; removal never
rebalances (leaves may become empty), which keeps the structural invariants
intact.  The root pointer lives in the first data word.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass

import numpy as np

from ..system import LINE_WORDS, Layout
from .bank import InvariantViolation

NODE_WORDS = 24
HDR, KEYS = 0, 1


class Mix(str, enum.Enum):
    INSERT_ONLY = "insert-only"
    MIXED = "mixed"


@dataclass
class BTreeConfig:
    mix: Mix = Mix.MIXED
    key_range: int = 2**16
    ops_per_thread: int = 25
    fanout: int = 8
    # mixed workload shares of lookups and removals; the rest are inserts
    lookup_share: float = 0.4
    remove_share: float = 0.2

    def __post_init__(self):
        self.mix = Mix(self.mix)
        if not 3 <= self.fanout <= (NODE_WORDS - 2) // 2:
            raise ValueError("fanout does not fit a node")


class _Nodes:
    """Field access for nodes through a transaction access object."""

    def __init__(self, acc, fanout: int):
        self.acc = acc
        self.max_keys = fanout - 1
        self.ptrs = KEYS + fanout
        self.next_ = self.ptrs + fanout

    def _a(self, n: int, i: int) -> int:
        return n + 8 * i

    def hdr(self, n: int) -> tuple[bool, int]:
        h = self.acc.read(n)
        return bool(h & 1), h >> 1

    def set_hdr(self, n: int, leaf: bool, count: int) -> None:
        self.acc.write(n, int(leaf) | (count << 1))

    def key(self, n: int, i: int) -> int:
        return self.acc.read(self._a(n, KEYS + i))

    def set_key(self, n: int, i: int, k: int) -> None:
        self.acc.write(self._a(n, KEYS + i), k)

    def ptr(self, n: int, i: int) -> int:
        return self.acc.read(self._a(n, self.ptrs + i))

    def set_ptr(self, n: int, i: int, p: int) -> None:
        self.acc.write(self._a(n, self.ptrs + i), p)

    def next(self, n: int) -> int:
        return self.acc.read(self._a(n, self.next_))

    def set_next(self, n: int, p: int) -> None:
        self.acc.write(self._a(n, self.next_), p)

    def new(self, leaf: bool) -> int:
        n = self.acc.alloc(NODE_WORDS)
        self.set_hdr(n, leaf, 0)
        self.set_next(n, 0)
        return n

    def child_index(self, n: int, count: int, key: int) -> int:
        i = 0
        while i < count and self.key(n, i) <= key:
            i += 1
        return i


def _split_child(t: _Nodes, parent: int, i: int, child: int) -> None:
    leaf, count = t.hdr(child)
    right = t.new(leaf)
    if leaf:
        keep = (count + 1) // 2
        moved = count - keep
        for j in range(moved):
            t.set_key(right, j, t.key(child, keep + j))
            t.set_ptr(right, j, t.ptr(child, keep + j))
        sep = t.key(right, 0)
        t.set_next(right, t.next(child))
        t.set_next(child, right)
        t.set_hdr(right, True, moved)
        t.set_hdr(child, True, keep)
    else:
        mid = count // 2
        sep = t.key(child, mid)
        moved = count - mid - 1
        for j in range(moved):
            t.set_key(right, j, t.key(child, mid + 1 + j))
        for j in range(moved + 1):
            t.set_ptr(right, j, t.ptr(child, mid + 1 + j))
        t.set_hdr(right, False, moved)
        t.set_hdr(child, False, mid)
    _, pcount = t.hdr(parent)
    for j in range(pcount, i, -1):
        t.set_key(parent, j, t.key(parent, j - 1))
        t.set_ptr(parent, j + 1, t.ptr(parent, j))
    t.set_key(parent, i, sep)
    t.set_ptr(parent, i + 1, right)
    t.set_hdr(parent, False, pcount + 1)


def tree_insert(acc, root_addr: int, key: int, value: int, fanout: int = 8) -> None:
    t = _Nodes(acc, fanout)
    root = acc.read(root_addr)
    if root == 0:
        root = t.new(True)
        acc.write(root_addr, root)
    _, count = t.hdr(root)
    if count == t.max_keys:
        top = t.new(False)
        t.set_ptr(top, 0, root)
        _split_child(t, top, 0, root)
        root = top
        acc.write(root_addr, root)
    node = root
    while True:
        leaf, count = t.hdr(node)
        if leaf:
            break
        i = t.child_index(node, count, key)
        child = t.ptr(node, i)
        if t.hdr(child)[1] == t.max_keys:
            _split_child(t, node, i, child)
            if key >= t.key(node, i):
                i += 1
            child = t.ptr(node, i)
        node = child
    pos = 0
    while pos < count and t.key(node, pos) < key:
        pos += 1
    if pos < count and t.key(node, pos) == key:
        t.set_ptr(node, pos, value)
        return
    for j in range(count, pos, -1):
        t.set_key(node, j, t.key(node, j - 1))
        t.set_ptr(node, j, t.ptr(node, j - 1))
    t.set_key(node, pos, key)
    t.set_ptr(node, pos, value)
    t.set_hdr(node, True, count + 1)


def _find_leaf(t: _Nodes, root: int, key: int) -> int:
    node = root
    while True:
        leaf, count = t.hdr(node)
        if leaf:
            return node
        node = t.ptr(node, t.child_index(node, count, key))


def tree_lookup(acc, root_addr: int, key: int, fanout: int = 8) -> int | None:
    t = _Nodes(acc, fanout)
    root = acc.read(root_addr)
    if root == 0:
        return None
    leaf = _find_leaf(t, root, key)
    _, count = t.hdr(leaf)
    for j in range(count):
        if t.key(leaf, j) == key:
            return t.ptr(leaf, j)
    return None


def tree_remove(acc, root_addr: int, key: int, fanout: int = 8) -> bool:
    t = _Nodes(acc, fanout)
    root = acc.read(root_addr)
    if root == 0:
        return False
    leaf = _find_leaf(t, root, key)
    _, count = t.hdr(leaf)
    for pos in range(count):
        if t.key(leaf, pos) == key:
            for j in range(pos, count - 1):
                t.set_key(leaf, j, t.key(leaf, j + 1))
                t.set_ptr(leaf, j, t.ptr(leaf, j + 1))
            t.set_hdr(leaf, True, count - 1)
            return True
    return False


class _ArrayAccess:
    """Read-only access over a word array (for checking snapshots)."""

    def __init__(self, words: np.ndarray, base: int):
        self.words = words
        self.base = base

    def read(self, addr: int) -> int:
        return int(self.words[(addr - self.base) // 8])


def validate_tree(words: np.ndarray, layout: Layout, fanout: int = 8) -> list[int]:
    """Check order and shape invariants; returns the keys in order."""
    acc = _ArrayAccess(words, layout.base)
    t = _Nodes(acc, fanout)
    root = acc.read(layout.data_addr(0))
    if root == 0:
        return []
    lo_addr, hi_addr = layout.pool_start, layout.data_end

    def fail(msg):
        raise InvariantViolation(f"B+ tree: {msg}")

    leaves: list[int] = []
    depths = set()

    def visit(n, lo, hi, depth):
        if not (lo_addr <= n < hi_addr) or (n - lo_addr) % layout.line_bytes:
            fail(f"bad node pointer {n:#x}")
        leaf, count = t.hdr(n)
        if count > t.max_keys:
            fail(f"node {n:#x} holds {count} keys")
        keys = [t.key(n, i) for i in range(count)]
        if keys != sorted(set(keys)):
            fail(f"node {n:#x} keys out of order")
        if any((lo is not None and k < lo) or (hi is not None and k >= hi) for k in keys):
            fail(f"node {n:#x} key outside separator range")
        if leaf:
            depths.add(depth)
            leaves.append(n)
            return keys
        if count == 0:
            fail(f"internal node {n:#x} without keys")
        out = []
        bounds = [lo] + keys + [hi]
        for i in range(count + 1):
            out += visit(t.ptr(n, i), bounds[i], bounds[i + 1], depth + 1)
        return out

    keys = visit(root, None, None, 0)
    if len(depths) > 1:
        fail("leaves at different depths")
    for a, b in zip(leaves, leaves[1:]):
        if t.next(a) != b:
            fail("leaf chain broken")
    if t.next(leaves[-1]) != 0:
        fail("last leaf has a successor")
    return keys


class BTree:
    def __init__(self, config: BTreeConfig, nthreads: int):
        self.cfg = config
        self.nthreads = nthreads

    def layout(self, nthreads: int | None = None, log_capacity: int = 4096) -> Layout:
        n = nthreads or self.nthreads
        # every insert allocates at most one node per level plus a new root
        nodes = 4 * n * self.cfg.ops_per_thread + 8
        return Layout(n, LINE_WORDS, pool_words=nodes * NODE_WORDS, log_capacity=log_capacity)

    def install(self, system) -> None:
        pass

    def root_addr(self, layout: Layout) -> int:
        return layout.data_addr(0)

    def make_txn(self, tid: int, rng: random.Random, layout: Layout):
        key = rng.randrange(1, self.cfg.key_range)
        value = rng.getrandbits(32) | 1
        root = self.root_addr(layout)
        fanout = self.cfg.fanout
        op = "insert"
        if self.cfg.mix is Mix.MIXED:
            r = rng.random()
            if r < self.cfg.lookup_share:
                op = "lookup"
            elif r < self.cfg.lookup_share + self.cfg.remove_share:
                op = "remove"
        if op == "lookup":
            return lambda acc: tree_lookup(acc, root, key, fanout)
        if op == "remove":
            return lambda acc: tree_remove(acc, root, key, fanout)
        return lambda acc: tree_insert(acc, root, key, value, fanout)

    def check(self, words: np.ndarray, layout: Layout) -> None:
        validate_tree(words, layout, self.cfg.fanout)
