from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crafty.memory import MASK64
from crafty.undo_log import (
    ControlEntry,
    DataEntry,
    LogMaintenanceRequired,
    LogMeta,
    NotPersisted,
    SlotMismatch,
    ThreadLog,
    decode_entry,
    encode_control,
    encode_data,
    is_control_word,
    lap_parity,
)


class DictIO(dict):
    def get(self, addr, default=0):
        return super().get(addr, default)

    def put(self, addr, value):
        self[addr] = value


def make_log(capacity=8):
    return ThreadLog(LogMeta(0, 0x1000, capacity), meta_addr=0x100), DictIO()


def test_data_encoding_bit_layout():
    # hand-computed: addr 0x40, value 0b101 (bit 0 set), parity 1
    w0, w1 = encode_data(0x40, 5, 1)
    assert w0 == 0x40 | 0b010 | 1
    assert w1 == 4 | 1
    assert decode_entry(w0, w1, 1) == DataEntry(0x40, 5)


def test_control_encoding_bit_layout():
    w0, w1 = encode_control(6, 0)
    assert w0 == (1 << 3) | 0b100
    assert w1 == 6
    assert is_control_word(w0)
    assert decode_entry(w0, w1, 0) == ControlEntry(6)


def test_unaligned_address_rejected():
    with pytest.raises(ValueError):
        encode_data(0x41, 0, 0)


def test_lap_parity_alternates_and_zero_memory_is_stale():
    assert [lap_parity(n) for n in range(4)] == [1, 0, 1, 0]
    assert decode_entry(0, 0, lap_parity(0)) is NotPersisted
    assert not NotPersisted


@pytest.mark.parametrize("which", [0, 1])
def test_one_stale_word_means_not_persisted(which):
    w = list(encode_data(0x80, 0xDEAD, 1))
    w[which] ^= 1
    assert decode_entry(*w, 1) is NotPersisted


@settings(max_examples=500)
@given(st.integers(0, (1 << 61) - 1).map(lambda a: a * 8),
       st.integers(0, MASK64), st.integers(0, 1))
def test_data_roundtrip(addr, value, parity):
    w0, w1 = encode_data(addr, value, parity)
    assert decode_entry(w0, w1, parity) == DataEntry(addr, value)
    assert decode_entry(w0, w1, parity ^ 1) is NotPersisted
    assert not is_control_word(w0)


@settings(max_examples=300)
@given(st.integers(0, MASK64), st.integers(0, 1))
def test_control_roundtrip(ts, parity):
    w0, w1 = encode_control(ts, parity)
    assert decode_entry(w0, w1, parity) == ControlEntry(ts)


def test_capacity_validation():
    with pytest.raises(ValueError):
        ThreadLog(LogMeta(0, 0, 6 + 1), 0)
    with pytest.raises(ValueError):
        ThreadLog(LogMeta(0, 0, 2), 0)


def test_append_and_read_back():
    log, io = make_log()
    s0 = log.append_data_entry(io, 0x2000, 11)
    s1 = log.append_control_entry(io, 4)
    assert (s0, s1) == (0, 1)
    assert log.cursor(io) == 2
    assert log.read_entry(io, 0, 1) == DataEntry(0x2000, 11)
    assert log.read_entry(io, 1, 1) == ControlEntry(4)


def test_second_lap_flips_parity():
    log, io = make_log(capacity=4)
    for i in range(5):
        log.append_data_entry(io, 0x2000, i)
    assert log.read_entry(io, 0, 0) == DataEntry(0x2000, 4)
    assert log.read_entry(io, 0, 1) is NotPersisted
    assert log.read_entry(io, 1, 1) == DataEntry(0x2000, 1)


def test_commit_overwrites_control_timestamp_in_place():
    log, io = make_log()
    slot = log.append_control_entry(io, 4)
    before = io[log.meta.slot_addr(slot)]
    log.set_committed_timestamp(io, slot, 10)
    assert io[log.meta.slot_addr(slot)] == before  # address word unchanged
    assert log.read_entry(io, slot, 1) == ControlEntry(10)
    assert log.overwrite_horizon(io, 0) == 10


def test_commit_on_data_slot_is_rejected():
    log, io = make_log()
    log.append_data_entry(io, 0x2000, 1)
    with pytest.raises(SlotMismatch):
        log.set_committed_timestamp(io, 0, 4)


def test_overwrite_guard_fires_only_when_reuse_would_lose_needed_entries():
    log, io = make_log(capacity=4)
    log.append_data_entry(io, 0x2000, 1)
    log.append_control_entry(io, 6)  # half 0 newest ts 6
    log.append_data_entry(io, 0x2000, 2)
    log.append_control_entry(io, 8)
    # entering half 0 again; the first sequence closing in half 1 may have
    # started in half 0, so its timestamp counts too
    assert log.overwrite_horizon(io, 0) == 8
    with pytest.raises(LogMaintenanceRequired) as ei:
        log.append_data_entry(io, 0x2000, 3, lower_bound=8)
    assert ei.value.horizon == 8
    assert log.cursor(io) == 4
    log.append_data_entry(io, 0x2000, 3, lower_bound=9)
    assert log.cursor(io) == 5


def test_straddling_sequence_protects_previous_half():
    log, io = make_log(capacity=4)
    log.append_control_entry(io, 2)
    log.append_data_entry(io, 0x2000, 1)
    log.append_data_entry(io, 0x2000, 1)  # starts in half 0, continues into half 1
    log.append_control_entry(io, 8)
    # half 0's own newest is 2, but the sequence ending at 8 began there
    assert log.overwrite_horizon(io, 0) == 8


def test_entry_lines():
    log, _ = make_log(capacity=8)
    assert log.entry_lines(6, 10) == [0x1000 + 16 * s for s in (6, 7, 0, 1)]
