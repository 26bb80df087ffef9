"""Backward within-block slicing tests."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import (
    MIXED_DEPENDENCE_SLICES,
    MIXED_DEPENDENCE_TEXT,
    eflag,
    ins,
    num,
    random_block,
    random_function,
    reg,
    stack,
    target,
)
from slicesim.sir import BasicBlock, parse_sir
from slicesim.slicer import ORACLE_LIMIT, slice_block, slice_function, slice_oracle


def block_of(*instructions) -> BasicBlock:
    return BasicBlock(id=0, instructions=tuple(instructions))


# ---------------------------------------------------------------------------
# Worked fixture


def test_mixed_dependence_block():
    fn = parse_sir(MIXED_DEPENDENCE_TEXT)[0]
    slices = slice_block(fn.blocks[0])
    assert tuple(s.instr_indices for s in slices) == MIXED_DEPENDENCE_SLICES
    assert [s.id for s in slices] == [0, 1, 2]
    assert all(s.block == 0 for s in slices)


def test_mixed_dependence_block_matches_oracle():
    fn = parse_sir(MIXED_DEPENDENCE_TEXT)[0]
    assert slice_block(fn.blocks[0]) == slice_oracle(fn.blocks[0])


# ---------------------------------------------------------------------------
# Sink rules


def test_every_sink_kind_seeds_a_slice():
    block = block_of(
        ins("mov", num(1), None, reg("a")),          # consumed by the store
        ins("mov", reg("a"), None, stack("out")),     # memory dest
        ins("call", target("f"), None, None, (reg("a"),)),  # call
        ins("cmp", reg("a"), num(0)),                 # no dest
        ins("mov", num(2), None, reg("b")),           # unconsumed def
        ins("jz", eflag("zf")),                       # jump
    )
    slices = slice_block(block)
    seeds = [s.instr_indices[-1] for s in slices]
    assert seeds == [1, 2, 3, 4, 5]
    assert slices == slice_oracle(block)


def test_consumed_def_is_not_a_seed():
    block = block_of(
        ins("mov", num(1), None, reg("a")),
        ins("add", reg("a"), num(1), reg("b")),
        ins("mov", reg("b"), None, stack("out")),
    )
    slices = slice_block(block)
    assert len(slices) == 1
    assert slices[0].instr_indices == (0, 1, 2)


def test_use_binds_to_nearest_preceding_definition():
    block = block_of(
        ins("mov", num(1), None, reg("a")),
        ins("mov", num(2), None, reg("a")),
        ins("mov", reg("a"), None, stack("out")),
    )
    slices = slice_block(block)
    # The first def of a is shadowed, so it seeds its own slice.
    assert tuple(s.instr_indices for s in slices) == ((0,), (1, 2))


def test_destless_call_defines_return_register():
    block = block_of(
        ins("call", target("f")),
        ins("mov", reg("rax"), None, stack("out")),
    )
    slices = slice_block(block)
    assert tuple(s.instr_indices for s in slices) == ((0,), (0, 1))


def test_shared_producer_lands_in_both_slices():
    block = block_of(
        ins("mov", num(7), None, reg("a")),
        ins("mov", reg("a"), None, stack("x")),
        ins("mov", reg("a"), None, stack("y")),
    )
    slices = slice_block(block)
    assert tuple(s.instr_indices for s in slices) == ((0, 1), (0, 2))


def test_slices_cover_every_instruction():
    rng = np.random.default_rng(601)
    for _ in range(200):
        block = random_block(rng)
        covered = set()
        for s in slice_block(block):
            covered.update(s.instr_indices)
        assert covered == set(range(len(block.instructions)))


def test_indices_sorted_ascending():
    rng = np.random.default_rng(602)
    for _ in range(100):
        for s in slice_block(random_block(rng)):
            assert list(s.instr_indices) == sorted(s.instr_indices)


# ---------------------------------------------------------------------------
# Oracle equivalence


def test_matches_oracle_on_random_blocks():
    rng = np.random.default_rng(603)
    for _ in range(500):
        block = random_block(rng)
        assert slice_block(block) == slice_oracle(block)


def test_oracle_rejects_oversized_blocks():
    instructions = tuple(
        ins("mov", num(i), None, stack(f"s{i}")) for i in range(ORACLE_LIMIT + 1)
    )
    block = BasicBlock(id=0, instructions=instructions)
    with pytest.raises(ValueError, match="oracle limited"):
        slice_oracle(block)
    # The production slicer has no such limit.
    assert len(slice_block(block)) == ORACLE_LIMIT + 1


def test_empty_block_yields_no_slices():
    assert slice_block(BasicBlock(id=0)) == []
    assert slice_oracle(BasicBlock(id=0)) == []


# ---------------------------------------------------------------------------
# Function-wide ids


def test_start_id_offsets_slice_ids():
    fn = parse_sir(MIXED_DEPENDENCE_TEXT)[0]
    slices = slice_block(fn.blocks[0], start_id=10)
    assert [s.id for s in slices] == [10, 11, 12]


def test_slice_function_ids_are_sequential_across_blocks():
    rng = np.random.default_rng(604)
    text = """\
func two
block 0
  mov #1, , r:a
  mov r:a, , s:x
  setz r:a, #0, e:zf
  jz e:zf
edge 0 -> 1 cond
edge 0 -> 2 uncond
block 1
  mov #2, , s:y
edge 1 -> 2 uncond
block 2
  mov #3, , s:z
endfunc
"""
    fn = parse_sir(text)[0]
    per_block = slice_function(fn)
    ids = [s.id for bid in fn.block_ids() for s in per_block[bid]]
    assert ids == list(range(len(ids)))
    for bid, slices in per_block.items():
        assert all(s.block == bid for s in slices)
    # Sanity on the random generator too.
    for _ in range(20):
        fn = random_function(rng)
        per_block = slice_function(fn)
        ids = [s.id for bid in fn.block_ids() for s in per_block[bid]]
        assert ids == list(range(len(ids)))
