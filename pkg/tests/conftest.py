"""Shared fixtures: worked IR texts and seeded random program generators.

The two fixture texts below are small hand-written functions whose slicing
and pruning behaviour is pinned exactly in the tests; the generators build
seeded random blocks and functions for oracle-equivalence and idempotence
properties.
"""

from __future__ import annotations

import numpy as np
import pytest

from slicesim.sir import (
    BasicBlock,
    EdgeKind,
    FunctionIR,
    Instruction,
    Operand,
    OperandKind,
)

# A single block mixing call, store and arithmetic dependence chains.  Its
# slices, in id order, cover instruction indexes {2}, {1, 3, 4}, {0, 5}.
MIXED_DEPENDENCE_TEXT = """\
func sample
block 0
  mov s:v7, , r:rbx
  mov s:o, , r:rdi
  add r:rbp, #32, r:rbp
  add r:rdi, #256, r:rdi
  call fn:av_freep(r:rdi)
  add r:rbx, #1, r:rbx
endfunc
"""

MIXED_DEPENDENCE_SLICES = ((2,), (1, 3, 4), (0, 5))

# A three-block function where block 1 opens with four dead instructions:
# a register def immediately overwritten later in the block and three
# EFLAG-producing instructions nothing reads.  Pruning must drop exactly
# those four and keep the stores, the argument chain and the rax def the
# exit block consumes.
FLAG_HEAVY_TEXT = """\
func flagheavy
block 0
  setz r:rcx, #0, e:zf
  jz e:zf
edge 0 -> 1 cond
edge 0 -> 2 uncond
block 1
  mov #0, , r:rax
  cfadd r:rsi, r:rdx, e:cf
  setz r:rsi, r:rdx, e:zf
  setp r:rsi, r:rdx, e:pf
  mov r:rbx, , g:errno
  add s:idx, #1, r:var
  mov #0, , s:flag
  mov r:var, , s:result
  add r:var, #1, r:rax
edge 1 -> 2 uncond
block 2
  mov r:rax, , g:out
endfunc
"""

FLAG_HEAVY_PRUNED_TEXT = """\
func flagheavy
block 0
  setz r:rcx, #0, e:zf
  jz e:zf
block 1
  mov r:rbx, , g:errno
  add s:idx, #1, r:var
  mov #0, , s:flag
  mov r:var, , s:result
  add r:var, #1, r:rax
block 2
  mov r:rax, , g:out
edge 0 -> 1 cond
edge 0 -> 2 uncond
edge 1 -> 2 uncond
endfunc
"""


# ---------------------------------------------------------------------------
# Operand / instruction builders


def reg(name: str, width: int | None = None) -> Operand:
    return Operand(OperandKind.REGISTER, name, width)


def stack(name: str) -> Operand:
    return Operand(OperandKind.STACK_VAR, name)


def glob(name: str) -> Operand:
    return Operand(OperandKind.GLOBAL_VAR, name)


def num(value: int, width: int | None = None) -> Operand:
    return Operand(OperandKind.NUM_CONST, f"#{value}", width)


def eflag(name: str) -> Operand:
    return Operand(OperandKind.EFLAG, name)


def target(name: str) -> Operand:
    return Operand(OperandKind.CALL_TARGET, name)


def ins(
    opcode: str,
    left: Operand | None = None,
    right: Operand | None = None,
    dest: Operand | None = None,
    args: tuple[Operand, ...] = (),
) -> Instruction:
    return Instruction(opcode, left, right, dest, args)


# ---------------------------------------------------------------------------
# Random program generators


def random_block(rng: np.random.Generator, block_id: int = 0, max_instr: int = 12,
                 max_defs: int = 4) -> BasicBlock:
    """A random block small enough for the exhaustive slicing oracle.

    Instructions draw sources from already-defined names plus fresh memory
    reads, and mix register arithmetic, stores, flag writes, calls (with
    and without dest) and an optional trailing jump.
    """
    def_pool = [f"r{i}" for i in rng.permutation(8)[:max_defs]]
    n = int(rng.integers(1, max_instr + 1))
    defined: list[str] = []
    instructions: list[Instruction] = []

    def source() -> Operand:
        if defined and rng.random() < 0.6:
            return reg(str(rng.choice(defined)))
        roll = rng.random()
        if roll < 0.4:
            return num(int(rng.integers(0, 100)))
        if roll < 0.7:
            return stack(f"s{int(rng.integers(0, 4))}")
        return reg(f"in{int(rng.integers(0, 3))}")

    for i in range(n):
        is_last = i == n - 1
        roll = rng.random()
        if is_last and roll < 0.15:
            instructions.append(ins("jz", eflag("zf")))
            continue
        if roll < 0.45:
            name = str(rng.choice(def_pool))
            instructions.append(ins("add", source(), source(), reg(name)))
            defined.append(name)
        elif roll < 0.6:
            instructions.append(ins("mov", source(), None, stack(f"s{int(rng.integers(0, 4))}")))
        elif roll < 0.7:
            instructions.append(ins("setz", source(), source(), eflag("zf")))
        elif roll < 0.8:
            arg_count = int(rng.integers(0, 3))
            args = tuple(source() for _ in range(arg_count))
            dest = reg(str(rng.choice(def_pool))) if rng.random() < 0.5 else None
            instructions.append(ins("call", target(f"f{int(rng.integers(0, 3))}"), None, dest, args))
            if dest is not None:
                defined.append(dest.name)
            else:
                defined.append("rax")
        else:
            name = str(rng.choice(def_pool))
            instructions.append(ins("mov", source(), None, reg(name)))
            defined.append(name)
    return BasicBlock(id=block_id, instructions=tuple(instructions))


def random_function(rng: np.random.Generator) -> FunctionIR:
    """A random multi-block function with coherent edges.

    Deliberately messy: dead defs, flag chatter, calls, global stores and
    both edge kinds, including occasional back edges, so pruning and graph
    construction get exercised on loops as well as straight lines.
    """
    n_blocks = int(rng.integers(1, 5))
    blocks: dict[int, BasicBlock] = {}
    for bid in range(n_blocks):
        base = random_block(rng, block_id=bid, max_instr=8, max_defs=4)
        instructions = list(base.instructions)
        if rng.random() < 0.4:
            instructions.append(ins("mov", reg(f"r{int(rng.integers(0, 8))}"), None,
                                    glob(f"g{int(rng.integers(0, 2))}")))
        out_edges: list[tuple[int, EdgeKind]] = []
        if bid + 1 < n_blocks:
            if rng.random() < 0.4:
                instructions.append(ins("jz", eflag("zf")))
                jump_to = int(rng.integers(0, n_blocks))
                out_edges.append((jump_to, EdgeKind.CONDITIONAL))
                out_edges.append((bid + 1, EdgeKind.UNCONDITIONAL))
            else:
                out_edges.append((bid + 1, EdgeKind.UNCONDITIONAL))
        blocks[bid] = BasicBlock(id=bid, instructions=tuple(instructions),
                                 out_edges=tuple(out_edges))
    return FunctionIR(name=f"fn{int(rng.integers(0, 10_000))}", entry=0, blocks=blocks)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
