"""Within-block backward slicing over def-use chains.

Every *sink* instruction seeds one slice: sinks are instructions with no
dest, calls, jumps, stores to memory operands, and register defs that no
later instruction in the block consumes.  A slice is the seed plus the
backward transitive closure of within-block def-use edges (each use binds
to the nearest earlier definition of that name).  Instructions can belong
to several slices and every instruction lands in at least one, so the
slices of a block always cover it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .sir import (
    BasicBlock,
    FunctionIR,
    Instruction,
    JumpKind,
    MEMORY_KINDS,
    def_use,
    format_instruction,
)

__all__ = ["Slice", "slice_block", "slice_function", "slice_oracle", "ORACLE_LIMIT"]

#: The exhaustive oracle refuses blocks longer than this.
ORACLE_LIMIT = 12

Token = tuple[str, str]


@dataclass(frozen=True)
class Slice:
    """A slice of one basic block.

    ``instr_indices`` are ascending indexes into the owning block's
    instruction tuple.  ``tokens`` is filled by the tokenizer, as
    (text, kind) pairs; it is empty until then.
    """

    id: int
    block: int
    instr_indices: tuple[int, ...]
    tokens: tuple[Token, ...] = ()

    def with_tokens(self, tokens: tuple[Token, ...]) -> "Slice":
        return replace(self, tokens=tokens)


def render_slice(slc: Slice, block: BasicBlock) -> str:
    return "\n".join(format_instruction(block.instructions[i]) for i in slc.instr_indices)


def _def_use_parents(instructions: tuple[Instruction, ...]) -> list[set[int]]:
    """parents[i] = indexes of the nearest earlier defs feeding i's uses."""
    last_def: dict[str, int] = {}
    parents: list[set[int]] = []
    for i, instr in enumerate(instructions):
        defs, uses = def_use(instr)
        parents.append({last_def[u] for u in uses if u in last_def})
        for d in defs:
            last_def[d] = i
    return parents


def _seed_indices(instructions: tuple[Instruction, ...], parents: list[set[int]]) -> list[int]:
    has_consumer = [False] * len(instructions)
    for i, ps in enumerate(parents):
        for p in ps:
            has_consumer[p] = True
    seeds = []
    for i, instr in enumerate(instructions):
        if instr.is_call or instr.jump is not JumpKind.NONE:
            seeds.append(i)
        elif instr.dest is None:
            seeds.append(i)
        elif instr.dest.kind in MEMORY_KINDS:
            seeds.append(i)
        elif not has_consumer[i]:
            seeds.append(i)
    return seeds


def slice_block(block: BasicBlock, start_id: int = 0) -> list[Slice]:
    """Slices of one block, seeded in instruction order.

    Slice ids are ``start_id``, ``start_id + 1``, ... in seed order, so a
    caller walking blocks in id order gets stable function-wide ids.
    """
    instructions = block.instructions
    if not instructions:
        return []
    parents = _def_use_parents(instructions)
    slices: list[Slice] = []
    for offset, seed in enumerate(_seed_indices(instructions, parents)):
        members: set[int] = set()
        stack = [seed]
        while stack:
            i = stack.pop()
            if i in members:
                continue
            members.add(i)
            stack.extend(parents[i] - members)
        slices.append(
            Slice(id=start_id + offset, block=block.id, instr_indices=tuple(sorted(members)))
        )
    return slices


def slice_function(fn: FunctionIR) -> dict[int, list[Slice]]:
    """Slices for every block, with function-wide sequential ids."""
    result: dict[int, list[Slice]] = {}
    next_id = 0
    for bid in fn.block_ids():
        slices = slice_block(fn.blocks[bid], start_id=next_id)
        result[bid] = slices
        next_id += len(slices)
    return result


def slice_oracle(block: BasicBlock, start_id: int = 0) -> list[Slice]:
    """Brute-force reference slicer for small blocks (tests and audits).

    Builds the def-use DAG by scanning every (earlier, later) instruction
    pair and checking for an intervening redefinition, then collects each
    seed's ancestors by breadth-first search.  Independent of
    :func:`slice_block` on purpose; limited to :data:`ORACLE_LIMIT`
    instructions.
    """
    instructions = block.instructions
    if len(instructions) > ORACLE_LIMIT:
        raise ValueError(
            f"oracle limited to {ORACLE_LIMIT} instructions, got {len(instructions)}"
        )
    if not instructions:
        return []
    n = len(instructions)
    du = [(def_use(ins)) for ins in instructions]
    edge = [[False] * n for _ in range(n)]
    for j in range(n):
        for i in range(j + 1, n):
            for name in du[j][0]:
                if name not in du[i][1]:
                    continue
                killed = any(name in du[k][0] for k in range(j + 1, i))
                if not killed:
                    edge[j][i] = True
    seeds = []
    for i, instr in enumerate(instructions):
        outgoing = any(edge[i][k] for k in range(n))
        memory_dest = instr.dest is not None and instr.dest.kind in MEMORY_KINDS
        if (
            instr.is_call
            or instr.jump is not JumpKind.NONE
            or instr.dest is None
            or memory_dest
            or not outgoing
        ):
            seeds.append(i)
    slices: list[Slice] = []
    for offset, seed in enumerate(seeds):
        members = {seed}
        frontier = [seed]
        while frontier:
            nxt: list[int] = []
            for i in frontier:
                for j in range(n):
                    if edge[j][i] and j not in members:
                        members.add(j)
                        nxt.append(j)
            frontier = nxt
        slices.append(
            Slice(id=start_id + offset, block=block.id, instr_indices=tuple(sorted(members)))
        )
    return slices
