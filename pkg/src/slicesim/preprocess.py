"""Dead-definition removal over SIR functions.

Classic backward liveness drives the removal: an instruction goes away
when every name it defines is dead immediately after it (redefined before
any use on every path, or never used again).  Three keep rules temper
that, mirroring how stripped binaries hide intent:

* stores to stack/local/global memory and assignments to globals stay;
* a register assignment between the previous call (or block start) and a
  later call in the same block stays, because it may set up an argument
  that only the callee reads;
* assignments to architecture argument registers always stay.

Calls and jumps are never candidates.  The pass iterates to a fixpoint,
so removing one dead def can expose another; the result is idempotent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import arch as _arch
from .sir import (
    BasicBlock,
    FunctionIR,
    Instruction,
    JumpKind,
    MEMORY_KINDS,
    OperandKind,
    def_use,
)

__all__ = ["LivenessInfo", "compute_liveness", "prune"]


@dataclass
class LivenessInfo:
    """Live name sets per block boundary and per program point.

    ``live_after[b][i]`` is the set of names live immediately after
    instruction ``i`` of block ``b`` (so ``live_after[b][-1]`` equals the
    block's live-out when the block is non-empty).
    """

    live_in: dict[int, frozenset[str]]
    live_out: dict[int, frozenset[str]]
    live_after: dict[int, list[frozenset[str]]]

    def live_after_instruction(self, block_id: int, index: int) -> frozenset[str]:
        return self.live_after[block_id][index]


def _block_use_def(block: BasicBlock) -> tuple[frozenset[str], frozenset[str]]:
    """Upward-exposed uses and defined names for one block."""
    used: set[str] = set()
    defined: set[str] = set()
    for instr in block.instructions:
        defs, uses = def_use(instr)
        used.update(u for u in uses if u not in defined)
        defined.update(defs)
    return frozenset(used), frozenset(defined)


def compute_liveness(fn: FunctionIR) -> LivenessInfo:
    ids = fn.block_ids()
    use: dict[int, frozenset[str]] = {}
    defined: dict[int, frozenset[str]] = {}
    for bid in ids:
        use[bid], defined[bid] = _block_use_def(fn.blocks[bid])

    live_in = {bid: frozenset() for bid in ids}
    live_out = {bid: frozenset() for bid in ids}
    changed = True
    while changed:
        changed = False
        for bid in reversed(ids):
            out: set[str] = set()
            for tgt, _kind in fn.blocks[bid].out_edges:
                out.update(live_in[tgt])
            new_out = frozenset(out)
            new_in = frozenset(use[bid] | (new_out - defined[bid]))
            if new_out != live_out[bid] or new_in != live_in[bid]:
                live_out[bid] = new_out
                live_in[bid] = new_in
                changed = True

    live_after: dict[int, list[frozenset[str]]] = {}
    for bid in ids:
        block = fn.blocks[bid]
        points: list[frozenset[str]] = [frozenset()] * len(block.instructions)
        live = set(live_out[bid])
        for idx in range(len(block.instructions) - 1, -1, -1):
            points[idx] = frozenset(live)
            defs, uses = def_use(block.instructions[idx])
            live -= defs
            live |= uses
        live_after[bid] = points
    return LivenessInfo(live_in=live_in, live_out=live_out, live_after=live_after)


def _protected(block: BasicBlock, index: int, instr: Instruction, arg_regs: frozenset[str]) -> bool:
    dest = instr.dest
    if dest is None or dest.kind is not OperandKind.REGISTER:
        return False
    if dest.name in arg_regs:
        return True
    # Keep a register set up ahead of a call in the same block unless it is
    # overwritten before the call happens.
    for later in range(index + 1, len(block.instructions)):
        other = block.instructions[later]
        if other.is_call:
            return True
        defs, _uses = def_use(other)
        if dest.name in defs:
            return False
    return False


def _removable(
    block: BasicBlock,
    index: int,
    instr: Instruction,
    live_after: frozenset[str],
    arg_regs: frozenset[str],
) -> bool:
    if instr.is_call or instr.jump is not JumpKind.NONE:
        return False
    dest = instr.dest
    if dest is None:
        return False
    if dest.kind in MEMORY_KINDS:
        return False
    defs, _uses = def_use(instr)
    if any(name in live_after for name in defs):
        return False
    return not _protected(block, index, instr, arg_regs)


def prune(
    fn: FunctionIR,
    arg_regs: frozenset[str] | None = None,
    arch: str = _arch.DEFAULT_ARCH,
) -> FunctionIR:
    """Remove dead definitions; returns a new function, fixpoint-iterated."""
    if arg_regs is None:
        arg_regs = _arch.argument_register_set(arch)
    current = fn
    while True:
        liveness = compute_liveness(current)
        doomed: dict[int, set[int]] = {}
        for bid in current.block_ids():
            block = current.blocks[bid]
            for idx, instr in enumerate(block.instructions):
                if _removable(block, idx, instr, liveness.live_after[bid][idx], arg_regs):
                    doomed.setdefault(bid, set()).add(idx)
        if not doomed:
            return current
        blocks: dict[int, BasicBlock] = {}
        for bid, block in current.blocks.items():
            drop = doomed.get(bid, set())
            if drop:
                kept = tuple(
                    ins for i, ins in enumerate(block.instructions) if i not in drop
                )
                blocks[bid] = replace(block, instructions=kept)
            else:
                blocks[bid] = block
        current = replace(current, blocks=blocks)
