"""Synthetic corpus generation for retrieval experiments.

Each source function is generated once and then rebuilt as *variants*
tagged with a build config (arch, compiler, optimization).  Variants
perturb the canonical body the way a different toolchain would perturb
lifted code:

* scheduling: adjacent data-independent instructions swap places,
* register allocation: non-argument registers get renamed consistently,
* flag materialisation: dead eflag definitions appear (pruning removes
  them again, so the slice graph is unchanged),
* duplication: one slice is copied with freshly suffixed definitions
  (graph merging folds the copy, verified per attempt and skipped when
  the fold would not hold).

All variants share one register namespace regardless of the arch tag;
lifting is assumed to have normalised register names already, so the
config axes only steer perturbation strength and retrieval splits.

The manifest records every unit as ``{function_id, path, config,
source_id}`` under an ``entries`` key.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .arch import argument_register_set
from .graphbuild import FlowType, build_graph, canonical_key, merge_duplicates
from .preprocess import prune
from .sir import (
    RETURN_REGISTER,
    BasicBlock,
    EdgeKind,
    FunctionIR,
    Instruction,
    JumpKind,
    Operand,
    OperandKind,
    def_use,
    print_sir,
)
from .slicer import slice_function

__all__ = [
    "BuildConfig",
    "ManifestEntry",
    "Manifest",
    "CONFIG_SEQUENCE",
    "OPT_LEVELS",
    "gen_function",
    "make_variant",
    "gen_corpus",
    "swap_independent",
    "rename_registers",
    "rename_memory_names",
    "insert_dead_flags",
    "duplicate_slice",
]

log = logging.getLogger(__name__)

OPT_LEVELS = ("O0", "O1", "O2", "O3")


@dataclass(frozen=True)
class BuildConfig:
    arch: str = "x64"
    compiler: str = "gcc"
    optimization: str = "O0"

    def tag(self) -> str:
        return f"{self.arch}-{self.compiler}-{self.optimization}"

    def to_dict(self) -> dict:
        return {"arch": self.arch, "compiler": self.compiler, "optimization": self.optimization}

    @classmethod
    def from_dict(cls, data: dict) -> "BuildConfig":
        return cls(data["arch"], data["compiler"], data["optimization"])


#: Variant configs in generation order.  The first entry is the canonical
#: build; the next four differ from it along exactly the axis each
#: retrieval task varies (optimization, compiler, arch, several at once).
CONFIG_SEQUENCE: tuple[BuildConfig, ...] = (
    BuildConfig("x64", "gcc", "O0"),
    BuildConfig("x64", "gcc", "O2"),
    BuildConfig("x64", "clang", "O0"),
    BuildConfig("arm64", "gcc", "O0"),
    BuildConfig("arm64", "clang", "O3"),
    BuildConfig("x64", "gcc", "O3"),
    BuildConfig("x64", "clang", "O2"),
    BuildConfig("arm64", "clang", "O0"),
    BuildConfig("arm64", "gcc", "O2"),
    BuildConfig("x64", "clang", "O3"),
)


@dataclass(frozen=True)
class ManifestEntry:
    function_id: str
    path: str
    config: BuildConfig
    source_id: str


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "entries": [
                {
                    "function_id": e.function_id,
                    "path": e.path,
                    "config": e.config.to_dict(),
                    "source_id": e.source_id,
                }
                for e in self.entries
            ]
        }

    @classmethod
    def from_json(cls, data: dict) -> "Manifest":
        entries = [
            ManifestEntry(
                function_id=item["function_id"],
                path=item["path"],
                config=BuildConfig.from_dict(item["config"]),
                source_id=item["source_id"],
            )
            for item in data["entries"]
        ]
        return cls(entries)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        return cls.from_json(json.loads(Path(path).read_text()))

    def validate(self, root: str | Path | None = None) -> None:
        if not self.entries:
            raise ValueError("manifest has no entries")
        seen: set[str] = set()
        for e in self.entries:
            if e.function_id in seen:
                raise ValueError(f"duplicate function_id {e.function_id!r}")
            seen.add(e.function_id)
            if root is not None and not (Path(root) / e.path).is_file():
                raise FileNotFoundError(f"{e.function_id}: missing file {e.path}")

    def by_source(self) -> dict[str, list[ManifestEntry]]:
        out: dict[str, list[ManifestEntry]] = {}
        for e in self.entries:
            out.setdefault(e.source_id, []).append(e)
        return out


# ---------------------------------------------------------------------------
# Function generator

_REG_POOL = (
    "rbx", "rcx", "rdx", "rsi", "rdi", "rbp",
    "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15",
)
_ARITH_OPS = ("add", "sub", "xor", "and", "or", "shl")
_LOCAL_WORDS = ("len", "idx", "buf", "ptr", "cnt", "acc", "pos", "tmp")
_CALLEE_POOL = (
    "memcpy", "memset", "strlen", "snprintf", "malloc", "free",
    "hash_update", "list_push", "map_get", "buf_grow", "log_msg", "checksum",
)
#: Dead-flag templates: opcode plus the flag it defines.  zf is reserved
#: for real branches so these definitions are never consumed.
_FLAG_TEMPLATES = (("cfadd", "cf"), ("setp", "pf"), ("sets", "sf"), ("seto", "of"))


def _reg(name: str) -> Operand:
    return Operand(OperandKind.REGISTER, name)


def _stack(name: str) -> Operand:
    return Operand(OperandKind.STACK_VAR, name)


def _num(value: int) -> Operand:
    return Operand(OperandKind.NUM_CONST, f"#{value}")


@dataclass(frozen=True)
class _StatementSpec:
    form: str  # load_combine | arith | call | store_const
    arith: str = "add"
    reg_right: bool = True
    call_dest: bool = False


@dataclass(frozen=True)
class _BlockSpec:
    statements: tuple[_StatementSpec, ...]
    branch_rank: int | None = None  # pick among the non-fallthrough targets


@dataclass(frozen=True)
class _TemplateSpec:
    blocks: tuple[_BlockSpec, ...]


_STMT_COST = {"load_combine": 3, "arith": 1, "call": 2, "store_const": 1}


def _make_template(tid: int) -> _TemplateSpec:
    """Deterministic opcode skeleton shared by a whole function family."""
    rng = np.random.default_rng([9001, tid])
    n_blocks = int(rng.integers(1, 6))
    blocks: list[_BlockSpec] = []
    for bid in range(n_blocks):
        body_budget = int(rng.integers(3, 9))
        is_last = bid == n_blocks - 1
        branch_rank: int | None = None
        if not is_last and n_blocks > 2 and rng.random() < 0.5:
            n_choices = n_blocks - 2
            if n_choices > 0:
                branch_rank = int(rng.integers(0, n_choices))
                body_budget = max(1, body_budget - 2)
        if is_last:
            body_budget = max(1, body_budget - 2)
        stmts: list[_StatementSpec] = []
        cost = 0
        while cost < body_budget:
            form = ("load_combine", "arith", "call", "store_const")[int(rng.integers(0, 4))]
            stmts.append(
                _StatementSpec(
                    form=form,
                    arith=_ARITH_OPS[int(rng.integers(0, len(_ARITH_OPS)))],
                    reg_right=bool(rng.random() < 0.5),
                    call_dest=bool(rng.random() < 0.5),
                )
            )
            cost += _STMT_COST[form]
        blocks.append(_BlockSpec(statements=tuple(stmts), branch_rank=branch_rank))
    return _TemplateSpec(blocks=tuple(blocks))


def gen_function(index: int, rng: np.random.Generator, templates: int = 10) -> FunctionIR:
    """One synthetic function instantiated from a shared opcode skeleton.

    Functions with the same ``index % templates`` share their entire
    opcode sequence and control shape, so opcode histograms cannot tell
    family members apart; operand names, constants and call targets are
    function-specific and carry all the identity.  Conditional branches
    always test zf through a ``setz`` computed in the same statement.
    Every instruction carries a source line; the one to three
    instructions of a statement share theirs.
    """
    spec = _make_template(index % max(1, templates))
    name = f"fn{index:04d}"
    src = f"src_{index:04d}.c"
    regs = [str(r) for r in rng.choice(_REG_POOL, size=int(rng.integers(3, 7)), replace=False)]
    local_names = [
        f"{w}{index:02d}" for w in rng.choice(_LOCAL_WORDS, size=int(rng.integers(3, 6)), replace=False)
    ]
    consts = [int(rng.integers(1, 513)) for _ in range(4)]
    callees = [str(c) for c in rng.choice(_CALLEE_POOL, size=2, replace=False)]
    callees.append(f"helper_{index:04d}")
    n_blocks = len(spec.blocks)
    line = 1

    def pick(seq):
        return seq[int(rng.integers(0, len(seq)))]

    def statement(st: _StatementSpec) -> list[Instruction]:
        nonlocal line
        here = (src, line)
        line += 1
        if st.form == "load_combine":
            a = pick(regs)
            return [
                Instruction("mov", left=_stack(pick(local_names)), dest=_reg(a), source_line=here),
                Instruction(st.arith, left=_reg(a), right=_num(pick(consts)), dest=_reg(a), source_line=here),
                Instruction("mov", left=_reg(a), dest=_stack(pick(local_names)), source_line=here),
            ]
        if st.form == "arith":
            a = pick(regs)
            right = _reg(pick(regs)) if st.reg_right else _num(pick(consts))
            return [Instruction(st.arith, left=_reg(a), right=right, dest=_reg(a), source_line=here)]
        if st.form == "call":
            setup = Instruction("mov", left=_stack(pick(local_names)), dest=_reg("rdi"), source_line=here)
            target = Operand(OperandKind.CALL_TARGET, pick(callees))
            dest = _reg(pick(regs)) if st.call_dest else None
            call = Instruction("call", left=target, dest=dest, args=(_reg("rdi"),), source_line=here)
            return [setup, call]
        return [Instruction("mov", left=_num(pick(consts)), dest=_stack(pick(local_names)), source_line=here)]

    blocks: dict[int, BasicBlock] = {}
    for bid, bspec in enumerate(spec.blocks):
        instrs: list[Instruction] = []
        is_last = bid == n_blocks - 1
        for st in bspec.statements:
            instrs.extend(statement(st))
        cond_target: int | None = None
        if bspec.branch_rank is not None:
            choices = [j for j in range(n_blocks) if j not in (bid, bid + 1)]
            if choices:
                cond_target = choices[bspec.branch_rank % len(choices)]
        here = (src, line)
        if cond_target is not None:
            instrs.append(
                Instruction(
                    "setz", left=_reg(pick(regs)), right=_reg(pick(regs)),
                    dest=Operand(OperandKind.EFLAG, "zf"), source_line=here,
                )
            )
            instrs.append(Instruction("jz", left=Operand(OperandKind.EFLAG, "zf"), source_line=here))
            line += 1
        if is_last:
            instrs.append(Instruction("mov", left=_stack(pick(local_names)), dest=_reg(RETURN_REGISTER), source_line=here))
            instrs.append(Instruction("ret", left=_reg(RETURN_REGISTER), source_line=here))
            line += 1
        edges: list[tuple[int, EdgeKind]] = []
        if not is_last:
            edges.append((bid + 1, EdgeKind.UNCONDITIONAL))
        if cond_target is not None:
            edges.append((cond_target, EdgeKind.CONDITIONAL))
        blocks[bid] = BasicBlock(id=bid, instructions=tuple(instrs), out_edges=tuple(edges), source_line=(src, 1))
    return FunctionIR(name=name, entry=0, blocks=blocks)


# ---------------------------------------------------------------------------
# Perturbations


def _replace_ops(instr: Instruction, mapper) -> Instruction:
    def m(op: Operand | None) -> Operand | None:
        return None if op is None else mapper(op)

    return replace(
        instr,
        left=m(instr.left),
        right=m(instr.right),
        dest=m(instr.dest),
        args=tuple(mapper(a) for a in instr.args),
    )


def _is_simple(op: Operand) -> bool:
    return not any(ch in op.name for ch in "+-*/[]() @")


def _all_names(fn: FunctionIR) -> set[str]:
    names: set[str] = set()
    for bid in fn.block_ids():
        for instr in fn.blocks[bid].instructions:
            for op in (*instr.operands, *instr.args):
                names.add(op.name)
    return names


def swap_independent(fn: FunctionIR, rng: np.random.Generator, attempts: int) -> FunctionIR:
    """Swap adjacent instruction pairs with disjoint def/use sets.

    Calls and jumps never move; memory operands alias by name equality
    only, so name-disjointness is the whole independence check.
    """
    blocks = {bid: list(fn.blocks[bid].instructions) for bid in fn.block_ids()}
    for _ in range(attempts):
        candidates: list[tuple[int, int]] = []
        for bid, instrs in blocks.items():
            for i in range(len(instrs) - 1):
                a, b = instrs[i], instrs[i + 1]
                if a.is_call or b.is_call:
                    continue
                if a.jump is not JumpKind.NONE or b.jump is not JumpKind.NONE:
                    continue
                da, ua = def_use(a)
                db, ub = def_use(b)
                if da & (db | ub) or db & ua:
                    continue
                candidates.append((bid, i))
        if not candidates:
            break
        bid, i = candidates[int(rng.integers(0, len(candidates)))]
        blocks[bid][i], blocks[bid][i + 1] = blocks[bid][i + 1], blocks[bid][i]
    new_blocks = {
        bid: replace(fn.blocks[bid], instructions=tuple(instrs)) for bid, instrs in blocks.items()
    }
    return replace(fn, blocks=new_blocks)


def rename_registers(fn: FunctionIR, rng: np.random.Generator, count: int, arch: str = "x64") -> FunctionIR:
    """Consistently rename up to `count` registers to unused ones.

    Argument registers and the return register keep their names (the
    calling convention pins them); compound operands are left alone.
    """
    pinned = set(argument_register_set(arch)) | {RETURN_REGISTER}
    used: set[str] = set()
    for bid in fn.block_ids():
        for instr in fn.blocks[bid].instructions:
            for op in (*instr.operands, *instr.args):
                if op.kind is OperandKind.REGISTER and _is_simple(op):
                    used.add(op.name)
    eligible = sorted(used - pinned)
    free = [r for r in _REG_POOL if r not in used and r not in pinned]
    if not eligible or not free:
        return fn
    rng.shuffle(free)
    n = min(count, len(eligible), len(free))
    chosen = rng.choice(eligible, size=n, replace=False)
    mapping = {old: free[k] for k, old in enumerate(chosen)}

    def mapper(op: Operand) -> Operand:
        if op.kind is OperandKind.REGISTER and op.name in mapping:
            return replace(op, name=mapping[op.name])
        return op

    new_blocks = {
        bid: replace(
            fn.blocks[bid],
            instructions=tuple(_replace_ops(i, mapper) for i in fn.blocks[bid].instructions),
        )
        for bid in fn.block_ids()
    }
    return replace(fn, blocks=new_blocks)


def rename_memory_names(fn: FunctionIR, rng: np.random.Generator, count: int) -> FunctionIR:
    """Append a numeric suffix to stack/local names (``buf`` -> ``buf_3``).

    Token normalisation strips the suffix again, so this perturbs the
    raw text without moving the normalised token stream.
    """
    used: set[str] = set()
    for bid in fn.block_ids():
        for instr in fn.blocks[bid].instructions:
            for op in (*instr.operands, *instr.args):
                if op.kind in (OperandKind.STACK_VAR, OperandKind.LOCAL_VAR) and _is_simple(op):
                    used.add(op.name)
    eligible = sorted(used)
    if not eligible:
        return fn
    all_names = _all_names(fn)
    suffix = 2
    while any(f"{name}_{suffix}" in all_names for name in eligible):
        suffix += 1
    chosen = rng.choice(eligible, size=min(count, len(eligible)), replace=False)
    mapping = {old: f"{old}_{suffix}" for old in chosen}

    def mapper(op: Operand) -> Operand:
        if op.kind in (OperandKind.STACK_VAR, OperandKind.LOCAL_VAR) and op.name in mapping:
            return replace(op, name=mapping[op.name])
        return op

    new_blocks = {
        bid: replace(
            fn.blocks[bid],
            instructions=tuple(_replace_ops(i, mapper) for i in fn.blocks[bid].instructions),
        )
        for bid in fn.block_ids()
    }
    return replace(fn, blocks=new_blocks)


def insert_dead_flags(fn: FunctionIR, rng: np.random.Generator, count: int) -> FunctionIR:
    """Insert flag-setting instructions whose flags nothing reads.

    Only cf/pf/sf/of are written (zf stays reserved for branches), so
    pruning removes every insertion and the slice graph is untouched;
    the raw text and its opcode histogram do change.
    """
    blocks = {bid: list(fn.blocks[bid].instructions) for bid in fn.block_ids()}
    ids = fn.block_ids()
    for _ in range(count):
        bid = ids[int(rng.integers(0, len(ids)))]
        instrs = blocks[bid]
        limit = len(instrs)
        if instrs and instrs[-1].jump is not JumpKind.NONE:
            limit -= 1
        pos = int(rng.integers(0, limit + 1))
        reg_names = [
            op.name
            for i in instrs
            for op in (*i.operands, *i.args)
            if op.kind is OperandKind.REGISTER and _is_simple(op)
        ]
        a = reg_names[int(rng.integers(0, len(reg_names)))] if reg_names else "rbx"
        opcode, flag = _FLAG_TEMPLATES[int(rng.integers(0, len(_FLAG_TEMPLATES)))]
        neighbour = instrs[min(pos, len(instrs) - 1)] if instrs else None
        instrs.insert(
            pos,
            Instruction(
                opcode,
                left=_reg(a),
                right=_num(int(rng.integers(1, 64))),
                dest=Operand(OperandKind.EFLAG, flag),
                source_line=neighbour.source_line if neighbour else None,
            ),
        )
    new_blocks = {
        bid: replace(fn.blocks[bid], instructions=tuple(instrs)) for bid, instrs in blocks.items()
    }
    return replace(fn, blocks=new_blocks)


def duplicate_slice(fn: FunctionIR, rng: np.random.Generator, attempts: int = 4) -> FunctionIR:
    """Copy one slice with freshly suffixed definitions.

    Candidates live in multi-slice blocks, hold no jump or call, and
    feed no cross-block data dependence, so graph merging should fold
    the copy back onto the original.  Each attempt is verified by
    comparing canonical graph keys before and after; when no candidate
    passes, the function comes back unchanged.
    """
    pruned = prune(fn)
    slices = slice_function(pruned)
    graph = build_graph(pruned, slices)
    target_key = canonical_key(merge_duplicates(graph))
    dd_sources = {src for src, _dst, t in graph.edges if t is FlowType.DATA_DEPENDENCE}

    candidates = []
    for bid, slist in slices.items():
        if len(slist) < 2:
            continue
        for s in slist:
            if s.id in dd_sources:
                continue
            members = [pruned.blocks[bid].instructions[i] for i in s.instr_indices]
            # Calls anywhere in the slice would duplicate side effects and
            # implicitly redefine the return register; jumps anchor edges.
            if any(m.is_call or m.jump is not JumpKind.NONE for m in members):
                continue
            candidates.append((bid, s))
    if not candidates:
        return fn
    order = rng.permutation(len(candidates))
    all_names = _all_names(fn)
    for pick in order[:attempts]:
        bid, s = candidates[int(pick)]
        block = pruned.blocks[bid]
        suffix = 2
        member_defs = {
            name for idx in s.instr_indices for name in def_use(block.instructions[idx])[0]
        }
        while any(f"{name}_{suffix}" in all_names for name in member_defs):
            suffix += 1
        mapping: dict[str, str] = {}
        copies: list[Instruction] = []
        for idx in s.instr_indices:
            orig = block.instructions[idx]

            def use_mapper(op: Operand) -> Operand:
                if op.kind not in (OperandKind.NUM_CONST, OperandKind.STR_CONST, OperandKind.CALL_TARGET) and op.name in mapping:
                    return replace(op, name=mapping[op.name])
                return op

            renamed = _replace_ops(orig, use_mapper)
            defs, _uses = def_use(orig)
            for d in defs:
                mapping[d] = f"{d}_{suffix}"
            if renamed.dest is not None and renamed.dest.name in def_use(orig)[0]:
                renamed = replace(renamed, dest=replace(renamed.dest, name=mapping[renamed.dest.name]))
            copies.append(renamed)
        # Locate the original's last instruction in the unpruned block by
        # identity (prune reuses instruction objects) and splice after it.
        anchor = block.instructions[s.instr_indices[-1]]
        raw_instrs = list(fn.blocks[bid].instructions)
        raw_pos = next(i for i, ins in enumerate(raw_instrs) if ins is anchor)
        raw_instrs[raw_pos + 1 : raw_pos + 1] = copies
        new_blocks = dict(fn.blocks)
        new_blocks[bid] = replace(fn.blocks[bid], instructions=tuple(raw_instrs))
        candidate = replace(fn, blocks=new_blocks)
        key = canonical_key(merge_duplicates(build_graph(prune(candidate))))
        if key == target_key:
            return candidate
        log.debug("slice duplication in %s block %d changed the graph; skipped", fn.name, bid)
    return fn


def _axes_apart(a: BuildConfig, b: BuildConfig) -> int:
    return sum(
        getattr(a, f) != getattr(b, f) for f in ("arch", "compiler", "optimization")
    )


def make_variant(
    fn: FunctionIR, config: BuildConfig, base_config: BuildConfig, rng: np.random.Generator
) -> FunctionIR:
    """Perturb a canonical function for one build config.

    Perturbation strength scales with how many config axes differ from
    the canonical build; identical configs return the function as is.
    """
    axes = _axes_apart(config, base_config)
    if axes == 0:
        return fn
    opt_gap = abs(OPT_LEVELS.index(config.optimization) - OPT_LEVELS.index(base_config.optimization))
    total = sum(len(fn.blocks[b].instructions) for b in fn.block_ids())
    out = rename_registers(fn, rng, count=1 + axes)
    out = rename_memory_names(out, rng, count=axes)
    out = swap_independent(out, rng, attempts=2 * axes)
    # Scale flag noise with function size: slicing-side artifacts ignore
    # it entirely (pruning removes it), raw-text consumers see it all.
    out = insert_dead_flags(out, rng, count=axes + max(1, total // 6))
    if axes >= 2 or opt_gap >= 2:
        out = duplicate_slice(out, rng)
    return out


# ---------------------------------------------------------------------------
# Corpus assembly


def gen_corpus(
    out_dir: str | Path, n_functions: int, variants: int, seed: int = 0, templates: int = 10
) -> Manifest:
    """Generate a corpus directory: funcs/*.sir plus manifest.json."""
    if n_functions < 1:
        raise ValueError("need at least one function")
    if not 1 <= variants <= len(CONFIG_SEQUENCE):
        raise ValueError(f"variants must be in 1..{len(CONFIG_SEQUENCE)}")
    if templates < 1:
        raise ValueError("need at least one template family")
    out = Path(out_dir)
    (out / "funcs").mkdir(parents=True, exist_ok=True)
    base_config = CONFIG_SEQUENCE[0]
    entries: list[ManifestEntry] = []
    for i in range(n_functions):
        fn = gen_function(i, np.random.default_rng([seed, i]), templates=templates)
        source_id = f"src{i:04d}"
        for v, config in enumerate(CONFIG_SEQUENCE[:variants]):
            variant = make_variant(fn, config, base_config, np.random.default_rng([seed, i, v]))
            rel = f"funcs/{source_id}__{config.tag()}.sir"
            (out / rel).write_text(print_sir(variant))
            entries.append(
                ManifestEntry(
                    function_id=f"{source_id}@{config.tag()}",
                    path=rel,
                    config=config,
                    source_id=source_id,
                )
            )
    manifest = Manifest(entries)
    manifest.save(out / "manifest.json")
    log.info("corpus: %d functions x %d variants at %s", n_functions, variants, out)
    return manifest
