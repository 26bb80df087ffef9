"""SIR: a small textual IR for binary function bodies.

One instruction per line: an opcode plus up to three operand slots
(left, right, dest).  Basic blocks and control-flow edges are explicit,
calls list their argument operands explicitly, and EFLAG definitions are
written as ordinary ``e:`` destinations so dataflow needs no hidden
side-effect tables.

Grammar (line oriented, ``;`` starts a trailing annotation or comment)::

    func <name>
    block <id> [line=<file>:<n>]
    <opcode> [<left>, <right>, <dest>] [; line=<file>:<n>]
    edge <src> -> <dst> cond|uncond
    endfunc

Operand syntax: ``r:<name>`` register, ``s:<name>`` stack slot,
``l:<name>`` local, ``g:<name>`` global, ``#<int>`` numeric constant,
``"<text>"`` string constant, ``e:<flag>`` eflag (zf/cf/sf/of/pf) and
``fn:<name>(<arg>, ...)`` call target.  A bare identifier is shorthand
for a register.  Simple operands may carry a trailing byte-width suffix
(``r:rax.8``, ``#0.4``).  Memory operands are plain names: two memory
references alias iff their names are string-equal, there is no deeper
alias analysis.  Instructions with a single operand are written without
commas (``call fn:f(r:rdi)``); otherwise both commas are required and
empty slots are left blank (``mov #5, , r:rax``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator

__all__ = [
    "OperandKind",
    "JumpKind",
    "EdgeKind",
    "Operand",
    "Instruction",
    "BasicBlock",
    "FunctionIR",
    "Diagnostic",
    "SIRParseError",
    "def_use",
    "parse_sir",
    "parse_document",
    "print_sir",
    "format_instruction",
    "format_operand",
    "RETURN_REGISTER",
    "EFLAG_NAMES",
    "CALL_OPCODES",
    "CONDITIONAL_JUMP_OPCODES",
    "UNCONDITIONAL_JUMP_OPCODES",
]


class OperandKind(Enum):
    REGISTER = "reg"
    STACK_VAR = "stack"
    LOCAL_VAR = "local"
    GLOBAL_VAR = "global"
    NUM_CONST = "num"
    STR_CONST = "str"
    EFLAG = "eflag"
    CALL_TARGET = "call"


class JumpKind(Enum):
    NONE = "none"
    CONDITIONAL = "cond"
    UNCONDITIONAL = "uncond"


class EdgeKind(Enum):
    CONDITIONAL = "cond"
    UNCONDITIONAL = "uncond"


#: Memory-like operand kinds; stores to these are never pruned.
MEMORY_KINDS = frozenset(
    {OperandKind.STACK_VAR, OperandKind.LOCAL_VAR, OperandKind.GLOBAL_VAR}
)

#: Operand kinds that can never be defined or used as dataflow names.
_VALUE_ONLY_KINDS = frozenset(
    {OperandKind.NUM_CONST, OperandKind.STR_CONST, OperandKind.CALL_TARGET}
)

EFLAG_NAMES = frozenset({"zf", "cf", "sf", "of", "pf"})

UNCONDITIONAL_JUMP_OPCODES = frozenset({"goto", "jmp"})
CONDITIONAL_JUMP_OPCODES = frozenset(
    {
        "jcnd", "jz", "jnz", "ja", "jae", "jb", "jbe",
        "jg", "jge", "jl", "jle", "js", "jns", "jo", "jno", "jp", "jnp",
    }
)
CALL_OPCODES = frozenset({"call", "icall"})

#: A call with no explicit dest defines the conventional return register.
RETURN_REGISTER = "rax"

_PREFIX_KINDS = {
    "r": OperandKind.REGISTER,
    "s": OperandKind.STACK_VAR,
    "l": OperandKind.LOCAL_VAR,
    "g": OperandKind.GLOBAL_VAR,
    "e": OperandKind.EFLAG,
}

_KIND_PREFIX = {v: k for k, v in _PREFIX_KINDS.items()}

#: Characters that mark an operand name as a compound expression.
_COMPOUND_CHARS = set("+-*/[]() @")

SourceLine = tuple[str, int]


@dataclass(frozen=True)
class Operand:
    """One operand slot.  ``name`` keeps numeric suffixes such as ``_160``
    verbatim; normalisation happens at tokenisation time, not here."""

    kind: OperandKind
    name: str
    width: int | None = None


@dataclass(frozen=True)
class Instruction:
    """A single SIR instruction.

    ``args`` holds the explicit call-argument operands and is empty for
    non-calls.  The instruction's position in its block is its list index;
    it is not duplicated here so reordering transforms cannot desync it.
    """

    opcode: str
    left: Operand | None = None
    right: Operand | None = None
    dest: Operand | None = None
    args: tuple[Operand, ...] = ()
    source_line: SourceLine | None = None

    @property
    def is_call(self) -> bool:
        return self.opcode in CALL_OPCODES

    @property
    def jump(self) -> JumpKind:
        if self.opcode in CONDITIONAL_JUMP_OPCODES:
            return JumpKind.CONDITIONAL
        if self.opcode in UNCONDITIONAL_JUMP_OPCODES:
            return JumpKind.UNCONDITIONAL
        return JumpKind.NONE

    @property
    def operands(self) -> tuple[Operand, ...]:
        ops = [o for o in (self.left, self.right, self.dest) if o is not None]
        return tuple(ops)


@dataclass(frozen=True)
class BasicBlock:
    id: int
    instructions: tuple[Instruction, ...] = ()
    out_edges: tuple[tuple[int, EdgeKind], ...] = ()
    source_line: SourceLine | None = None


@dataclass(frozen=True)
class FunctionIR:
    """Immutable function body: blocks keyed by id plus the entry id."""

    name: str
    entry: int
    blocks: dict[int, BasicBlock] = field(default_factory=dict)

    def block_ids(self) -> list[int]:
        return sorted(self.blocks)

    def predecessors(self) -> dict[int, list[tuple[int, EdgeKind]]]:
        preds: dict[int, list[tuple[int, EdgeKind]]] = {b: [] for b in self.blocks}
        for bid in self.block_ids():
            for tgt, kind in self.blocks[bid].out_edges:
                preds[tgt].append((bid, kind))
        return preds


@dataclass(frozen=True)
class Diagnostic:
    message: str
    line: int
    column: int = 1
    function: str | None = None

    def __str__(self) -> str:
        where = f"line {self.line}, col {self.column}"
        if self.function:
            where += f", func {self.function}"
        return f"{where}: {self.message}"


class SIRParseError(ValueError):
    def __init__(self, diagnostic: Diagnostic):
        super().__init__(str(diagnostic))
        self.diagnostic = diagnostic


def def_use(instr: Instruction) -> tuple[frozenset[str], frozenset[str]]:
    """Defined and used operand names for one instruction.

    Constants and call targets never define or use a name.  Calls use
    their explicit argument operands and define the explicit dest when
    present, otherwise the conventional return register.
    """
    defs: set[str] = set()
    uses: set[str] = set()
    if instr.dest is not None and instr.dest.kind not in _VALUE_ONLY_KINDS:
        defs.add(instr.dest.name)
    if instr.is_call and instr.dest is None:
        defs.add(RETURN_REGISTER)
    for op in (instr.left, instr.right, *instr.args):
        if op is not None and op.kind not in _VALUE_ONLY_KINDS:
            uses.add(op.name)
    return frozenset(defs), frozenset(uses)


# ---------------------------------------------------------------------------
# Parsing


_FUNC_RE = re.compile(r"^func\s+(\S+)\s*$")
_BLOCK_RE = re.compile(r"^block\s+(\d+)\s*(?:line=(\S+):(\d+)\s*)?$")
_EDGE_RE = re.compile(r"^edge\s+(\d+)\s*->\s*(\d+)\s+(cond|uncond)\s*$")
_OPCODE_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
_LINE_ANNOT_RE = re.compile(r"^\s*line=(\S+):(\d+)\s*$")
_NUM_RE = re.compile(r"^#(-?\d+)(?:\.(\d+))?$")
_CALL_RE = re.compile(r"^fn:([^()\s]+)\((.*)\)$")


def _split_top_level(text: str) -> list[str]:
    """Split on commas outside parentheses and double quotes."""
    parts: list[str] = []
    depth = 0
    in_str = False
    cur: list[str] = []
    for ch in text:
        if in_str:
            cur.append(ch)
            if ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
            cur.append(ch)
        elif ch == "(":
            depth += 1
            cur.append(ch)
        elif ch == ")":
            depth = max(0, depth - 1)
            cur.append(ch)
        elif ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


class _FunctionAbort(Exception):
    def __init__(self, diagnostic: Diagnostic):
        self.diagnostic = diagnostic


class _Parser:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.functions: list[FunctionIR] = []
        self.diagnostics: list[Diagnostic] = []

    def fail(self, message: str, line: int, column: int = 1, function: str | None = None):
        raise _FunctionAbort(Diagnostic(message, line, column, function))

    def parse(self) -> None:
        i = 0
        n = len(self.lines)
        while i < n:
            raw = self.lines[i]
            stripped = raw.strip()
            if not stripped or stripped.startswith(";"):
                i += 1
                continue
            m = _FUNC_RE.match(stripped)
            if not m:
                self.diagnostics.append(
                    Diagnostic(f"expected 'func', got {stripped.split()[0]!r}", i + 1)
                )
                i += 1
                continue
            i = self.parse_function(m.group(1), i + 1)
        return

    def parse_function(self, name: str, start: int) -> int:
        """Parse one function body; returns the line index after endfunc."""
        blocks: dict[int, BasicBlock] = {}
        order: list[int] = []
        instrs: dict[int, list[Instruction]] = {}
        edges: list[tuple[int, int, EdgeKind, int]] = []
        cur: int | None = None
        i = start
        n = len(self.lines)
        try:
            while i < n:
                raw = self.lines[i]
                lineno = i + 1
                stripped = raw.strip()
                if not stripped or stripped.startswith(";"):
                    i += 1
                    continue
                if stripped == "endfunc":
                    fn = self.finish(name, blocks, order, instrs, edges, lineno)
                    self.functions.append(fn)
                    return i + 1
                if stripped.startswith("func "):
                    self.fail("missing endfunc before next func", lineno, 1, name)
                if stripped.startswith("block"):
                    m = _BLOCK_RE.match(stripped)
                    if not m:
                        self.fail("malformed block header", lineno, 1, name)
                    bid = int(m.group(1))
                    if bid in blocks:
                        self.fail(f"duplicate block id {bid}", lineno, 1, name)
                    src = (m.group(2), int(m.group(3))) if m.group(2) else None
                    blocks[bid] = BasicBlock(id=bid, source_line=src)
                    order.append(bid)
                    instrs[bid] = []
                    cur = bid
                    i += 1
                    continue
                if stripped.startswith("edge"):
                    m = _EDGE_RE.match(stripped)
                    if not m:
                        self.fail("malformed edge line", lineno, 1, name)
                    kind = (
                        EdgeKind.CONDITIONAL if m.group(3) == "cond" else EdgeKind.UNCONDITIONAL
                    )
                    edges.append((int(m.group(1)), int(m.group(2)), kind, lineno))
                    i += 1
                    continue
                if cur is None:
                    self.fail("instruction outside any block", lineno, 1, name)
                instr = self.parse_instruction(raw, lineno, name)
                instrs[cur].append(instr)
                i += 1
            self.fail("unexpected end of input, missing endfunc", n, 1, name)
        except _FunctionAbort as abort:
            self.diagnostics.append(abort.diagnostic)
            # Skip ahead to the end of this function so later ones still parse.
            while i < n and self.lines[i].strip() != "endfunc":
                if self.lines[i].strip().startswith("func "):
                    return i
                i += 1
            return i + 1
        return n

    def parse_instruction(self, raw: str, lineno: int, func: str) -> Instruction:
        text = raw.strip()
        source: SourceLine | None = None
        # Split off a trailing ';' annotation or comment (quotes respected).
        in_str = False
        for pos, ch in enumerate(text):
            if ch == '"':
                in_str = not in_str
            elif ch == ";" and not in_str:
                tail = text[pos + 1 :]
                m = _LINE_ANNOT_RE.match(tail)
                if m:
                    source = (m.group(1), int(m.group(2)))
                text = text[:pos].rstrip()
                break
        if not text:
            self.fail("empty instruction", lineno, 1, func)
        head, _, rest = text.partition(" ")
        opcode = head.strip()
        if not _OPCODE_RE.match(opcode):
            self.fail(f"malformed opcode {opcode!r}", lineno, 1, func)
        rest = rest.strip()
        left = right = dest = None
        args: tuple[Operand, ...] = ()
        if rest:
            slots = _split_top_level(rest)
            if len(slots) == 1:
                left, args = self.parse_slot(slots[0], lineno, func)
            elif len(slots) == 3:
                left, args = self.parse_slot(slots[0], lineno, func)
                right, extra = self.parse_slot(slots[1], lineno, func)
                dest, extra2 = self.parse_slot(slots[2], lineno, func)
                if extra or extra2:
                    self.fail("call target must be the left operand", lineno, 1, func)
            else:
                self.fail(
                    f"expected 1 or 3 operand slots, got {len(slots)}", lineno, 1, func
                )
        instr = Instruction(
            opcode=opcode, left=left, right=right, dest=dest, args=args, source_line=source
        )
        self.validate_instruction(instr, lineno, func)
        return instr

    def parse_slot(
        self, slot: str, lineno: int, func: str
    ) -> tuple[Operand | None, tuple[Operand, ...]]:
        slot = slot.strip()
        if not slot:
            return None, ()
        if slot.startswith("fn:"):
            m = _CALL_RE.match(slot)
            if not m:
                self.fail(f"malformed call target {slot!r}", lineno, 1, func)
            inner = m.group(2).strip()
            args: list[Operand] = []
            if inner:
                for part in _split_top_level(inner):
                    op = self.parse_operand(part.strip(), lineno, func)
                    if op is None:
                        self.fail("empty call argument", lineno, 1, func)
                    args.append(op)
            return Operand(OperandKind.CALL_TARGET, m.group(1)), tuple(args)
        return self.parse_operand(slot, lineno, func), ()

    def parse_operand(self, text: str, lineno: int, func: str) -> Operand | None:
        if not text:
            return None
        if text.startswith('"'):
            if len(text) < 2 or not text.endswith('"') or '"' in text[1:-1]:
                self.fail(f"malformed string literal {text!r}", lineno, 1, func)
            return Operand(OperandKind.STR_CONST, text[1:-1])
        if text.startswith("#"):
            m = _NUM_RE.match(text)
            if not m:
                self.fail(f"malformed numeric constant {text!r}", lineno, 1, func)
            width = int(m.group(2)) if m.group(2) else None
            return Operand(OperandKind.NUM_CONST, f"#{m.group(1)}", width)
        kind = OperandKind.REGISTER
        body = text
        if len(text) > 1 and text[1] == ":" and text[0] in _PREFIX_KINDS:
            kind = _PREFIX_KINDS[text[0]]
            body = text[2:]
        if not body:
            self.fail(f"empty operand name in {text!r}", lineno, 1, func)
        if any(ch in _COMPOUND_CHARS for ch in body):
            # Compound expression: whole text is the dataflow name, no width.
            return Operand(kind, body)
        width = None
        m = re.match(r"^(.*?)\.(\d+)$", body)
        if m and m.group(1):
            body, width = m.group(1), int(m.group(2))
        if kind is OperandKind.EFLAG and body not in EFLAG_NAMES:
            self.fail(f"unknown eflag {body!r}", lineno, 1, func)
        return Operand(kind, body, width)

    def validate_instruction(self, instr: Instruction, lineno: int, func: str) -> None:
        if instr.left is not None and instr.left.kind is OperandKind.CALL_TARGET:
            if not instr.is_call:
                self.fail("call target on a non-call opcode", lineno, 1, func)
        if instr.right is not None and instr.right.kind is OperandKind.CALL_TARGET:
            self.fail("call target must be the left operand", lineno, 1, func)
        if instr.dest is not None:
            if instr.dest.kind in _VALUE_ONLY_KINDS:
                self.fail("dest operand cannot be a constant or call target", lineno, 1, func)
            if instr.jump is not JumpKind.NONE:
                self.fail("jump instructions cannot define a dest", lineno, 1, func)

    def finish(
        self,
        name: str,
        blocks: dict[int, BasicBlock],
        order: list[int],
        instrs: dict[int, list[Instruction]],
        edges: list[tuple[int, int, EdgeKind, int]],
        endline: int,
    ) -> FunctionIR:
        if not order:
            self.fail("function has no blocks", endline, 1, name)
        out_edges: dict[int, list[tuple[int, EdgeKind]]] = {b: [] for b in blocks}
        for src, dst, kind, lineno in edges:
            if src not in blocks:
                self.fail(f"edge from unknown block {src}", lineno, 1, name)
            if dst not in blocks:
                self.fail(f"edge to unknown block {dst}", lineno, 1, name)
            out_edges[src].append((dst, kind))
        final: dict[int, BasicBlock] = {}
        for bid in order:
            body = tuple(instrs[bid])
            outs = tuple(out_edges[bid])
            uncond = [e for e in outs if e[1] is EdgeKind.UNCONDITIONAL]
            if len(uncond) > 1:
                self.fail(f"block {bid} has multiple unconditional out-edges", endline, 1, name)
            has_cond_jump = bool(body) and body[-1].jump is JumpKind.CONDITIONAL
            if any(e[1] is EdgeKind.CONDITIONAL for e in outs) and not has_cond_jump:
                self.fail(
                    f"block {bid} has a conditional out-edge but no trailing conditional jump",
                    endline, 1, name,
                )
            final[bid] = BasicBlock(
                id=bid, instructions=body, out_edges=outs, source_line=blocks[bid].source_line
            )
        return FunctionIR(name=name, entry=order[0], blocks=final)


def parse_document(text: str) -> tuple[list[FunctionIR], list[Diagnostic]]:
    """Parse every function in ``text``.  A malformed function is dropped
    and reported as a diagnostic; well-formed siblings still parse."""
    p = _Parser(text)
    p.parse()
    return p.functions, p.diagnostics


def parse_sir(text: str, on_error: str = "raise") -> list[FunctionIR]:
    """Parse SIR text into function bodies.

    ``on_error="raise"`` raises :class:`SIRParseError` on the first
    diagnostic; ``on_error="skip"`` drops bad functions silently (the
    diagnostics are available through :func:`parse_document`).
    """
    functions, diagnostics = parse_document(text)
    if diagnostics and on_error == "raise":
        raise SIRParseError(diagnostics[0])
    return functions


# ---------------------------------------------------------------------------
# Printing


def format_operand(op: Operand) -> str:
    if op.kind is OperandKind.NUM_CONST:
        text = op.name
    elif op.kind is OperandKind.STR_CONST:
        return f'"{op.name}"'
    elif op.kind is OperandKind.CALL_TARGET:
        return f"fn:{op.name}"
    else:
        text = f"{_KIND_PREFIX[op.kind]}:{op.name}"
    if op.width is not None:
        text += f".{op.width}"
    return text


def format_instruction(instr: Instruction) -> str:
    parts = [instr.opcode]
    if instr.left is not None or instr.right is not None or instr.dest is not None:
        if instr.left is not None and instr.left.kind is OperandKind.CALL_TARGET:
            inner = ", ".join(format_operand(a) for a in instr.args)
            left = f"fn:{instr.left.name}({inner})"
        else:
            left = format_operand(instr.left) if instr.left else ""
        if instr.right is None and instr.dest is None:
            parts.append(left)
        else:
            right = format_operand(instr.right) if instr.right else ""
            dest = format_operand(instr.dest) if instr.dest else ""
            parts.append(f"{left}, {right}, {dest}")
    text = " ".join(parts)
    if instr.source_line is not None:
        text += f" ; line={instr.source_line[0]}:{instr.source_line[1]}"
    return text


def print_sir(functions: FunctionIR | Iterable[FunctionIR]) -> str:
    """Canonical textual form; ``parse_sir(print_sir(fs)) == fs``."""
    if isinstance(functions, FunctionIR):
        functions = [functions]
    out: list[str] = []
    for fn in functions:
        out.append(f"func {fn.name}")
        ids = fn.block_ids()
        # Entry block prints first; parse recovers entry as the first block.
        ids.remove(fn.entry)
        ids.insert(0, fn.entry)
        for bid in ids:
            block = fn.blocks[bid]
            header = f"block {bid}"
            if block.source_line is not None:
                header += f" line={block.source_line[0]}:{block.source_line[1]}"
            out.append(header)
            for instr in block.instructions:
                out.append(f"  {format_instruction(instr)}")
        for bid in ids:
            for dst, kind in fn.blocks[bid].out_edges:
                out.append(f"edge {bid} -> {dst} {kind.value}")
        out.append("endfunc")
        out.append("")
    return "\n".join(out)


def iter_instructions(fn: FunctionIR) -> Iterator[tuple[int, int, Instruction]]:
    """Yield (block id, index, instruction) in block-id order."""
    for bid in fn.block_ids():
        for idx, instr in enumerate(fn.blocks[bid].instructions):
            yield bid, idx, instr


def with_blocks(fn: FunctionIR, blocks: dict[int, BasicBlock]) -> FunctionIR:
    return replace(fn, blocks=blocks)
