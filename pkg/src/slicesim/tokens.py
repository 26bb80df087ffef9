"""Token normalisation and the dual opcode/operand vocabulary.

Normalisation keeps what survives recompilation and drops what does not:
numeric constants collapse to ``num``, ``_<digits>`` name suffixes are
stripped, string literals and call-target names stay verbatim, and
compound operands contribute their leaf identifiers/constants while the
operators between them are dropped.

Opcodes and operands live in separate vocabulary tables with disjoint id
ranges.  Out-of-vocabulary operands fall back to a token for their
operand kind; out-of-vocabulary opcodes fall back to a single unknown
opcode token.  Specials: PAD, MASK and CLS.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .sir import BasicBlock, Instruction, Operand, OperandKind
from .slicer import Slice

__all__ = [
    "Tok",
    "normalize",
    "tokenize_slice",
    "tokenize_block",
    "Vocab",
    "build_vocab",
    "PAD",
    "MASK",
    "CLS",
    "UNK_OPCODE",
]

Tok = tuple[str, str]  # (text, kind); kind is "opcode" or an OperandKind value

PAD = "<pad>"
MASK = "<mask>"
CLS = "<cls>"
UNK_OPCODE = "<unk-op>"

OPCODE_KIND = "opcode"

_SUFFIX_RE = re.compile(r"_\d+$")
_LEAF_SPLIT_RE = re.compile(r"[+\-*/\[\]() @]+")

#: Fixed order of operand kinds for the per-kind fallback tokens.
KIND_ORDER: tuple[OperandKind, ...] = (
    OperandKind.REGISTER,
    OperandKind.STACK_VAR,
    OperandKind.LOCAL_VAR,
    OperandKind.GLOBAL_VAR,
    OperandKind.NUM_CONST,
    OperandKind.STR_CONST,
    OperandKind.EFLAG,
    OperandKind.CALL_TARGET,
)

KIND_TOKENS = {kind: f"<{kind.value}>" for kind in KIND_ORDER}

NUM_TOKEN = "num"


def strip_suffix(name: str) -> str:
    return _SUFFIX_RE.sub("", name)


def _operand_toks(op: Operand) -> list[Tok]:
    kind = op.kind.value
    if op.kind is OperandKind.NUM_CONST:
        return [(NUM_TOKEN, kind)]
    if op.kind is OperandKind.STR_CONST:
        return [(op.name, kind)]
    if op.kind is OperandKind.CALL_TARGET:
        return [(op.name, kind)]
    if op.kind is OperandKind.EFLAG:
        return [(op.name, kind)]
    toks: list[Tok] = []
    for leaf in _LEAF_SPLIT_RE.split(op.name):
        if not leaf:
            continue
        if leaf.startswith("#"):
            toks.append((NUM_TOKEN, OperandKind.NUM_CONST.value))
        else:
            toks.append((strip_suffix(leaf), kind))
    return toks


def normalize(instr: Instruction) -> list[Tok]:
    """Token sequence for one instruction: opcode, then operands in
    (left, right, dest) order; call targets expand to name plus args."""
    toks: list[Tok] = [(instr.opcode, OPCODE_KIND)]
    for op in (instr.left, instr.right):
        if op is None:
            continue
        toks.extend(_operand_toks(op))
        if op.kind is OperandKind.CALL_TARGET:
            for arg in instr.args:
                toks.extend(_operand_toks(arg))
    if instr.dest is not None:
        toks.extend(_operand_toks(instr.dest))
    return toks


def tokenize_slice(slc: Slice, block: BasicBlock) -> Slice:
    """Return the slice with its concatenated normalised token sequence."""
    toks: list[Tok] = []
    for idx in slc.instr_indices:
        toks.extend(normalize(block.instructions[idx]))
    return slc.with_tokens(tuple(toks))


def tokenize_block(block: BasicBlock) -> tuple[Tok, ...]:
    toks: list[Tok] = []
    for instr in block.instructions:
        toks.extend(normalize(instr))
    return tuple(toks)


@dataclass
class Vocab:
    """Dual-table vocabulary over one shared, disjoint id space.

    Layout: PAD=0, MASK=1, CLS=2, unknown-opcode=3, the eight operand-kind
    fallback tokens, then in-vocabulary opcodes, then operands, each group
    sorted lexicographically.  ``encode`` never fails: anything unseen
    maps to its fallback.
    """

    min_count: int
    opcode_ids: dict[str, int] = field(default_factory=dict)
    operand_ids: dict[str, int] = field(default_factory=dict)

    PAD_ID = 0
    MASK_ID = 1
    CLS_ID = 2
    UNK_OPCODE_ID = 3

    @property
    def kind_ids(self) -> dict[str, int]:
        return {k.value: 4 + i for i, k in enumerate(KIND_ORDER)}

    @property
    def size(self) -> int:
        return 4 + len(KIND_ORDER) + len(self.opcode_ids) + len(self.operand_ids)

    def encode_tok(self, tok: Tok) -> int:
        text, kind = tok
        if kind == OPCODE_KIND:
            return self.opcode_ids.get(text, self.UNK_OPCODE_ID)
        tid = self.operand_ids.get(text)
        if tid is not None:
            return tid
        return self.kind_ids[kind]

    def encode(self, toks: Sequence[Tok], add_cls: bool = True) -> list[int]:
        ids = [self.CLS_ID] if add_cls else []
        ids.extend(self.encode_tok(t) for t in toks)
        return ids

    def id_to_token(self) -> dict[int, str]:
        table = {self.PAD_ID: PAD, self.MASK_ID: MASK, self.CLS_ID: CLS,
                 self.UNK_OPCODE_ID: UNK_OPCODE}
        for kind, tid in self.kind_ids.items():
            table[tid] = f"<{kind}>"
        table.update({tid: text for text, tid in self.opcode_ids.items()})
        table.update({tid: text for text, tid in self.operand_ids.items()})
        return table

    def dumps(self) -> str:
        """Serialise as ``token<TAB>id<TAB>table`` lines, sorted by id."""
        rows: list[tuple[int, str, str]] = [
            (self.PAD_ID, PAD, "special"),
            (self.MASK_ID, MASK, "special"),
            (self.CLS_ID, CLS, "special"),
            (self.UNK_OPCODE_ID, UNK_OPCODE, "opcode"),
        ]
        for kind, tid in self.kind_ids.items():
            rows.append((tid, f"<{kind}>", "operand"))
        rows.extend((tid, text, "opcode") for text, tid in self.opcode_ids.items())
        rows.extend((tid, text, "operand") for text, tid in self.operand_ids.items())
        rows.sort()
        lines = [f"{text}\t{tid}\t{table}" for tid, text, table in rows]
        lines.insert(0, f"; min_count={self.min_count}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Vocab":
        lines = text.splitlines()
        min_count = 0
        opcode_ids: dict[str, int] = {}
        operand_ids: dict[str, int] = {}
        for line in lines:
            if line.startswith(";"):
                m = re.search(r"min_count=(\d+)", line)
                if m:
                    min_count = int(m.group(1))
                continue
            if not line.strip():
                continue
            text, tid, table = line.split("\t")
            tid = int(tid)
            if tid < 4 + len(KIND_ORDER):
                continue  # specials and kind tokens are implicit
            if table == "opcode":
                opcode_ids[text] = tid
            else:
                operand_ids[text] = tid
        return cls(min_count=min_count, opcode_ids=opcode_ids, operand_ids=operand_ids)

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls.loads(Path(path).read_text())


def build_vocab(token_streams: Iterable[Sequence[Tok]], min_count: int = 10) -> Vocab:
    """Count tokens over the corpus and keep those seen strictly more than
    ``min_count`` times.  Deterministic for a given corpus: both tables
    are sorted lexicographically before ids are assigned."""
    opcode_counts: Counter[str] = Counter()
    operand_counts: Counter[str] = Counter()
    for stream in token_streams:
        for text, kind in stream:
            if kind == OPCODE_KIND:
                opcode_counts[text] += 1
            else:
                operand_counts[text] += 1
    vocab = Vocab(min_count=min_count)
    next_id = 4 + len(KIND_ORDER)
    for text in sorted(t for t, c in opcode_counts.items() if c > min_count):
        vocab.opcode_ids[text] = next_id
        next_id += 1
    for text in sorted(t for t, c in operand_counts.items() if c > min_count):
        vocab.operand_ids[text] = next_id
        next_id += 1
    return vocab
