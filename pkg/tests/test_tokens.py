"""Normalisation and vocabulary tests."""

from __future__ import annotations

import pytest

from conftest import ins, num, reg, stack, target
from slicesim.sir import Operand, OperandKind, parse_sir
from slicesim.slicer import Slice, slice_block
from slicesim.tokens import (
    CLS,
    KIND_ORDER,
    MASK,
    PAD,
    UNK_OPCODE,
    Vocab,
    build_vocab,
    normalize,
    strip_suffix,
    tokenize_block,
    tokenize_slice,
)


def instr_of(text: str):
    return parse_sir(f"func f\nblock 0\n  {text}\nendfunc\n")[0].blocks[0].instructions[0]


# ---------------------------------------------------------------------------
# Normalisation


def test_constant_mov_normalises_to_three_tokens():
    toks = normalize(instr_of("mov #5, , r:rax"))
    assert toks == [("mov", "opcode"), ("num", "num"), ("rax", "reg")]


def test_operand_order_is_left_right_dest():
    toks = normalize(instr_of("add s:x, l:y, g:z"))
    assert toks == [("add", "opcode"), ("x", "stack"), ("y", "local"), ("z", "global")]


def test_numeric_suffix_stripped():
    assert strip_suffix("rdi_160") == "rdi"
    assert strip_suffix("a_12_3") == "a_12"
    assert strip_suffix("v_1x") == "v_1x"
    toks = normalize(instr_of("mov r:rdi_160, , r:rax"))
    assert toks[1] == ("rdi", "reg")


def test_compound_operand_splits_into_leaves():
    toks = normalize(instr_of("mov s:rbp-8+idx*4, , r:rax"))
    assert toks == [
        ("mov", "opcode"),
        ("rbp", "stack"),
        ("8", "stack"),
        ("idx", "stack"),
        ("4", "stack"),
        ("rax", "reg"),
    ]


def test_compound_hash_leaf_becomes_num():
    toks = normalize(instr_of("mov s:buf[#8], , r:rax"))
    assert toks == [("mov", "opcode"), ("buf", "stack"), ("num", "num"), ("rax", "reg")]


def test_call_target_expands_name_then_args():
    toks = normalize(instr_of("call fn:memcpy(r:rdi, s:n, #16)"))
    assert toks == [
        ("call", "opcode"),
        ("memcpy", "call"),
        ("rdi", "reg"),
        ("n", "stack"),
        ("num", "num"),
    ]


def test_string_and_eflag_tokens_verbatim():
    toks = normalize(instr_of('mov "fmt %d", , r:rdi'))
    assert toks[1] == ("fmt %d", "str")
    toks = normalize(instr_of("jz e:zf"))
    assert toks == [("jz", "opcode"), ("zf", "eflag")]


def test_width_never_leaks_into_tokens():
    toks = normalize(instr_of("mov #0.4, , rax.8"))
    assert toks == [("mov", "opcode"), ("num", "num"), ("rax", "reg")]


def test_tokenize_slice_concatenates_members_in_order():
    fn = parse_sir(
        "func f\nblock 0\n  mov #1, , r:a\n  add r:a, #2, r:b\n  mov r:b, , s:out\nendfunc\n"
    )[0]
    block = fn.blocks[0]
    slices = slice_block(block)
    assert len(slices) == 1
    tokked = tokenize_slice(slices[0], block)
    assert isinstance(tokked, Slice)
    assert tokked.instr_indices == slices[0].instr_indices
    assert tokked.tokens == (
        ("mov", "opcode"), ("num", "num"), ("a", "reg"),
        ("add", "opcode"), ("a", "reg"), ("num", "num"), ("b", "reg"),
        ("mov", "opcode"), ("b", "reg"), ("out", "stack"),
    )


def test_tokenize_block_covers_all_instructions():
    fn = parse_sir(
        "func f\nblock 0\n  mov #1, , r:a\n  mov #2, , s:x\nendfunc\n"
    )[0]
    toks = tokenize_block(fn.blocks[0])
    assert toks == (
        ("mov", "opcode"), ("num", "num"), ("a", "reg"),
        ("mov", "opcode"), ("num", "num"), ("x", "stack"),
    )


# ---------------------------------------------------------------------------
# Vocabulary


def streams():
    # "mov" x3, "add" x1; operand "rax" x3, "rbx" x1, "num" x2.
    return [
        [("mov", "opcode"), ("num", "num"), ("rax", "reg")],
        [("mov", "opcode"), ("rax", "reg"), ("rbx", "reg")],
        [("mov", "opcode"), ("num", "num"), ("rax", "reg")],
        [("add", "opcode")],
    ]


def test_fixed_special_and_kind_ids():
    vocab = build_vocab(streams(), min_count=0)
    assert Vocab.PAD_ID == 0 and Vocab.MASK_ID == 1
    assert Vocab.CLS_ID == 2 and Vocab.UNK_OPCODE_ID == 3
    kind_ids = vocab.kind_ids
    assert [kind_ids[k.value] for k in KIND_ORDER] == list(range(4, 12))


def test_vocab_assigns_opcodes_then_operands_lexicographically():
    vocab = build_vocab(streams(), min_count=0)
    assert vocab.opcode_ids == {"add": 12, "mov": 13}
    assert vocab.operand_ids == {"num": 14, "rax": 15, "rbx": 16}
    assert vocab.size == 17


def test_min_count_is_strict():
    vocab = build_vocab(streams(), min_count=1)
    # Count 1 entries ("add", "rbx") fall below; count 2 "num" survives.
    assert "add" not in vocab.opcode_ids
    assert "rbx" not in vocab.operand_ids
    assert "num" in vocab.operand_ids
    vocab3 = build_vocab(streams(), min_count=3)
    assert vocab3.opcode_ids == {} and vocab3.operand_ids == {}


def test_encode_prepends_cls_and_handles_oov():
    vocab = build_vocab(streams(), min_count=0)
    ids = vocab.encode([("mov", "opcode"), ("rax", "reg")])
    assert ids[0] == Vocab.CLS_ID
    assert ids[1:] == [vocab.opcode_ids["mov"], vocab.operand_ids["rax"]]
    # Unseen opcode falls back to the unknown-opcode id.
    assert vocab.encode_tok(("xor", "opcode")) == Vocab.UNK_OPCODE_ID
    # Unseen operands fall back to their kind token.
    assert vocab.encode_tok(("r15", "reg")) == vocab.kind_ids["reg"]
    assert vocab.encode_tok(("nope", "stack")) == vocab.kind_ids["stack"]
    assert vocab.encode([("mov", "opcode")], add_cls=False) == [vocab.opcode_ids["mov"]]


def test_same_text_distinct_tables():
    # "call" exists as both an opcode and an operand-kind namespace entry.
    vocab = build_vocab(
        [[("call", "opcode"), ("call", "reg")]], min_count=0
    )
    assert vocab.encode_tok(("call", "opcode")) == vocab.opcode_ids["call"]
    assert vocab.encode_tok(("call", "reg")) == vocab.operand_ids["call"]
    assert vocab.opcode_ids["call"] != vocab.operand_ids["call"]


def test_id_to_token_inverts_encoding():
    vocab = build_vocab(streams(), min_count=0)
    table = vocab.id_to_token()
    assert table[0] == PAD and table[1] == MASK and table[2] == CLS
    assert table[3] == UNK_OPCODE
    assert table[vocab.opcode_ids["mov"]] == "mov"
    assert table[vocab.operand_ids["rax"]] == "rax"
    assert len(table) == vocab.size


def test_dumps_loads_round_trip(tmp_path):
    vocab = build_vocab(streams(), min_count=1)
    text = vocab.dumps()
    assert text.startswith("; min_count=1\n")
    assert f"{PAD}\t0\tspecial" in text
    again = Vocab.loads(text)
    assert again == vocab
    path = tmp_path / "vocab.tsv"
    vocab.save(path)
    assert Vocab.load(path) == vocab


def test_loads_rejects_nothing_but_reproduces_ids():
    vocab = build_vocab(streams(), min_count=0)
    again = Vocab.loads(vocab.dumps())
    for tok in [("mov", "opcode"), ("rax", "reg"), ("zzz", "local")]:
        assert again.encode_tok(tok) == vocab.encode_tok(tok)


def test_operand_builders_match_parser_kinds():
    assert num(5) == Operand(OperandKind.NUM_CONST, "#5")
    assert reg("rax").kind is OperandKind.REGISTER
    assert stack("x").kind is OperandKind.STACK_VAR
    assert target("f").kind is OperandKind.CALL_TARGET
    assert normalize(ins("mov", num(5), None, reg("rax"))) == [
        ("mov", "opcode"), ("num", "num"), ("rax", "reg"),
    ]
