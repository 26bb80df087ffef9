"""Flow-typed slice graph tests.

Golden edge lists below are derived by hand from the slicing rules:
slice ids number seeds block by block, control edges pick their type
from the (single vs multi)-slice shape of both endpoint blocks, and
cross-block reaching definitions add DataDependence edges.
"""

from __future__ import annotations

import numpy as np
import pytest

from conftest import FLAG_HEAVY_PRUNED_TEXT, FLAG_HEAVY_TEXT, random_function
from slicesim.graphbuild import (
    FlowType,
    SliceGraph,
    build_block_graph,
    build_graph,
    canonical_key,
    graph_dumps,
    graph_from_json,
    graph_to_dot,
    graph_to_json,
    merge_duplicates,
    reaching_definitions,
)
from slicesim.preprocess import prune
from slicesim.sir import def_use, parse_sir
from slicesim.slicer import Slice

SEQ = FlowType.SEQUENTIAL
JUMP = FlowType.JUMP
DD = FlowType.DATA_DEPENDENCE
SEQ_PAR = FlowType.SEQ_PARALLEL
JUMP_PAR = FlowType.JUMP_PARALLEL


def graph_of(text: str, pruned: bool = True) -> SliceGraph:
    fn = parse_sir(text)[0]
    return build_graph(prune(fn) if pruned else fn)


# ---------------------------------------------------------------------------
# Flow types


def test_flow_type_order_and_one_hot():
    assert [f.index for f in (SEQ, JUMP, DD, SEQ_PAR, JUMP_PAR)] == [0, 1, 2, 3, 4]
    assert SEQ.one_hot() == [1.0, 0.0, 0.0, 0.0, 0.0]
    assert JUMP_PAR.one_hot() == [0.0, 0.0, 0.0, 0.0, 1.0]
    assert FlowType("data_dependence") is DD


# ---------------------------------------------------------------------------
# Golden fixtures


def test_flag_heavy_graph_exercises_four_flow_types():
    # Pruned flagheavy: block 0 is one slice (0: setz+jz), block 1 splits
    # into four (1: errno store; 2: flag store; 3: idx chain into result;
    # 4: idx chain into rax), block 2 is one slice (5).  The cond edge
    # fans out from the jump slice, the uncond edges are SeqParallel on
    # the multi-slice side and Sequential between singletons, and the rax
    # def in slice 4 feeds block 2.
    graph = graph_of(FLAG_HEAVY_TEXT)
    assert [n.id for n in graph.nodes] == [0, 1, 2, 3, 4, 5]
    assert [n.block for n in graph.nodes] == [0, 1, 1, 1, 1, 2]
    assert graph.edges == [
        (0, 1, JUMP_PAR),
        (0, 2, JUMP_PAR),
        (0, 3, JUMP_PAR),
        (0, 4, JUMP_PAR),
        (0, 5, SEQ),
        (1, 5, SEQ_PAR),
        (2, 5, SEQ_PAR),
        (3, 5, SEQ_PAR),
        (4, 5, DD),
        (4, 5, SEQ_PAR),
    ]


def test_plain_jump_between_single_slice_blocks():
    text = """\
func condpair
block 0
  setz r:rax, #0, e:zf
  jz e:zf
edge 0 -> 1 cond
edge 0 -> 2 uncond
block 1
  mov #1, , s:a
edge 1 -> 2 uncond
block 2
  mov #2, , s:b
endfunc
"""
    graph = graph_of(text)
    assert graph.edges == [(0, 1, JUMP), (0, 2, SEQ), (1, 2, SEQ)]


def test_jump_parallel_fans_out_from_the_jump_slice_only():
    text = """\
func multisrc
block 0
  mov r:a, , s:x
  setz r:b, #0, e:zf
  jz e:zf
edge 0 -> 1 cond
edge 0 -> 2 uncond
block 1
  mov #1, , s:y
edge 1 -> 2 uncond
block 2
  mov #2, , s:z
endfunc
"""
    graph = graph_of(text)
    # Block 0 slices: 0 = the store, 1 = setz+jz.  Only slice 1 carries
    # the conditional edge; both carry the unconditional one.
    assert graph.edges == [
        (0, 3, SEQ_PAR),
        (1, 2, JUMP_PAR),
        (1, 3, SEQ_PAR),
        (2, 3, SEQ),
    ]


def test_slice_texts_render_member_instructions():
    graph = graph_of(FLAG_HEAVY_TEXT)
    assert graph.texts[0] == "setz r:rcx, #0, e:zf\njz e:zf"
    assert graph.texts[5] == "mov r:rax, , g:out"


def test_cross_block_dependence_requires_upward_exposed_use():
    text = """\
func shadowed
block 0
  mov #1, , r:rax
edge 0 -> 1 uncond
block 1
  mov #2, , r:rax
  mov r:rax, , g:out
endfunc
"""
    graph = graph_of(text, pruned=False)
    assert all(f is not DD for _, _, f in graph.edges)


def test_use_and_redef_in_same_instruction_is_upward_exposed():
    text = """\
func throughpass
block 0
  mov #1, , r:rax
edge 0 -> 1 uncond
block 1
  add r:rax, #1, r:rax
  mov r:rax, , g:out
endfunc
"""
    graph = graph_of(text, pruned=False)
    assert (0, 1, DD) in graph.edges


def test_no_self_loops_on_random_functions():
    rng = np.random.default_rng(701)
    for _ in range(150):
        fn = prune(random_function(rng))
        for src, dst, _f in build_graph(fn).edges:
            assert src != dst


def test_jump_slice_guard_rejects_malformed_covers():
    # With slices from slice_function the trailing jump always lives in
    # exactly one slice; a caller-supplied cover can violate that.
    from slicesim.slicer import slice_function

    text = """\
func condpair
block 0
  setz r:rax, #0, e:zf
  jz e:zf
edge 0 -> 1 cond
edge 0 -> 2 uncond
block 1
  mov #1, , s:a
edge 1 -> 2 uncond
block 2
  mov #2, , s:b
endfunc
"""
    fn = parse_sir(text)[0]
    slices = slice_function(fn)
    slices[0] = slices[0] + [Slice(id=99, block=0, instr_indices=(1,))]
    with pytest.raises(AssertionError, match="jump-bearing"):
        build_graph(fn, slices)


def test_empty_block_breaks_the_chain():
    from slicesim.sir import BasicBlock, EdgeKind, FunctionIR
    from conftest import ins, num, stack

    blocks = {
        0: BasicBlock(0, (ins("mov", num(1), None, stack("a")),),
                      ((1, EdgeKind.UNCONDITIONAL),)),
        1: BasicBlock(1, (), ((2, EdgeKind.UNCONDITIONAL),)),
        2: BasicBlock(2, (ins("mov", num(2), None, stack("b")),)),
    }
    fn = FunctionIR(name="gap", entry=0, blocks=blocks)
    graph = build_graph(fn)
    assert len(graph.nodes) == 2
    assert graph.edges == []


# ---------------------------------------------------------------------------
# Reaching definitions


def reaching_oracle(fn):
    """Path-walking re-derivation: (b, i, name) reaches a block's entry
    when the def survives the rest of b and some CFG walk from b arrives
    there without crossing another def of the same name."""
    result = {bid: set() for bid in fn.block_ids()}
    for b in fn.block_ids():
        block = fn.blocks[b]
        for i, instr in enumerate(block.instructions):
            defs, _ = def_use(instr)
            for name in defs:
                later = block.instructions[i + 1:]
                if any(name in def_use(x)[0] for x in later):
                    continue
                seen: set[int] = set()
                frontier = [tgt for tgt, _ in block.out_edges]
                while frontier:
                    t = frontier.pop()
                    if t in seen:
                        continue
                    seen.add(t)
                    result[t].add((b, i, name))
                    tb = fn.blocks[t]
                    if any(name in def_use(x)[0] for x in tb.instructions):
                        continue
                    frontier.extend(tgt for tgt, _ in tb.out_edges)
    return result


def test_reaching_definitions_match_path_oracle():
    rng = np.random.default_rng(702)
    for _ in range(150):
        fn = random_function(rng)
        assert reaching_definitions(fn) == reaching_oracle(fn)


def test_reaching_definitions_flow_around_loops():
    text = """\
func loopy
block 0
  mov #0, , r:acc
edge 0 -> 1 uncond
block 1
  setz r:acc, #10, e:zf
  jz e:zf
edge 1 -> 1 cond
edge 1 -> 2 uncond
block 2
  mov r:acc, , g:out
endfunc
"""
    fn = parse_sir(text)[0]
    reach = reaching_definitions(fn)
    assert (0, 0, "acc") in reach[1]
    assert (0, 0, "acc") in reach[2]
    # zf is re-generated by block 1 itself and cycles back to its entry.
    assert (1, 0, "zf") in reach[1]
    assert reaching_oracle(fn) == reach


# ---------------------------------------------------------------------------
# Duplicate merging


def tok_node(nid: int, *texts: str, block: int = 0) -> Slice:
    return Slice(id=nid, block=block, instr_indices=(0,),
                 tokens=tuple((t, "reg") for t in texts))


def test_identical_parallel_slices_merge():
    text = """\
func dup
block 0
  mov r:a, , s:x
  mov r:a, , s:x
endfunc
"""
    graph = graph_of(text, pruned=False)
    assert len(graph.nodes) == 2
    merged = merge_duplicates(graph)
    assert [n.id for n in merged.nodes] == [0]
    assert merged.edges == []
    assert merged.texts == {0: "mov r:a, , s:x"}


def test_nodes_with_different_tokens_do_not_merge():
    text = """\
func nodup
block 0
  mov r:a, , s:x
  mov r:a, , s:y
endfunc
"""
    graph = graph_of(text, pruned=False)
    assert len(merge_duplicates(graph).nodes) == 2


def test_same_tokens_different_neighbours_do_not_merge():
    nodes = [tok_node(0, "p"), tok_node(1, "q"), tok_node(2, "t"), tok_node(3, "t")]
    edges = [(0, 2, SEQ), (1, 3, SEQ)]
    graph = SliceGraph(function="g", nodes=nodes, edges=edges,
                       texts={n.id: "" for n in nodes})
    assert len(merge_duplicates(graph).nodes) == 4


def test_merge_groups_collapse_in_one_pass():
    # Two duplicate roots feeding two duplicate sinks: both groups have
    # identical typed-neighbour profiles, so everything folds to a single
    # edge and the kept ids are the group minima.
    nodes = [tok_node(0, "r"), tok_node(1, "r"), tok_node(2, "c"), tok_node(3, "c")]
    edges = [(0, 2, SEQ), (0, 3, SEQ), (1, 2, SEQ), (1, 3, SEQ)]
    graph = SliceGraph(function="g", nodes=nodes, edges=edges,
                       texts={n.id: "" for n in nodes})
    merged = merge_duplicates(graph)
    assert [n.id for n in merged.nodes] == [0, 2]
    assert merged.edges == [(0, 2, SEQ)]


def test_duplicated_chains_are_conservatively_kept():
    # Profiles compare neighbour ids, not neighbour classes, so a
    # duplicated two-node chain hanging off a shared sink stays separate:
    # each level waits on the other and neither group is identical yet.
    nodes = [tok_node(0, "b"), tok_node(1, "b"), tok_node(2, "a"),
             tok_node(3, "a"), tok_node(4, "z")]
    edges = [(0, 2, SEQ), (1, 3, SEQ), (2, 4, SEQ), (3, 4, SEQ)]
    graph = SliceGraph(function="g", nodes=nodes, edges=edges,
                       texts={n.id: "" for n in nodes})
    merged = merge_duplicates(graph)
    assert [n.id for n in merged.nodes] == [0, 1, 2, 3, 4]


def test_merge_keeps_minimum_id_and_is_idempotent():
    rng = np.random.default_rng(703)
    for _ in range(100):
        fn = prune(random_function(rng))
        graph = build_graph(fn)
        merged = merge_duplicates(graph)
        ids = [n.id for n in merged.nodes]
        assert set(ids) <= set(n.id for n in graph.nodes)
        again = merge_duplicates(merged)
        assert [n.id for n in again.nodes] == ids
        assert again.edges == merged.edges


def test_merge_preserves_flow_type_distinctions():
    # Parallel edges of different types between one pair survive merging.
    nodes = [tok_node(0, "a"), tok_node(1, "b")]
    edges = [(0, 1, SEQ_PAR), (0, 1, DD)]
    graph = SliceGraph(function="g", nodes=nodes, edges=edges,
                       texts={0: "", 1: ""})
    merged = merge_duplicates(graph)
    assert merged.edges == [(0, 1, DD), (0, 1, SEQ_PAR)]


# ---------------------------------------------------------------------------
# Canonical keys


def test_canonical_key_ignores_node_ids_and_order():
    graph = graph_of(FLAG_HEAVY_TEXT)
    relabeled = SliceGraph(
        function=graph.function,
        nodes=[Slice(id=n.id + 10, block=n.block, instr_indices=n.instr_indices,
                     tokens=n.tokens) for n in reversed(graph.nodes)],
        edges=[(s + 10, d + 10, f) for s, d, f in graph.edges],
        texts={nid + 10: t for nid, t in graph.texts.items()},
    )
    assert canonical_key(relabeled) == canonical_key(graph)


def test_canonical_key_comparable_across_builds():
    a = graph_of(FLAG_HEAVY_TEXT)
    b = graph_of(FLAG_HEAVY_TEXT)
    assert canonical_key(a) == canonical_key(b)


def test_canonical_key_sensitive_to_tokens_and_edges():
    graph = graph_of(FLAG_HEAVY_TEXT)
    key = canonical_key(graph)
    tweaked_nodes = list(graph.nodes)
    node = tweaked_nodes[1]
    tweaked_nodes[1] = Slice(id=node.id, block=node.block,
                             instr_indices=node.instr_indices,
                             tokens=node.tokens + (("extra", "reg"),))
    tweaked = SliceGraph(graph.function, tweaked_nodes, list(graph.edges),
                         dict(graph.texts))
    assert canonical_key(tweaked) != key
    fewer = SliceGraph(graph.function, list(graph.nodes), graph.edges[:-1],
                       dict(graph.texts))
    assert canonical_key(fewer) != key


def test_canonical_key_format():
    key = canonical_key(graph_of(FLAG_HEAVY_TEXT))
    assert len(key) == 16
    int(key, 16)  # hex digest prefix


# ---------------------------------------------------------------------------
# Whole-block graphs


def test_block_graph_of_flag_heavy():
    fn = parse_sir(FLAG_HEAVY_PRUNED_TEXT)[0]
    graph = build_block_graph(fn)
    assert [n.id for n in graph.nodes] == [0, 1, 2]
    assert [n.block for n in graph.nodes] == [0, 1, 2]
    assert graph.edges == [
        (0, 1, JUMP),
        (0, 2, SEQ),
        (1, 2, SEQ),
        (1, 2, DD),
    ]
    # Node tokens cover whole blocks.
    assert graph.nodes[2].tokens == (("mov", "opcode"), ("rax", "reg"), ("out", "global"))
    assert graph.nodes[1].instr_indices == (0, 1, 2, 3, 4)


def test_block_graph_has_one_node_per_block():
    rng = np.random.default_rng(704)
    for _ in range(50):
        fn = prune(random_function(rng))
        graph = build_block_graph(fn)
        assert len(graph.nodes) == len(fn.blocks)


# ---------------------------------------------------------------------------
# Serialisation


def test_json_round_trip():
    graph = merge_duplicates(graph_of(FLAG_HEAVY_TEXT))
    data = graph_to_json(graph)
    again = graph_from_json(data)
    assert again.function == graph.function
    assert again.nodes == graph.nodes
    assert again.edges == graph.edges
    assert again.texts == graph.texts


def test_json_round_trip_random():
    rng = np.random.default_rng(705)
    for _ in range(30):
        graph = build_graph(prune(random_function(rng)))
        again = graph_from_json(graph_to_json(graph))
        assert (again.nodes, again.edges, again.texts) == (
            graph.nodes, graph.edges, graph.texts
        )


def test_graph_dumps_is_deterministic_json():
    import json

    graph = graph_of(FLAG_HEAVY_TEXT)
    text = graph_dumps(graph)
    assert json.loads(text) == graph_to_json(graph)
    assert graph_dumps(graph) == text


def test_dot_output_mentions_every_node_and_flow_colour():
    graph = graph_of(FLAG_HEAVY_TEXT)
    dot = graph_to_dot(graph)
    assert dot.startswith('digraph "flagheavy"')
    for n in graph.nodes:
        assert f"n{n.id} [label=" in dot
    assert "color=orange" in dot      # jump_parallel
    assert "color=blue" in dot        # data_dependence
    assert 'label="sequential"' in dot
