"""Flow-typed graphs over slices.

Nodes are the slices of a pruned function; edges carry one of five flow
types.  Control-flow edges between two single-slice blocks stay plain
(Sequential for unconditional, Jump for conditional).  When either block
has several slices the edge fans out: unconditional edges become
SeqParallel from every source slice to every target slice, conditional
edges become JumpParallel from the one slice holding the jump to every
target slice.  Cross-block reaching definitions add DataDependence edges.
No parallel edges are created inside a block, and self-loops never occur.

``merge_duplicates`` folds nodes that optimisation duplicated: two nodes
merge when their normalised token sequences and their typed predecessor
and successor multisets all agree, iterated to a fixpoint.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

from .sir import FunctionIR, JumpKind, def_use
from .slicer import Slice, slice_function
from .tokens import Tok, tokenize_block, tokenize_slice

__all__ = [
    "FlowType",
    "SliceGraph",
    "build_graph",
    "build_block_graph",
    "merge_duplicates",
    "reaching_definitions",
    "canonical_key",
    "graph_to_json",
    "graph_from_json",
    "graph_dumps",
    "graph_to_dot",
]


class FlowType(Enum):
    SEQUENTIAL = "sequential"
    JUMP = "jump"
    DATA_DEPENDENCE = "data_dependence"
    SEQ_PARALLEL = "seq_parallel"
    JUMP_PARALLEL = "jump_parallel"

    @property
    def index(self) -> int:
        return _FLOW_ORDER.index(self)

    def one_hot(self) -> list[float]:
        vec = [0.0] * len(_FLOW_ORDER)
        vec[self.index] = 1.0
        return vec


_FLOW_ORDER = (
    FlowType.SEQUENTIAL,
    FlowType.JUMP,
    FlowType.DATA_DEPENDENCE,
    FlowType.SEQ_PARALLEL,
    FlowType.JUMP_PARALLEL,
)

Edge = tuple[int, int, FlowType]


@dataclass
class SliceGraph:
    function: str
    nodes: list[Slice] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    texts: dict[int, str] = field(default_factory=dict)

    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def node(self, node_id: int) -> Slice:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)


def _sorted_edges(edges: set[Edge]) -> list[Edge]:
    return sorted(edges, key=lambda e: (e[0], e[1], e[2].index))


def reaching_definitions(fn: FunctionIR) -> dict[int, set[tuple[int, int, str]]]:
    """Definitions (block, index, name) reaching each block's entry."""
    ids = fn.block_ids()
    gen: dict[int, dict[str, tuple[int, int]]] = {}
    all_defs: dict[str, set[tuple[int, int]]] = {}
    for bid in ids:
        last: dict[str, tuple[int, int]] = {}
        for idx, instr in enumerate(fn.blocks[bid].instructions):
            defs, _ = def_use(instr)
            for name in defs:
                last[name] = (bid, idx)
                all_defs.setdefault(name, set()).add((bid, idx))
        gen[bid] = last

    reach_in: dict[int, set[tuple[int, int, str]]] = {bid: set() for bid in ids}
    reach_out: dict[int, set[tuple[int, int, str]]] = {bid: set() for bid in ids}
    preds = fn.predecessors()
    changed = True
    while changed:
        changed = False
        for bid in ids:
            new_in: set[tuple[int, int, str]] = set()
            for pred, _kind in preds[bid]:
                new_in |= reach_out[pred]
            survivors = {d for d in new_in if d[2] not in gen[bid]}
            new_out = survivors | {
                (b, i, name) for name, (b, i) in gen[bid].items()
            }
            if new_in != reach_in[bid] or new_out != reach_out[bid]:
                reach_in[bid] = new_in
                reach_out[bid] = new_out
                changed = True
    return reach_in


def _jump_slice(slices: list[Slice], block_len: int) -> Slice:
    jump_idx = block_len - 1
    owners = [s for s in slices if jump_idx in s.instr_indices]
    if len(owners) != 1:
        raise AssertionError("conditional block must have exactly one jump-bearing slice")
    return owners[0]


def build_graph(fn: FunctionIR, slices: dict[int, list[Slice]] | None = None) -> SliceGraph:
    """Build the flow-typed slice graph of a (pruned) function."""
    if slices is None:
        slices = slice_function(fn)
    tokenized: dict[int, list[Slice]] = {}
    from .slicer import render_slice

    graph = SliceGraph(function=fn.name)
    for bid in fn.block_ids():
        block = fn.blocks[bid]
        enriched = [tokenize_slice(s, block) for s in slices.get(bid, [])]
        tokenized[bid] = enriched
        for s in enriched:
            graph.nodes.append(s)
            graph.texts[s.id] = render_slice(s, block)

    edges: set[Edge] = set()
    for bid in fn.block_ids():
        block = fn.blocks[bid]
        src_slices = tokenized[bid]
        if not src_slices:
            continue
        for tgt, kind in block.out_edges:
            dst_slices = tokenized.get(tgt, [])
            if not dst_slices:
                continue
            single = len(src_slices) == 1 and len(dst_slices) == 1
            if kind.value == "uncond":
                ftype = FlowType.SEQUENTIAL if single else FlowType.SEQ_PARALLEL
                for s in src_slices:
                    for t in dst_slices:
                        if s.id != t.id:
                            edges.add((s.id, t.id, ftype))
            else:
                ftype = FlowType.JUMP if single else FlowType.JUMP_PARALLEL
                src = _jump_slice(src_slices, len(block.instructions))
                for t in dst_slices:
                    if src.id != t.id:
                        edges.add((src.id, t.id, ftype))

    # Cross-block data dependence via reaching definitions.
    reach_in = reaching_definitions(fn)
    owner: dict[tuple[int, int], list[int]] = {}
    for bid, slist in tokenized.items():
        for s in slist:
            for idx in s.instr_indices:
                owner.setdefault((bid, idx), []).append(s.id)
    for bid in fn.block_ids():
        block = fn.blocks[bid]
        by_name: dict[str, list[tuple[int, int]]] = {}
        for b, i, name in reach_in[bid]:
            by_name.setdefault(name, []).append((b, i))
        local_defs: set[str] = set()
        for idx, instr in enumerate(block.instructions):
            defs, uses = def_use(instr)
            for name in uses:
                if name in local_defs:
                    continue
                for db, di in by_name.get(name, []):
                    if db == bid:
                        # Same-block defs can only reach around a loop;
                        # dependence edges stay cross-block by contract.
                        continue
                    for src_id in owner.get((db, di), []):
                        for dst_id in owner.get((bid, idx), []):
                            edges.add((src_id, dst_id, FlowType.DATA_DEPENDENCE))
            local_defs.update(defs)

    graph.edges = _sorted_edges(edges)
    return graph


def build_block_graph(fn: FunctionIR) -> SliceGraph:
    """Whole-block graph: one node per basic block, control-flow edges
    (Sequential/Jump) plus block-level DataDependence.  Used by the
    no-slicing ablation; token sequences cover the entire block."""
    graph = SliceGraph(function=fn.name)
    ids = fn.block_ids()
    node_of: dict[int, int] = {}
    from .slicer import render_slice

    for node_id, bid in enumerate(ids):
        block = fn.blocks[bid]
        slc = Slice(
            id=node_id,
            block=bid,
            instr_indices=tuple(range(len(block.instructions))),
            tokens=tokenize_block(block),
        )
        graph.nodes.append(slc)
        graph.texts[node_id] = render_slice(slc, block)
        node_of[bid] = node_id

    edges: set[Edge] = set()
    for bid in ids:
        for tgt, kind in fn.blocks[bid].out_edges:
            if node_of[bid] == node_of[tgt]:
                continue
            ftype = FlowType.SEQUENTIAL if kind.value == "uncond" else FlowType.JUMP
            edges.add((node_of[bid], node_of[tgt], ftype))
    reach_in = reaching_definitions(fn)
    for bid in ids:
        block = fn.blocks[bid]
        local_defs: set[str] = set()
        for idx, instr in enumerate(block.instructions):
            defs, uses = def_use(instr)
            for name in uses:
                if name in local_defs:
                    continue
                for db, _di, dname in ((b, i, n) for b, i, n in reach_in[bid] if n == name):
                    if db != bid:
                        edges.add((node_of[db], node_of[bid], FlowType.DATA_DEPENDENCE))
            local_defs.update(defs)
    graph.edges = _sorted_edges(edges)
    return graph


def merge_duplicates(graph: SliceGraph) -> SliceGraph:
    """Fold duplicate nodes until none remain.

    Nodes merge when their token sequences match and their (neighbour id,
    flow type) multisets match on both sides.  Edges are deduplicated
    afterwards; merging cannot create self-loops because a would-be edge
    between two merged nodes would have to appear as a self-loop in one
    of their profiles already.
    """
    nodes = list(graph.nodes)
    edges = set(graph.edges)
    texts = dict(graph.texts)
    while True:
        preds: dict[int, list[tuple[int, int]]] = {n.id: [] for n in nodes}
        succs: dict[int, list[tuple[int, int]]] = {n.id: [] for n in nodes}
        for src, dst, ftype in edges:
            succs[src].append((dst, ftype.index))
            preds[dst].append((src, ftype.index))
        groups: dict[tuple, list[int]] = {}
        for n in nodes:
            key = (
                n.tokens,
                tuple(sorted(preds[n.id])),
                tuple(sorted(succs[n.id])),
            )
            groups.setdefault(key, []).append(n.id)
        remap: dict[int, int] = {}
        for members in groups.values():
            if len(members) > 1:
                keep = min(members)
                for m in members:
                    if m != keep:
                        remap[m] = keep
        if not remap:
            break
        nodes = [n for n in nodes if n.id not in remap]
        new_edges: set[Edge] = set()
        for src, dst, ftype in edges:
            s = remap.get(src, src)
            d = remap.get(dst, dst)
            if s != d:
                new_edges.add((s, d, ftype))
        edges = new_edges
        for dead in remap:
            texts.pop(dead, None)
    return SliceGraph(
        function=graph.function, nodes=nodes, edges=_sorted_edges(edges), texts=texts
    )


def canonical_key(graph: SliceGraph) -> str:
    """Node-order-independent fingerprint of a graph.

    Colour refinement seeded from token sequences: each round a node's
    colour becomes a digest of (own colour, sorted typed in-neighbour
    colours, sorted typed out-neighbour colours).  The key digests the
    final colour multiset plus the typed edge multiset.  Since colours
    are content hashes, keys are comparable across graphs.  As with any
    colour refinement this can, in principle, declare two non-identical
    graphs equal; callers use it as a guard where a false match is
    harmless and a false mismatch merely skips a transform.
    """

    def digest(obj) -> str:
        return hashlib.sha256(repr(obj).encode()).hexdigest()[:16]

    colour = {n.id: digest(("tokens", n.tokens)) for n in graph.nodes}
    in_adj: dict[int, list[tuple[int, int]]] = {n.id: [] for n in graph.nodes}
    out_adj: dict[int, list[tuple[int, int]]] = {n.id: [] for n in graph.nodes}
    for src, dst, ftype in graph.edges:
        out_adj[src].append((ftype.index, dst))
        in_adj[dst].append((ftype.index, src))
    for _ in range(max(1, len(graph.nodes))):
        colour = {
            nid: digest(
                (
                    colour[nid],
                    tuple(sorted((f, colour[s]) for f, s in in_adj[nid])),
                    tuple(sorted((f, colour[d]) for f, d in out_adj[nid])),
                )
            )
            for nid in colour
        }
    edge_sig = sorted(
        (colour[src], ftype.index, colour[dst]) for src, dst, ftype in graph.edges
    )
    return digest((sorted(colour.values()), edge_sig))


# ---------------------------------------------------------------------------
# Serialisation


def graph_to_json(graph: SliceGraph) -> dict:
    return {
        "function": graph.function,
        "nodes": [
            {
                "id": n.id,
                "block": n.block,
                "instructions": list(n.instr_indices),
                "tokens": [[t, k] for t, k in n.tokens],
                "text": graph.texts.get(n.id, ""),
            }
            for n in graph.nodes
        ],
        "edges": [[src, dst, ftype.value] for src, dst, ftype in graph.edges],
    }


def graph_from_json(data: dict) -> SliceGraph:
    nodes = [
        Slice(
            id=n["id"],
            block=n["block"],
            instr_indices=tuple(n["instructions"]),
            tokens=tuple((t, k) for t, k in n["tokens"]),
        )
        for n in data["nodes"]
    ]
    texts = {n["id"]: n.get("text", "") for n in data["nodes"]}
    edges = [(src, dst, FlowType(value)) for src, dst, value in data["edges"]]
    return SliceGraph(
        function=data["function"], nodes=nodes, edges=_sorted_edges(set(edges)), texts=texts
    )


def graph_dumps(graph: SliceGraph) -> str:
    return json.dumps(graph_to_json(graph), indent=2, sort_keys=True)


_DOT_COLORS = {
    FlowType.SEQUENTIAL: "black",
    FlowType.JUMP: "red",
    FlowType.DATA_DEPENDENCE: "blue",
    FlowType.SEQ_PARALLEL: "darkgreen",
    FlowType.JUMP_PARALLEL: "orange",
}


def graph_to_dot(graph: SliceGraph) -> str:
    lines = [f'digraph "{graph.function}" {{', "  node [shape=box, fontname=monospace];"]
    for n in graph.nodes:
        label = graph.texts.get(n.id, " ".join(t for t, _ in n.tokens))
        label = label.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\l") + "\\l"
        lines.append(f'  n{n.id} [label="{label}"];')
    for src, dst, ftype in graph.edges:
        lines.append(
            f'  n{src} -> n{dst} [color={_DOT_COLORS[ftype]}, label="{ftype.value}"];'
        )
    lines.append("}")
    return "\n".join(lines)
