"""Pairwise graph matching with cross-graph attention.

Both graphs propagate jointly for a fixed number of rounds.  Within a
graph, messages run along typed edges (one-hot flow features through an
edge encoder).  Across graphs, each node attends to the other graph's
nodes by softmaxed cosine similarity; the attention-weighted difference
is fed to a GRU next to the summed intra-graph messages.  All inputs to
one round read the start-of-round states, then a single GRU update
applies.  A gated sum pools node states into a graph vector, and the
match distance is the squared Euclidean distance between graph vectors
(score output also reports the cosine for comparison).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graphbuild import FlowType, SliceGraph
from .nn import (
    Adam,
    GRUCell,
    MLP,
    Tensor,
    concat,
    gather_rows,
    load_checkpoint,
    matmul,
    no_grad,
    one_hot,
    relu,
    save_checkpoint,
    scatter_add_rows,
    sigmoid,
    softmax,
    zero_grads,
)

__all__ = [
    "MatchConfig",
    "MatchModel",
    "GraphInput",
    "graph_input",
    "propagate_pair",
    "pair_loss",
    "score_pair",
    "train_matcher",
    "export_attention",
    "attention_to_dot",
    "save_matcher",
    "load_matcher",
]

log = logging.getLogger(__name__)

N_FLOW_TYPES = 5


@dataclass(frozen=True)
class MatchConfig:
    hidden: int = 128
    rounds: int = 10
    margin: float = 0.5
    lr: float = 0.001
    batch: int = 20
    cross_attention: bool = True
    drop_flow: int | None = None  # flow-type index whose edge feature is all-ones

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("need at least one propagation round")
        if self.drop_flow is not None and not 0 <= self.drop_flow < N_FLOW_TYPES:
            raise ValueError("drop_flow must be a flow-type index")


@dataclass
class GraphInput:
    """Matcher-ready view of one graph: node feature rows plus edges as
    (src row, dst row, flow index) triples."""

    feats: np.ndarray
    edges: list[tuple[int, int, int]] = field(default_factory=list)
    texts: list[str] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.feats.shape[0]


def graph_input(graph: SliceGraph, vectors: dict[int, np.ndarray]) -> GraphInput:
    """Pack a slice graph and its per-node embeddings for the matcher."""
    index = {n.id: i for i, n in enumerate(graph.nodes)}
    feats = np.stack([vectors[n.id] for n in graph.nodes])
    edges = [(index[s], index[d], f.index) for s, d, f in graph.edges]
    texts = [graph.texts.get(n.id, "") for n in graph.nodes]
    return GraphInput(feats=feats, edges=edges, texts=texts)


class MatchModel:
    def __init__(self, in_dim: int, cfg: MatchConfig = MatchConfig(), seed: int = 0):
        self.in_dim = in_dim
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        h = cfg.hidden
        self.enc_node = MLP(in_dim, h, h, rng)
        self.enc_edge = MLP(N_FLOW_TYPES, h, h, rng)
        self.msg = MLP(3 * h, h, h, rng)
        self.gru = GRUCell(2 * h, h, rng)
        self.gate = MLP(h, h, h, rng)
        self.transform = MLP(h, h, h, rng)
        self.readout = MLP(h, h, h, rng)

    def params(self):
        out = []
        for prefix, module in (
            ("enc_node", self.enc_node), ("enc_edge", self.enc_edge), ("msg", self.msg),
            ("gru", self.gru), ("gate", self.gate), ("transform", self.transform),
            ("readout", self.readout),
        ):
            out.extend((f"{prefix}.{n}", t) for n, t in module.params())
        return out

    # -- building blocks ------------------------------------------------

    def edge_vectors(self, g: GraphInput) -> Tensor | None:
        if not g.edges:
            return None
        types = [e[2] for e in g.edges]
        feats = one_hot(types, N_FLOW_TYPES)
        if self.cfg.drop_flow is not None:
            feats[np.array(types) == self.cfg.drop_flow] = 1.0
        return self.enc_edge(Tensor(feats))

    def messages(self, h: Tensor, g: GraphInput, evec: Tensor | None) -> Tensor:
        if evec is None:
            return Tensor(np.zeros((g.n_nodes, self.cfg.hidden)))
        src = np.array([e[0] for e in g.edges], dtype=np.int64)
        dst = np.array([e[1] for e in g.edges], dtype=np.int64)
        m = self.msg(concat([gather_rows(h, src), gather_rows(h, dst), evec], axis=-1))
        return scatter_add_rows(m, dst, g.n_nodes)

    def aggregate(self, h: Tensor) -> Tensor:
        gated = sigmoid(self.gate(h)) * self.transform(h)
        return self.readout(gated.sum(axis=0, keepdims=True))[0]


def _normalize_rows(h: Tensor) -> Tensor:
    norm = ((h * h).sum(axis=-1, keepdims=True) + 1e-12) ** 0.5
    return h / norm


@dataclass
class PropagationTrace:
    """Per-round cross-attention matrices (detached numpy copies)."""

    a_1_to_2: list[np.ndarray] = field(default_factory=list)
    a_2_to_1: list[np.ndarray] = field(default_factory=list)


def propagate_pair(
    model: MatchModel, g1: GraphInput, g2: GraphInput, trace: PropagationTrace | None = None
) -> tuple[Tensor, Tensor]:
    """Joint propagation; returns the two graph vectors."""
    cfg = model.cfg
    if g1.n_nodes == 0 or g2.n_nodes == 0:
        raise ValueError("cannot match an empty graph")
    h1 = model.enc_node(Tensor(g1.feats))
    h2 = model.enc_node(Tensor(g2.feats))
    e1 = model.edge_vectors(g1)
    e2 = model.edge_vectors(g2)
    for _round in range(cfg.rounds):
        m1 = model.messages(h1, g1, e1)
        m2 = model.messages(h2, g2, e2)
        sim = matmul(_normalize_rows(h1), _normalize_rows(h2).transpose((1, 0)))
        a12 = softmax(sim, axis=-1)
        a21 = softmax(sim.transpose((1, 0)), axis=-1)
        if trace is not None:
            trace.a_1_to_2.append(a12.data.copy())
            trace.a_2_to_1.append(a21.data.copy())
        if cfg.cross_attention:
            mu1 = h1 - matmul(a12, h2)
            mu2 = h2 - matmul(a21, h1)
        else:
            mu1 = Tensor(np.zeros_like(h1.data))
            mu2 = Tensor(np.zeros_like(h2.data))
        h1 = model.gru(h1, concat([m1, mu1], axis=-1))
        h2 = model.gru(h2, concat([m2, mu2], axis=-1))
    return model.aggregate(h1), model.aggregate(h2)


def pair_loss(model: MatchModel, g1: GraphInput, g2: GraphInput, label: int) -> Tensor:
    """Margin loss max(0, margin - t*(1 - d)); t=+1 similar, -1 dissimilar."""
    hg1, hg2 = propagate_pair(model, g1, g2)
    diff = hg1 - hg2
    d = (diff * diff).sum()
    return relu(model.cfg.margin - float(label) * (1.0 - d))


def score_pair(
    model: MatchModel, g1: GraphInput, g2: GraphInput, with_trace: bool = False
) -> dict:
    """Distance score (lower = more similar) plus the cosine for reference."""
    trace = PropagationTrace() if with_trace else None
    with no_grad():
        hg1, hg2 = propagate_pair(model, g1, g2, trace)
    v1, v2 = hg1.data, hg2.data
    distance = float(((v1 - v2) ** 2).sum())
    cos = float(v1 @ v2 / (np.linalg.norm(v1) * np.linalg.norm(v2) + 1e-12))
    out = {"distance": distance, "cosine": cos}
    if with_trace:
        out["trace"] = trace
    return out


def train_matcher(
    model: MatchModel,
    pairs: Sequence[tuple[GraphInput, GraphInput, int]],
    *,
    epochs: int = 10,
    seed: int = 0,
) -> list[float]:
    """Train on (g1, g2, t) pairs with t in {+1, -1}; returns epoch losses."""
    labels = {t for _a, _b, t in pairs}
    if +1 not in labels or -1 not in labels:
        raise ValueError("training needs both similar (+1) and dissimilar (-1) pairs")
    cfg = model.cfg
    rng = np.random.default_rng(seed)
    opt = Adam(lr=cfg.lr)
    params = model.params()
    history: list[float] = []
    pair_list = list(pairs)
    for epoch in range(epochs):
        order = rng.permutation(len(pair_list))
        losses: list[float] = []
        for start in range(0, len(order), cfg.batch):
            chunk = [pair_list[i] for i in order[start : start + cfg.batch]]
            zero_grads(params)
            total: Tensor | None = None
            for a, b, t in chunk:
                term = pair_loss(model, a, b, t)
                total = term if total is None else total + term
            loss = total * (1.0 / len(chunk))
            loss.backward()
            opt.step(params)
            losses.append(loss.item())
        epoch_loss = float(np.mean(losses)) if losses else float("nan")
        history.append(epoch_loss)
        log.info("matcher epoch %d/%d loss %.4f", epoch + 1, epochs, epoch_loss)
    return history


# ---------------------------------------------------------------------------
# Attention export


def export_attention(model: MatchModel, g1: GraphInput, g2: GraphInput) -> dict:
    """All rounds of cross-attention for a pair, JSON-ready."""
    result = score_pair(model, g1, g2, with_trace=True)
    trace: PropagationTrace = result.pop("trace")
    return {
        "distance": result["distance"],
        "cosine": result["cosine"],
        "nodes_a": list(g1.texts),
        "nodes_b": list(g2.texts),
        "rounds": [
            {"a_to_b": a.tolist(), "b_to_a": b.tolist()}
            for a, b in zip(trace.a_1_to_2, trace.a_2_to_1)
        ],
    }


def attention_to_dot(export: dict, round_index: int = -1, threshold: float = 0.05) -> str:
    """Bipartite overlay of one round; edge thickness tracks attention."""
    rounds = export["rounds"]
    chosen = rounds[round_index]
    a_to_b = np.asarray(chosen["a_to_b"])
    lines = ["digraph attention {", "  rankdir=LR;", "  node [shape=box, fontname=monospace];"]
    def _label(text: str) -> str:
        return text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\l") + "\\l"
    for i, text in enumerate(export["nodes_a"]):
        lines.append(f'  a{i} [label="{_label(text)}"];')
    for j, text in enumerate(export["nodes_b"]):
        lines.append(f'  b{j} [label="{_label(text)}"];')
    for i in range(a_to_b.shape[0]):
        for j in range(a_to_b.shape[1]):
            w = float(a_to_b[i, j])
            if w >= threshold:
                lines.append(f"  a{i} -> b{j} [penwidth={1 + 6 * w:.2f}, label=\"{w:.2f}\"];")
    lines.append("}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Persistence


def save_matcher(model: MatchModel, path: str | Path) -> None:
    header = {"kind": "matcher", "config": asdict(model.cfg), "in_dim": model.in_dim}
    save_checkpoint(path, header, model.params())


def load_matcher(path: str | Path) -> MatchModel:
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "matcher":
        raise ValueError("not a matcher checkpoint")
    cfg = MatchConfig(**header["config"])
    model = MatchModel(header["in_dim"], cfg)
    for name, t in model.params():
        t.data = arrays[name].copy()
    return model
