"""End-to-end retrieval pipeline.

Ties the stages together: load a corpus manifest, prune and slice every
unit, build flow-typed graphs, pretrain and fine-tune the slice encoder,
train the matcher on graph pairs, then evaluate ranked retrieval tasks
against a bag-of-opcodes baseline and ablated pipeline variants.

Sources are split into a training half and an evaluation half; pair
supervision (fine-tuning and matcher training) only ever sees training
sources, while vocabulary and masked-token pretraining use the whole
corpus since they need no labels.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import BuildConfig, Manifest, ManifestEntry
from .encoder import (
    CorpusUnit,
    EmbeddingCache,
    EncoderConfig,
    FinetuneReport,
    SliceEncoder,
    embed_batch,
    finetune,
    make_pairs,
    pretrain,
)
from .gmn import GraphInput, MatchConfig, MatchModel, graph_input, score_pair, train_matcher
from .graphbuild import FlowType, SliceGraph, build_block_graph, build_graph, merge_duplicates
from .metrics import mrr, rank_of, recall_at_k
from .preprocess import prune
from .sir import FunctionIR, iter_instructions, parse_sir
from .tokens import Vocab, build_vocab

__all__ = [
    "ABLATIONS",
    "PipelineOptions",
    "parse_ablation",
    "TrainSettings",
    "Unit",
    "load_units",
    "Artifacts",
    "build_artifacts",
    "prepare_query",
    "corpus_inputs",
    "finetune_pairs",
    "matcher_pairs",
    "MatcherScorer",
    "OpcodeBaselineScorer",
    "TASK_NAMES",
    "task_queries",
    "TaskResult",
    "run_task",
    "split_sources",
    "ExperimentOutcome",
    "run_experiment",
    "results_to_csv",
    "rank_pool",
]

log = logging.getLogger(__name__)

ABLATIONS: tuple[str, ...] = (
    "no-finetune",
    "no-slicing",
    "no-cross-attention",
) + tuple(f"drop-flow:{ft.value}" for ft in FlowType)

TASK_NAMES = ("XO", "XC", "XA", "XM")


@dataclass(frozen=True)
class PipelineOptions:
    """Which pipeline pieces are active; defaults mean the full system."""

    finetune: bool = True
    slicing: bool = True
    cross_attention: bool = True
    drop_flow: FlowType | None = None


def parse_ablation(switch: str | None) -> PipelineOptions:
    if switch is None or switch == "full":
        return PipelineOptions()
    if switch == "no-finetune":
        return PipelineOptions(finetune=False)
    if switch == "no-slicing":
        return PipelineOptions(slicing=False)
    if switch == "no-cross-attention":
        return PipelineOptions(cross_attention=False)
    if switch.startswith("drop-flow:"):
        value = switch.split(":", 1)[1]
        try:
            return PipelineOptions(drop_flow=FlowType(value))
        except ValueError:
            raise ValueError(
                f"unknown flow type {value!r}; expected one of "
                + ", ".join(ft.value for ft in FlowType)
            ) from None
    raise ValueError(f"unknown ablation {switch!r}; known: full, " + ", ".join(ABLATIONS))


@dataclass
class TrainSettings:
    """Desk-scale training knobs; model shapes stay configurable."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain_epochs: int = 8
    pretrain_batch: int = 64
    pretrain_lr: float = 0.001
    finetune_epochs: int = 8
    finetune_batch: int = 32
    finetune_lr: float = 0.0003
    # Synthetic functions are short, so every shared line is worth pairing;
    # the make_pairs default keeps the sparser protocol for real corpora.
    nonbranch_fraction: float = 1.0
    matcher: MatchConfig = field(default_factory=lambda: MatchConfig(hidden=48, rounds=5))
    matcher_epochs: int = 32
    min_count: int = 0
    seed: int = 0


# ---------------------------------------------------------------------------
# Loading


@dataclass
class Unit:
    """One manifest entry, parsed and turned into its graph."""

    entry: ManifestEntry
    function: FunctionIR
    pruned: FunctionIR
    graph: SliceGraph


def load_function(path: str | Path) -> FunctionIR:
    fns = parse_sir(Path(path).read_text())
    if len(fns) != 1:
        raise ValueError(f"{path}: expected exactly one function, found {len(fns)}")
    return fns[0]


def build_unit(entry: ManifestEntry, fn: FunctionIR, slicing: bool = True) -> Unit:
    if slicing:
        pruned = prune(fn, arch=entry.config.arch)
        graph = merge_duplicates(build_graph(pruned))
    else:
        pruned = fn
        graph = build_block_graph(fn)
    return Unit(entry=entry, function=fn, pruned=pruned, graph=graph)


def load_units(root: str | Path, manifest: Manifest, slicing: bool = True) -> list[Unit]:
    root = Path(root)
    return [
        build_unit(entry, load_function(root / entry.path), slicing=slicing)
        for entry in manifest.entries
    ]


def _corpus_units(units: Sequence[Unit]) -> list[CorpusUnit]:
    return [
        CorpusUnit(
            source_id=u.entry.source_id,
            config=u.entry.config.tag(),
            function=u.pruned,
            slices=tuple(u.graph.nodes),
        )
        for u in units
    ]


# ---------------------------------------------------------------------------
# Artifact building


@dataclass
class Artifacts:
    options: PipelineOptions
    vocab: Vocab
    encoder: SliceEncoder
    matcher: MatchModel
    units: dict[str, Unit]
    inputs: dict[str, GraphInput]
    finetune_report: FinetuneReport | None = None
    history: dict[str, list[float]] = field(default_factory=dict)


def _graph_inputs(
    model: SliceEncoder,
    units: Sequence[Unit],
    cache: EmbeddingCache | None,
) -> dict[str, GraphInput]:
    inputs: dict[str, GraphInput] = {}
    for u in units:
        rows = embed_batch(model, [n.tokens for n in u.graph.nodes], cache)
        vectors = {n.id: rows[i] for i, n in enumerate(u.graph.nodes)}
        inputs[u.entry.function_id] = graph_input(u.graph, vectors)
    return inputs


def matcher_pairs(
    manifest: Manifest,
    inputs: dict[str, GraphInput],
    sources: set[str] | None = None,
    seed: int = 0,
) -> list[tuple[GraphInput, GraphInput, int]]:
    """Positive pairs: configs of one source.  Negatives: 1:1 with the
    positives, half mined as nearest other sources under mean-pooled
    node embeddings (the confusable cases retrieval has to get right),
    half seeded cross-source draws for coverage.  Negatives mix configs
    the same way the retrieval pools do."""
    by_source = manifest.by_source()
    chosen = sorted(by_source) if sources is None else sorted(s for s in by_source if s in sources)
    if len(chosen) < 2:
        raise ValueError("matcher training needs at least two source functions")
    positives: list[tuple[GraphInput, GraphInput, int]] = []
    for sid in chosen:
        ents = by_source[sid]
        for other in ents[1:]:
            positives.append((inputs[ents[0].function_id], inputs[other.function_id], 1))
    if not positives:
        raise ValueError("matcher training needs sources with several configs")
    rng = np.random.default_rng(seed)
    canon = [by_source[sid][0].function_id for sid in chosen]
    variant = [by_source[sid][-1].function_id for sid in chosen]
    reps = np.stack([inputs[fid].feats.mean(axis=0) for fid in canon])
    reps /= np.maximum(np.linalg.norm(reps, axis=1, keepdims=True), 1e-12)
    sim = reps @ reps.T
    np.fill_diagonal(sim, -np.inf)
    hardest = sim.argmax(axis=1)
    negatives: list[tuple[GraphInput, GraphInput, int]] = []
    hard_quota = len(positives) // 2
    for i in rng.permutation(len(canon))[:hard_quota]:
        negatives.append((inputs[canon[int(i)]], inputs[variant[int(hardest[int(i)])]], -1))
    while len(negatives) < len(positives):
        i, j = rng.choice(len(canon), size=2, replace=False)
        negatives.append((inputs[canon[int(i)]], inputs[variant[int(j)]], -1))
    return positives + negatives


def build_artifacts(
    root: str | Path,
    manifest: Manifest,
    options: PipelineOptions = PipelineOptions(),
    settings: TrainSettings = TrainSettings(),
    cache: EmbeddingCache | None = None,
    train_sources: set[str] | None = None,
) -> Artifacts:
    """Run every training stage and embed the whole corpus."""
    sliced = load_units(root, manifest, slicing=True)
    units = sliced if options.slicing else load_units(root, manifest, slicing=False)
    streams = [n.tokens for u in sliced for n in u.graph.nodes]
    vocab = build_vocab(streams, min_count=settings.min_count)
    log.info("vocab: %d entries (min_count=%d)", vocab.size, settings.min_count)
    encoder_model, pre_hist = pretrain(
        streams,
        vocab,
        settings.encoder,
        epochs=settings.pretrain_epochs,
        batch_size=settings.pretrain_batch,
        lr=settings.pretrain_lr,
        seed=settings.seed,
    )
    history = {"pretrain": pre_hist}
    report: FinetuneReport | None = None
    if options.finetune:
        cunits = [
            cu
            for cu in _corpus_units(sliced)
            if train_sources is None or cu.source_id in train_sources
        ]
        pairs = make_pairs(cunits, seed=settings.seed, nonbranch_fraction=settings.nonbranch_fraction)
        if pairs:
            report = finetune(
                encoder_model,
                pairs,
                epochs=settings.finetune_epochs,
                batch_size=settings.finetune_batch,
                lr=settings.finetune_lr,
                seed=settings.seed,
            )
            history["finetune"] = report.history
        else:
            log.warning("no fine-tuning pairs could be formed; skipping the stage")
    inputs = _graph_inputs(encoder_model, units, cache)
    mcfg = replace(
        settings.matcher,
        cross_attention=options.cross_attention,
        drop_flow=options.drop_flow.index if options.drop_flow is not None else None,
    )
    matcher = MatchModel(settings.encoder.d_model, mcfg, seed=settings.seed)
    mpairs = matcher_pairs(manifest, inputs, train_sources, settings.seed)
    history["matcher"] = train_matcher(matcher, mpairs, epochs=settings.matcher_epochs, seed=settings.seed)
    if cache is not None:
        cache.flush()
    return Artifacts(
        options=options,
        vocab=vocab,
        encoder=encoder_model,
        matcher=matcher,
        units={u.entry.function_id: u for u in units},
        inputs=inputs,
        finetune_report=report,
        history=history,
    )


def prepare_query(
    encoder_model: SliceEncoder,
    fn: FunctionIR,
    slicing: bool = True,
    cache: EmbeddingCache | None = None,
) -> GraphInput:
    """Graph input for an ad-hoc function under a trained encoder."""
    entry = ManifestEntry(function_id=fn.name, path="", config=BuildConfig(), source_id=fn.name)
    unit = build_unit(entry, fn, slicing=slicing)
    rows = embed_batch(encoder_model, [n.tokens for n in unit.graph.nodes], cache)
    vectors = {n.id: rows[i] for i, n in enumerate(unit.graph.nodes)}
    return graph_input(unit.graph, vectors)


def corpus_inputs(
    root: str | Path,
    manifest: Manifest,
    encoder_model: SliceEncoder,
    slicing: bool = True,
    cache: EmbeddingCache | None = None,
) -> tuple[dict[str, Unit], dict[str, GraphInput]]:
    """Units and matcher inputs for a whole corpus under one encoder."""
    units = load_units(root, manifest, slicing=slicing)
    inputs = _graph_inputs(encoder_model, units, cache)
    if cache is not None:
        cache.flush()
    return {u.entry.function_id: u for u in units}, inputs


def finetune_pairs(
    root: str | Path, manifest: Manifest, seed: int = 0, sources: set[str] | None = None
):
    """Labelled slice pairs for fine-tuning, straight from a corpus."""
    units = load_units(root, manifest, slicing=True)
    cunits = [
        cu for cu in _corpus_units(units) if sources is None or cu.source_id in sources
    ]
    return make_pairs(cunits, seed=seed)


# ---------------------------------------------------------------------------
# Scoring


class MatcherScorer:
    """Distance through the trained matcher; lower is more similar."""

    def __init__(self, matcher: MatchModel, inputs: dict[str, GraphInput]):
        self.matcher = matcher
        self.inputs = inputs

    def distance(self, query_id: str, candidate_id: str) -> float:
        return score_pair(self.matcher, self.inputs[query_id], self.inputs[candidate_id])[
            "distance"
        ]


class OpcodeBaselineScorer:
    """Cosine distance between opcode histograms of the raw functions.

    Deliberately ignores operands, graph structure and pruning; the
    pipeline has to beat this to justify its machinery.
    """

    def __init__(self, functions: dict[str, FunctionIR]):
        self.bags = {
            fid: Counter(instr.opcode for _b, _i, instr in iter_instructions(fn))
            for fid, fn in functions.items()
        }

    def distance(self, query_id: str, candidate_id: str) -> float:
        a, b = self.bags[query_id], self.bags[candidate_id]
        keys = set(a) | set(b)
        va = np.array([a.get(k, 0) for k in sorted(keys)], dtype=np.float64)
        vb = np.array([b.get(k, 0) for k in sorted(keys)], dtype=np.float64)
        denom = np.linalg.norm(va) * np.linalg.norm(vb)
        if denom == 0:
            return 1.0
        return float(1.0 - va @ vb / denom)


# ---------------------------------------------------------------------------
# Tasks


def _axes_differing(a: BuildConfig, b: BuildConfig) -> int:
    return sum(getattr(a, f) != getattr(b, f) for f in ("arch", "compiler", "optimization"))


_TASK_PREDICATES: dict[str, Callable[[BuildConfig, BuildConfig], bool]] = {
    # Exactly one axis varies in XO/XC/XA; XM varies at least two.
    "XO": lambda q, c: q.arch == c.arch and q.compiler == c.compiler and q.optimization != c.optimization,
    "XC": lambda q, c: q.arch == c.arch and q.compiler != c.compiler and q.optimization == c.optimization,
    "XA": lambda q, c: q.arch != c.arch and q.compiler == c.compiler and q.optimization == c.optimization,
    "XM": lambda q, c: _axes_differing(q, c) >= 2,
}


def task_queries(manifest: Manifest, task: str) -> list[tuple[ManifestEntry, ManifestEntry]]:
    """(query, ground truth) per source: the first entry pair, in manifest
    order, whose configs differ the way the task demands."""
    if task not in _TASK_PREDICATES:
        raise ValueError(f"unknown task {task!r}; known: {', '.join(TASK_NAMES)}")
    pred = _TASK_PREDICATES[task]
    by_source = manifest.by_source()
    out: list[tuple[ManifestEntry, ManifestEntry]] = []
    for sid in sorted(by_source):
        ents = by_source[sid]
        found = next(
            ((a, b) for a in ents for b in ents if a is not b and pred(a.config, b.config)),
            None,
        )
        if found is not None:
            out.append(found)
    return out


@dataclass
class TaskResult:
    task: str
    poolsize: int
    ranks: list[int]

    def metrics(self) -> dict[str, float]:
        return {
            "recall@1": recall_at_k(self.ranks, 1),
            "recall@5": recall_at_k(self.ranks, 5),
            "recall@10": recall_at_k(self.ranks, 10),
            "mrr@10": mrr(self.ranks, cutoff=10),
        }


def run_task(
    distance: Callable[[str, str], float],
    manifest: Manifest,
    task: str,
    poolsize: int = 50,
    seed: int = 0,
    max_queries: int | None = None,
    eval_sources: set[str] | None = None,
) -> TaskResult:
    """Rank the ground truth inside seeded candidate pools.

    Each pool holds the ground truth first and poolsize-1 seeded
    distractors from other sources, preferring the ground truth's own
    config; ranking is by ascending distance with ties resolved by pool
    order (so an exact tie favours the earlier pool slot).
    """
    queries = task_queries(manifest, task)
    if eval_sources is not None:
        queries = [(q, gt) for q, gt in queries if q.source_id in eval_sources]
    if not queries:
        raise ValueError(f"task {task}: no query pairs available in this corpus")
    rng = np.random.default_rng(seed)
    if max_queries is not None and max_queries < len(queries):
        idx = sorted(rng.choice(len(queries), size=max_queries, replace=False))
        queries = [queries[int(i)] for i in idx]
    ranks: list[int] = []
    for q, gt in queries:
        preferred = [
            e for e in manifest.entries if e.source_id != q.source_id and e.config == gt.config
        ]
        backup = [
            e for e in manifest.entries if e.source_id != q.source_id and e.config != gt.config
        ]
        need = poolsize - 1
        pool: list[ManifestEntry] = [gt]
        take = min(need, len(preferred))
        if take:
            pool.extend(preferred[int(i)] for i in rng.choice(len(preferred), size=take, replace=False))
        short = need - take
        if short > 0:
            if short > len(backup):
                raise ValueError(
                    f"task {task}: cannot fill a pool of {poolsize} for {q.function_id}"
                )
            pool.extend(backup[int(i)] for i in rng.choice(len(backup), size=short, replace=False))
        dists = [distance(q.function_id, e.function_id) for e in pool]
        ranks.append(rank_of(dists, 0))
    return TaskResult(task=task, poolsize=poolsize, ranks=ranks)


# ---------------------------------------------------------------------------
# Experiments


def split_sources(manifest: Manifest, seed: int = 0) -> tuple[set[str], set[str]]:
    """Seeded half/half split of source ids into (train, eval)."""
    sources = sorted(manifest.by_source())
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sources))
    half = len(sources) // 2
    train = {sources[int(i)] for i in order[:half]}
    return train, set(sources) - train


@dataclass
class ExperimentOutcome:
    task: str
    ablation: str | None
    poolsize: int
    n_queries: int
    metrics: dict[str, float]
    ranks: list[int]
    baseline: dict[str, float] | None = None
    baseline_ranks: list[int] | None = None

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "ablation": self.ablation,
            "poolsize": self.poolsize,
            "n_queries": self.n_queries,
            "metrics": self.metrics,
            "ranks": self.ranks,
            "baseline": self.baseline,
            "baseline_ranks": self.baseline_ranks,
        }


def run_experiment(
    root: str | Path,
    task: str = "XO",
    poolsize: int = 50,
    seed: int = 0,
    settings: TrainSettings | None = None,
    ablation: str | None = None,
    with_baseline: bool = True,
    max_queries: int | None = None,
    cache: EmbeddingCache | None = None,
) -> ExperimentOutcome:
    """Train on half the sources, evaluate retrieval on the other half."""
    root = Path(root)
    manifest = Manifest.load(root / "manifest.json")
    manifest.validate(root)
    settings = settings or TrainSettings()
    options = parse_ablation(ablation)
    train_sources, eval_sources = split_sources(manifest, seed=seed)
    artifacts = build_artifacts(
        root, manifest, options, settings, cache=cache, train_sources=train_sources
    )
    scorer = MatcherScorer(artifacts.matcher, artifacts.inputs)
    result = run_task(
        scorer.distance,
        manifest,
        task,
        poolsize=poolsize,
        seed=seed,
        max_queries=max_queries,
        eval_sources=eval_sources,
    )
    outcome = ExperimentOutcome(
        task=task,
        ablation=ablation,
        poolsize=poolsize,
        n_queries=len(result.ranks),
        metrics=result.metrics(),
        ranks=result.ranks,
    )
    if with_baseline:
        raw = {fid: u.function for fid, u in artifacts.units.items()}
        base = OpcodeBaselineScorer(raw)
        base_result = run_task(
            base.distance,
            manifest,
            task,
            poolsize=poolsize,
            seed=seed,
            max_queries=max_queries,
            eval_sources=eval_sources,
        )
        outcome.baseline = base_result.metrics()
        outcome.baseline_ranks = base_result.ranks
    return outcome


def rank_pool(
    matcher: MatchModel,
    query: GraphInput,
    candidates: dict[str, GraphInput],
    k: int | None = None,
) -> list[dict]:
    """Score one query against named candidates; ascending distance."""
    scored = []
    for order, (cid, g) in enumerate(candidates.items()):
        s = score_pair(matcher, query, g)
        scored.append({"function_id": cid, "distance": s["distance"], "cosine": s["cosine"], "_order": order})
    scored.sort(key=lambda r: (r["distance"], r["_order"]))
    for r in scored:
        del r["_order"]
    return scored[:k] if k is not None else scored


def results_to_csv(outcomes: Sequence[ExperimentOutcome], path: str | Path) -> None:
    fields = [
        "task", "ablation", "scorer", "poolsize", "n_queries",
        "recall@1", "recall@5", "recall@10", "mrr@10",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for o in outcomes:
            writer.writerow(
                {
                    "task": o.task,
                    "ablation": o.ablation or "full",
                    "scorer": "pipeline",
                    "poolsize": o.poolsize,
                    "n_queries": o.n_queries,
                    **{k: f"{v:.4f}" for k, v in o.metrics.items()},
                }
            )
            if o.baseline is not None:
                writer.writerow(
                    {
                        "task": o.task,
                        "ablation": o.ablation or "full",
                        "scorer": "opcode-baseline",
                        "poolsize": o.poolsize,
                        "n_queries": o.n_queries,
                        **{k: f"{v:.4f}" for k, v in o.baseline.items()},
                    }
                )
