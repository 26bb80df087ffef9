"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

__all__ = [
    "HealthResponse",
    "ParseRequest", "ParsedFunction", "ParseResponse",
    "SliceRequest", "SliceInfo", "SlicedFunction", "SliceResponse",
    "GraphRequest", "GraphedFunction", "GraphResponse",
    "GenCorpusRequest", "GenCorpusResponse",
    "PretrainRequest", "PretrainResponse",
    "FinetuneRequest", "FinetuneResponse",
    "TrainMatcherRequest", "TrainMatcherResponse",
    "SearchRequest", "SearchHit", "SearchResponse",
    "EvalRequest", "EvalResponse",
    "AttentionRequest", "AttentionResponse",
]


class HealthResponse(BaseModel):
    status: str
    version: str
    workspace: str
    corpora: list[str]
    models: list[str]


# -- IR inspection ----------------------------------------------------------


class ParseRequest(BaseModel):
    text: str


class ParsedFunction(BaseModel):
    name: str
    blocks: int
    instructions: int
    text: str


class ParseResponse(BaseModel):
    functions: list[ParsedFunction]
    diagnostics: list[str]


class SliceRequest(BaseModel):
    text: str
    prune: bool = True


class SliceInfo(BaseModel):
    id: int
    block: int
    instructions: list[int]
    text: str
    tokens: list[str]


class SlicedFunction(BaseModel):
    name: str
    slices: list[SliceInfo]


class SliceResponse(BaseModel):
    functions: list[SlicedFunction]
    diagnostics: list[str]


class GraphRequest(BaseModel):
    text: str
    prune: bool = True
    merge: bool = True
    slicing: bool = True
    dot: bool = False


class GraphedFunction(BaseModel):
    name: str
    graph: dict
    dot: str | None = None


class GraphResponse(BaseModel):
    functions: list[GraphedFunction]
    diagnostics: list[str]


# -- corpus and training ----------------------------------------------------


class GenCorpusRequest(BaseModel):
    name: str
    functions: int = Field(default=100, ge=1)
    variants: int = Field(default=2, ge=1, le=10)
    seed: int = 0
    templates: int = Field(default=10, ge=1)


class GenCorpusResponse(BaseModel):
    corpus: str
    entries: int
    path: str


class PretrainRequest(BaseModel):
    corpus: str
    model: str = "encoder"
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 64
    mask_fraction: float = 0.15
    epochs: int = 8
    batch_size: int = 64
    lr: float = 0.001
    min_count: int = 0
    seed: int = 0


class PretrainResponse(BaseModel):
    model: str
    path: str
    vocab_size: int
    slices: int
    history: list[float]


class FinetuneRequest(BaseModel):
    corpus: str
    model: str
    out: str | None = None
    epochs: int = 8
    batch_size: int = 32
    lr: float = 0.0003
    margin: float = 1.0
    holdout_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    seed: int = 0


class FinetuneResponse(BaseModel):
    model: str
    path: str
    pairs: int
    history: list[float]
    heldout_cos_before: float | None = None
    heldout_cos_after: float | None = None


class TrainMatcherRequest(BaseModel):
    corpus: str
    encoder: str
    out: str = "matcher"
    hidden: int = 48
    rounds: int = 5
    margin: float = 0.5
    lr: float = 0.001
    batch: int = 20
    epochs: int = 32
    seed: int = 0
    ablation: str | None = None


class TrainMatcherResponse(BaseModel):
    model: str
    path: str
    pairs: int
    history: list[float]


# -- retrieval --------------------------------------------------------------


class SearchRequest(BaseModel):
    corpus: str
    encoder: str
    matcher: str
    query_id: str | None = None
    query_text: str | None = None
    pool: list[str] | None = None
    k: int = Field(default=10, ge=1)
    ablation: str | None = None


class SearchHit(BaseModel):
    function_id: str
    distance: float
    cosine: float


class SearchResponse(BaseModel):
    query: str
    results: list[SearchHit]


class EvalRequest(BaseModel):
    corpus: str
    task: Literal["XO", "XC", "XA", "XM"] = "XO"
    poolsize: int = Field(default=50, ge=2)
    seed: int = 0
    ablation: str | None = None
    max_queries: int | None = None
    run: str | None = None
    with_baseline: bool = True
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    pretrain_epochs: int = 8
    finetune_epochs: int = 8
    matcher_epochs: int = 32
    hidden: int = 48
    rounds: int = 5
    min_count: int = 0


class EvalResponse(BaseModel):
    run: str
    task: str
    ablation: str | None
    n_queries: int
    poolsize: int
    metrics: dict[str, float]
    baseline: dict[str, float] | None = None
    run_path: str
    csv_path: str


class AttentionRequest(BaseModel):
    corpus: str
    encoder: str
    matcher: str
    a: str | None = None
    b: str | None = None
    a_text: str | None = None
    b_text: str | None = None
    round: int = -1
    dot: bool = False
    ablation: str | None = None


class AttentionResponse(BaseModel):
    distance: float
    cosine: float
    nodes_a: list[str]
    nodes_b: list[str]
    rounds: list[dict]
    dot: str | None = None
