"""Slice embeddings: masked-token pretraining plus Siamese fine-tuning.

A small bidirectional transformer reads a slice's token ids (CLS first)
and the CLS output is the slice embedding.  Pretraining masks a fixed
fraction of the non-special positions per batch and minimises the
negative log-likelihood of the originals.  Fine-tuning pulls slice pairs
that compile from the same source line together with a contrastive
margin loss over d = 1 - cosine(v1, v2).  (The loss is written against a
*distance*; see the README for the similarity-vs-distance reading of the
underlying formulation.)
"""

from __future__ import annotations

import hashlib
import logging
import threading
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .nn import (
    Adam,
    Embedding,
    Linear,
    LayerNorm,
    Tensor,
    TransformerBlock,
    cosine_similarity,
    cross_entropy_logits,
    no_grad,
    relu,
    save_checkpoint,
    load_checkpoint,
    zero_grads,
)
from .sir import FunctionIR, JumpKind, SourceLine
from .slicer import Slice
from .tokens import Tok, Vocab

__all__ = [
    "EncoderConfig",
    "SliceEncoder",
    "pretrain",
    "finetune",
    "make_pairs",
    "FineTunePair",
    "CorpusUnit",
    "EmbeddingCache",
    "embed_slice",
    "contrastive_loss_value",
    "dominant_line",
    "save_encoder",
    "load_encoder",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncoderConfig:
    """Desk-scale defaults; the reference setting uses d_model=768 and
    12 layers, which this implementation accepts but does not default to."""

    d_model: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 64
    mask_fraction: float = 0.15

    def __post_init__(self):
        if not 0.0 < self.mask_fraction < 1.0:
            raise ValueError("mask_fraction must be in (0, 1)")
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must divide evenly into heads")
        if self.layers < 1 or self.max_len < 2:
            raise ValueError("need at least one layer and room for CLS plus a token")


class SliceEncoder:
    def __init__(self, vocab: Vocab, cfg: EncoderConfig, seed: int = 0):
        self.vocab = vocab
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.d_model
        self.tok_emb = Embedding(vocab.size, d, rng)
        self.pos_emb = Embedding(cfg.max_len, d, rng)
        self.blocks = [TransformerBlock(d, cfg.heads, 4 * d, rng) for _ in range(cfg.layers)]
        self.final_ln = LayerNorm(d)
        # Near-zero head keeps the initial masked-token loss at ln(vocab).
        self.head = Linear(d, vocab.size, rng, init_std=0.02)
        self._version = 0
        self._fp_version = -1
        self._fp = ""

    def params(self):
        out = [("tok_emb.w", self.tok_emb.w), ("pos_emb.w", self.pos_emb.w)]
        for i, block in enumerate(self.blocks):
            out.extend((f"blocks.{i}.{n}", t) for n, t in block.params())
        out.extend((f"final_ln.{n}", t) for n, t in self.final_ln.params())
        out.extend((f"head.{n}", t) for n, t in self.head.params())
        return out

    def mark_updated(self) -> None:
        self._version += 1

    def fingerprint(self) -> str:
        if self._fp_version != self._version:
            h = hashlib.sha256()
            for name, t in self.params():
                h.update(name.encode())
                h.update(np.ascontiguousarray(t.data).tobytes())
            self._fp = h.hexdigest()[:16]
            self._fp_version = self._version
        return self._fp

    def forward(self, ids: np.ndarray, pad_mask: np.ndarray | None = None) -> Tensor:
        b, s = ids.shape
        x = self.tok_emb(ids) + self.pos_emb(np.arange(s))
        for block in self.blocks:
            x = block(x, pad_mask)
        return self.final_ln(x)

    def logits(self, hidden: Tensor) -> Tensor:
        return self.head(hidden)

    def encode_ids(self, toks: Sequence[Tok]) -> list[int]:
        ids = self.vocab.encode(toks)
        if len(ids) > self.cfg.max_len:
            warnings.warn(
                f"token sequence of length {len(ids)} truncated to {self.cfg.max_len}",
                RuntimeWarning,
            )
            ids = ids[: self.cfg.max_len]
        return ids


def _pad_batch(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Pad with PAD ids; returns (ids (B,S), additive mask (B,1,1,S))."""
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), Vocab.PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    mask = np.where(ids == Vocab.PAD_ID, -1e9, 0.0)[:, None, None, :]
    return ids, mask


def _mask_batch(
    ids: np.ndarray, fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pick floor(fraction * maskable) positions across the whole batch,
    with a floor of one when anything is maskable at all.

    CLS and PAD are never maskable.  Returns (masked ids, row idx, col
    idx) of the chosen positions.
    """
    maskable = (ids != Vocab.PAD_ID) & (ids != Vocab.CLS_ID)
    rows, cols = np.nonzero(maskable)
    count = int(np.floor(fraction * rows.size))
    if count == 0 and rows.size:
        count = 1
    pick = rng.choice(rows.size, size=count, replace=False) if rows.size else np.array([], int)
    pick.sort()
    mrows, mcols = rows[pick], cols[pick]
    masked = ids.copy()
    masked[mrows, mcols] = Vocab.MASK_ID
    return masked, mrows, mcols


def pretrain(
    streams: Sequence[Sequence[Tok]],
    vocab: Vocab,
    cfg: EncoderConfig = EncoderConfig(),
    *,
    epochs: int = 10,
    batch_size: int = 32,
    lr: float = 0.001,
    seed: int = 0,
) -> tuple[SliceEncoder, list[float]]:
    """Masked-token pretraining over slice token streams."""
    if not streams:
        raise ValueError("cannot pretrain on an empty corpus")
    model = SliceEncoder(vocab, cfg, seed=seed)
    sequences = [model.encode_ids(s) for s in streams]
    rng = np.random.default_rng(seed)
    opt = Adam(lr=lr)
    params = model.params()
    history: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(len(sequences))
        losses: list[float] = []
        for start in range(0, len(order), batch_size):
            chunk = [sequences[i] for i in order[start : start + batch_size]]
            ids, pad_mask = _pad_batch(chunk)
            masked, mrows, mcols = _mask_batch(ids, cfg.mask_fraction, rng)
            if mrows.size == 0:
                continue
            zero_grads(params)
            hidden = model.forward(masked, pad_mask)
            picked = hidden[mrows, mcols]
            loss = cross_entropy_logits(model.logits(picked), ids[mrows, mcols])
            loss.backward()
            opt.step(params)
            model.mark_updated()
            losses.append(loss.item())
        epoch_loss = float(np.mean(losses)) if losses else float("nan")
        history.append(epoch_loss)
        log.info("pretrain epoch %d/%d loss %.4f", epoch + 1, epochs, epoch_loss)
    return model, history


def masked_accuracy(
    model: SliceEncoder, streams: Sequence[Sequence[Tok]], seed: int = 0
) -> float:
    """Fraction of masked positions recovered exactly (evaluation aid)."""
    sequences = [model.encode_ids(s) for s in streams]
    rng = np.random.default_rng(seed)
    ids, pad_mask = _pad_batch(sequences)
    masked, mrows, mcols = _mask_batch(ids, model.cfg.mask_fraction, rng)
    if mrows.size == 0:
        return 1.0
    with no_grad():
        hidden = model.forward(masked, pad_mask)
        logits = model.logits(hidden[mrows, mcols])
    pred = logits.data.argmax(axis=-1)
    return float((pred == ids[mrows, mcols]).mean())


# ---------------------------------------------------------------------------
# Embedding with cache


class EmbeddingCache:
    """Content-addressed slice-embedding cache.

    Keys combine the model fingerprint with a hash of the token sequence,
    so retraining invalidates naturally.  Reads are lock-free; writes
    take a lock.  With a directory the cache persists as one ``.npz``
    per model fingerprint.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        self._mem: dict[tuple[str, str], np.ndarray] = {}
        self._loaded: set[str] = set()
        self._lock = threading.Lock()

    @staticmethod
    def content_key(toks: Sequence[Tok]) -> str:
        h = hashlib.sha256()
        for text, kind in toks:
            h.update(text.encode())
            h.update(b"\x00")
            h.update(kind.encode())
            h.update(b"\x01")
        return h.hexdigest()[:24]

    def _load_disk(self, fp: str) -> None:
        if self.directory is None or fp in self._loaded:
            return
        with self._lock:
            if fp in self._loaded:
                return
            path = self.directory / f"{fp}.npz"
            if path.exists():
                with np.load(path) as data:
                    for key in data.files:
                        self._mem[(fp, key)] = data[key]
            self._loaded.add(fp)

    def get(self, fp: str, key: str) -> np.ndarray | None:
        self._load_disk(fp)
        return self._mem.get((fp, key))

    def put(self, fp: str, key: str, vec: np.ndarray) -> None:
        with self._lock:
            self._mem[(fp, key)] = vec

    def flush(self) -> None:
        if self.directory is None:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        with self._lock:
            by_fp: dict[str, dict[str, np.ndarray]] = {}
            for (fp, key), vec in self._mem.items():
                by_fp.setdefault(fp, {})[key] = vec
            for fp, entries in by_fp.items():
                np.savez(self.directory / f"{fp}.npz", **entries)


def embed_slice(
    model: SliceEncoder, toks: Sequence[Tok], cache: EmbeddingCache | None = None
) -> np.ndarray:
    """CLS embedding of one token sequence (d_model floats)."""
    if len(toks) == 0:
        raise ValueError("cannot embed an empty token sequence")
    if cache is not None:
        fp = model.fingerprint()
        key = EmbeddingCache.content_key(toks)
        hit = cache.get(fp, key)
        if hit is not None:
            return hit
    ids = model.encode_ids(list(toks))
    batch, pad_mask = _pad_batch([ids])
    with no_grad():
        hidden = model.forward(batch, pad_mask)
    vec = hidden.data[0, 0].copy()
    if cache is not None:
        cache.put(fp, key, vec)
    return vec


def embed_batch(
    model: SliceEncoder, streams: Sequence[Sequence[Tok]], cache: EmbeddingCache | None = None
) -> np.ndarray:
    """Embed many token sequences, reusing the cache where possible."""
    out = np.zeros((len(streams), model.cfg.d_model))
    missing: list[int] = []
    fp = model.fingerprint() if cache is not None else ""
    keys: list[str] = []
    for i, toks in enumerate(streams):
        if cache is not None:
            key = EmbeddingCache.content_key(toks)
            keys.append(key)
            hit = cache.get(fp, key)
            if hit is not None:
                out[i] = hit
                continue
        missing.append(i)
    for start in range(0, len(missing), 256):
        chunk = missing[start : start + 256]
        seqs = [model.encode_ids(list(streams[i])) for i in chunk]
        ids, pad_mask = _pad_batch(seqs)
        with no_grad():
            hidden = model.forward(ids, pad_mask)
        for row, i in enumerate(chunk):
            vec = hidden.data[row, 0].copy()
            out[i] = vec
            if cache is not None:
                cache.put(fp, keys[i], vec)
    return out


# ---------------------------------------------------------------------------
# Fine-tuning pairs


@dataclass(frozen=True)
class CorpusUnit:
    """One compiled configuration of one source function, post-prune,
    with its tokenised slices."""

    source_id: str
    config: str
    function: FunctionIR
    slices: tuple[Slice, ...]


@dataclass(frozen=True)
class FineTunePair:
    a: tuple[Tok, ...]
    b: tuple[Tok, ...]
    label: int
    line: SourceLine | None = None
    source_id: str = ""
    config_a: str = ""
    config_b: str = ""


def dominant_line(slc: Slice, fn: FunctionIR) -> SourceLine | None:
    """Source line shared by the most instructions in the slice; ties go
    to the smallest line."""
    block = fn.blocks[slc.block]
    counts: dict[SourceLine, int] = {}
    for idx in slc.instr_indices:
        line = block.instructions[idx].source_line
        if line is not None:
            counts[line] = counts.get(line, 0) + 1
    if not counts:
        return None
    return min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def _branch_lines(units: Iterable[CorpusUnit]) -> frozenset[SourceLine]:
    lines: set[SourceLine] = set()
    for unit in units:
        for block in unit.function.blocks.values():
            for instr in block.instructions:
                if instr.jump is JumpKind.CONDITIONAL and instr.source_line is not None:
                    lines.add(instr.source_line)
    return frozenset(lines)


def make_pairs(
    units: Sequence[CorpusUnit],
    seed: int = 0,
    nonbranch_fraction: float = 0.10,
) -> list[FineTunePair]:
    """Label slice pairs for fine-tuning.

    Positives: slices from two configurations of the same source function
    whose dominant source lines match, restricted to branch lines plus a
    seeded sample of the remaining lines.  Negatives: an equal count of
    seeded random pairs with differing dominant lines.
    """
    rng = np.random.default_rng(seed)
    branch = _branch_lines(units)
    by_source: dict[str, list[CorpusUnit]] = {}
    for unit in units:
        by_source.setdefault(unit.source_id, []).append(unit)

    positives: list[FineTunePair] = []
    for source_id in sorted(by_source):
        group = by_source[source_id]
        line_maps: list[dict[SourceLine, list[Slice]]] = []
        for unit in group:
            lm: dict[SourceLine, list[Slice]] = {}
            for slc in unit.slices:
                line = dominant_line(slc, unit.function)
                if line is not None:
                    lm.setdefault(line, []).append(slc)
            line_maps.append(lm)
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                if group[i].config == group[j].config:
                    continue
                common = sorted(set(line_maps[i]) & set(line_maps[j]))
                branch_common = [ln for ln in common if ln in branch]
                other = [ln for ln in common if ln not in branch]
                take = int(len(other) * nonbranch_fraction + 0.5)
                chosen = list(branch_common)
                if take and other:
                    picks = rng.choice(len(other), size=min(take, len(other)), replace=False)
                    chosen.extend(other[p] for p in sorted(picks))
                for line in chosen:
                    for sa in line_maps[i][line]:
                        for sb in line_maps[j][line]:
                            positives.append(
                                FineTunePair(
                                    a=sa.tokens, b=sb.tokens, label=1, line=line,
                                    source_id=source_id,
                                    config_a=group[i].config, config_b=group[j].config,
                                )
                            )

    if not positives:
        warnings.warn("no positive pairs: need annotated overlap across configs",
                      RuntimeWarning)
        return []

    # Pool every annotated slice for negative sampling.
    annotated: list[tuple[CorpusUnit, Slice, SourceLine]] = []
    for unit in units:
        for slc in unit.slices:
            line = dominant_line(slc, unit.function)
            if line is not None and slc.tokens:
                annotated.append((unit, slc, line))
    negatives: list[FineTunePair] = []
    attempts = 0
    while len(negatives) < len(positives) and attempts < 200 * len(positives):
        attempts += 1
        ia, ib = rng.integers(0, len(annotated), size=2)
        unit_a, slc_a, line_a = annotated[ia]
        unit_b, slc_b, line_b = annotated[ib]
        if line_a == line_b:
            continue
        negatives.append(
            FineTunePair(
                a=slc_a.tokens, b=slc_b.tokens, label=0,
                source_id=f"{unit_a.source_id}|{unit_b.source_id}",
                config_a=unit_a.config, config_b=unit_b.config,
            )
        )
    if len(negatives) < len(positives):
        warnings.warn("negative sampling underfilled; corpus has too few distinct lines",
                      RuntimeWarning)
    return positives + negatives


# ---------------------------------------------------------------------------
# Contrastive fine-tuning


def contrastive_loss_value(d: float, label: int, margin: float = 1.0) -> float:
    """Reference scalar form of the pair loss (tests pin its values)."""
    if label == 1:
        return d * d
    return max(margin - d, 0.0) ** 2


@dataclass
class FinetuneReport:
    history: list[float] = field(default_factory=list)
    heldout_cos_before: float | None = None
    heldout_cos_after: float | None = None


def _pair_cosines(model: SliceEncoder, pairs: Sequence[FineTunePair]) -> np.ndarray:
    va = embed_batch(model, [p.a for p in pairs])
    vb = embed_batch(model, [p.b for p in pairs])
    num = (va * vb).sum(axis=1)
    den = np.linalg.norm(va, axis=1) * np.linalg.norm(vb, axis=1) + 1e-12
    return num / den


def finetune(
    model: SliceEncoder,
    pairs: Sequence[FineTunePair],
    *,
    margin: float = 1.0,
    epochs: int = 5,
    batch_size: int = 32,
    lr: float = 0.001,
    seed: int = 0,
    heldout: Sequence[FineTunePair] | None = None,
) -> FinetuneReport:
    """Siamese contrastive fine-tuning in place; both sides share weights."""
    if not pairs:
        raise ValueError("no pairs to fine-tune on")
    labels = {p.label for p in pairs}
    if labels in ({0}, {1}):
        warnings.warn("degenerate pair set (all one label); training anyway", RuntimeWarning)
    report = FinetuneReport()
    if heldout:
        pos = [p for p in heldout if p.label == 1]
        if pos:
            report.heldout_cos_before = float(_pair_cosines(model, pos).mean())
    rng = np.random.default_rng(seed)
    opt = Adam(lr=lr)
    params = model.params()
    pair_list = list(pairs)
    for epoch in range(epochs):
        order = rng.permutation(len(pair_list))
        losses: list[float] = []
        for start in range(0, len(order), batch_size):
            chunk = [pair_list[i] for i in order[start : start + batch_size]]
            ids_a, mask_a = _pad_batch([model.encode_ids(list(p.a)) for p in chunk])
            ids_b, mask_b = _pad_batch([model.encode_ids(list(p.b)) for p in chunk])
            y = np.array([p.label for p in chunk], dtype=np.float64)
            zero_grads(params)
            va = model.forward(ids_a, mask_a)[:, 0]
            vb = model.forward(ids_b, mask_b)[:, 0]
            d = 1.0 - cosine_similarity(va, vb)
            pos_term = d * d
            neg_term = relu(margin - d) ** 2.0
            loss = (Tensor(y) * pos_term + Tensor(1.0 - y) * neg_term).mean()
            loss.backward()
            opt.step(params)
            model.mark_updated()
            losses.append(loss.item())
        epoch_loss = float(np.mean(losses)) if losses else float("nan")
        report.history.append(epoch_loss)
        log.info("finetune epoch %d/%d loss %.4f", epoch + 1, epochs, epoch_loss)
    if heldout:
        pos = [p for p in heldout if p.label == 1]
        if pos:
            report.heldout_cos_after = float(_pair_cosines(model, pos).mean())
    return report


# ---------------------------------------------------------------------------
# Persistence


def save_encoder(model: SliceEncoder, path: str | Path) -> None:
    header = {
        "kind": "encoder",
        "config": asdict(model.cfg),
        "vocab": model.vocab.dumps(),
    }
    save_checkpoint(path, header, model.params())


def load_encoder(path: str | Path) -> SliceEncoder:
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "encoder":
        raise ValueError("not an encoder checkpoint")
    vocab = Vocab.loads(header["vocab"])
    model = SliceEncoder(vocab, EncoderConfig(**header["config"]))
    for name, t in model.params():
        t.data = arrays[name].copy()
    model.mark_updated()
    return model
