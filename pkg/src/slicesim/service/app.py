"""HTTP service wrapping the pipeline.

Every endpoint is a thin adapter: pydantic models in, core package
calls, pydantic models out.  Artifacts live in the workspace; nothing
is held in process memory between requests beyond the embedding cache
directory on disk.
"""

from __future__ import annotations

import json
import logging

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..corpus import Manifest, gen_corpus
from ..encoder import EncoderConfig, finetune, load_encoder, pretrain, save_encoder
from ..gmn import (
    MatchConfig,
    MatchModel,
    attention_to_dot,
    export_attention,
    load_matcher,
    save_matcher,
    train_matcher,
)
from ..graphbuild import (
    build_block_graph,
    build_graph,
    graph_to_dot,
    graph_to_json,
    merge_duplicates,
)
from ..pipeline import (
    TrainSettings,
    corpus_inputs,
    finetune_pairs,
    matcher_pairs,
    parse_ablation,
    prepare_query,
    rank_pool,
    results_to_csv,
    run_experiment,
)
from ..preprocess import prune
from ..sir import parse_document, parse_sir, print_sir
from ..slicer import render_slice, slice_function
from ..tokens import build_vocab, tokenize_slice
from . import schemas as sc
from .state import Workspace

log = logging.getLogger(__name__)


def _load_corpus(ws: Workspace, name: str):
    root = ws.corpus_dir(name, must_exist=True)
    manifest = Manifest.load(root / "manifest.json")
    manifest.validate(root)
    return root, manifest


def _single_function(text: str):
    fns = parse_sir(text)
    if len(fns) != 1:
        raise ValueError(f"expected exactly one function, found {len(fns)}")
    return fns[0]


def create_app(workspace: Workspace | None = None) -> FastAPI:
    ws = workspace or Workspace.from_env()
    app = FastAPI(title="slicesim", version=__version__)

    @app.exception_handler(ValueError)
    def _bad_request(_req: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(FileNotFoundError)
    def _not_found(_req: Request, exc: FileNotFoundError) -> JSONResponse:
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.get("/health", response_model=sc.HealthResponse)
    def health() -> sc.HealthResponse:
        return sc.HealthResponse(
            status="ok",
            version=__version__,
            workspace=str(ws.root),
            corpora=ws.list_corpora(),
            models=ws.list_models(),
        )

    # -- IR inspection ------------------------------------------------------

    @app.post("/parse", response_model=sc.ParseResponse)
    def parse(req: sc.ParseRequest) -> sc.ParseResponse:
        functions, diagnostics = parse_document(req.text)
        return sc.ParseResponse(
            functions=[
                sc.ParsedFunction(
                    name=fn.name,
                    blocks=len(fn.blocks),
                    instructions=sum(len(b.instructions) for b in fn.blocks.values()),
                    text=print_sir(fn),
                )
                for fn in functions
            ],
            diagnostics=[str(d) for d in diagnostics],
        )

    @app.post("/slice", response_model=sc.SliceResponse)
    def slice_endpoint(req: sc.SliceRequest) -> sc.SliceResponse:
        functions, diagnostics = parse_document(req.text)
        out = []
        for fn in functions:
            body = prune(fn) if req.prune else fn
            infos = []
            for bid, slices in slice_function(body).items():
                block = body.blocks[bid]
                for s in slices:
                    toks = tokenize_slice(s, block)
                    infos.append(
                        sc.SliceInfo(
                            id=s.id,
                            block=bid,
                            instructions=list(s.instr_indices),
                            text=render_slice(s, block),
                            tokens=[t for t, _k in toks.tokens],
                        )
                    )
            out.append(sc.SlicedFunction(name=fn.name, slices=infos))
        return sc.SliceResponse(functions=out, diagnostics=[str(d) for d in diagnostics])

    @app.post("/graph", response_model=sc.GraphResponse)
    def graph_endpoint(req: sc.GraphRequest) -> sc.GraphResponse:
        functions, diagnostics = parse_document(req.text)
        out = []
        for fn in functions:
            if req.slicing:
                body = prune(fn) if req.prune else fn
                g = build_graph(body)
                if req.merge:
                    g = merge_duplicates(g)
            else:
                g = build_block_graph(fn)
            out.append(
                sc.GraphedFunction(
                    name=fn.name,
                    graph=graph_to_json(g),
                    dot=graph_to_dot(g) if req.dot else None,
                )
            )
        return sc.GraphResponse(functions=out, diagnostics=[str(d) for d in diagnostics])

    # -- corpus and training --------------------------------------------------

    @app.post("/gen-corpus", response_model=sc.GenCorpusResponse)
    def gen_corpus_endpoint(req: sc.GenCorpusRequest) -> sc.GenCorpusResponse:
        root = ws.corpus_dir(req.name)
        manifest = gen_corpus(
            root, req.functions, req.variants, seed=req.seed, templates=req.templates
        )
        return sc.GenCorpusResponse(
            corpus=req.name, entries=len(manifest.entries), path=str(root)
        )

    @app.post("/pretrain", response_model=sc.PretrainResponse)
    def pretrain_endpoint(req: sc.PretrainRequest) -> sc.PretrainResponse:
        root, manifest = _load_corpus(ws, req.corpus)
        from ..pipeline import load_units

        units = load_units(root, manifest, slicing=True)
        streams = [n.tokens for u in units for n in u.graph.nodes]
        vocab = build_vocab(streams, min_count=req.min_count)
        cfg = EncoderConfig(
            d_model=req.d_model,
            layers=req.layers,
            heads=req.heads,
            max_len=req.max_len,
            mask_fraction=req.mask_fraction,
        )
        model, history = pretrain(
            streams,
            vocab,
            cfg,
            epochs=req.epochs,
            batch_size=req.batch_size,
            lr=req.lr,
            seed=req.seed,
        )
        path = ws.model_path(req.model)
        save_encoder(model, path)
        return sc.PretrainResponse(
            model=req.model,
            path=str(path),
            vocab_size=vocab.size,
            slices=len(streams),
            history=history,
        )

    @app.post("/finetune", response_model=sc.FinetuneResponse)
    def finetune_endpoint(req: sc.FinetuneRequest) -> sc.FinetuneResponse:
        root, manifest = _load_corpus(ws, req.corpus)
        model = load_encoder(ws.model_path(req.model, must_exist=True))
        pairs = finetune_pairs(root, manifest, seed=req.seed)
        if not pairs:
            raise ValueError("corpus yields no fine-tuning pairs")
        rng = np.random.default_rng(req.seed)
        order = rng.permutation(len(pairs))
        n_held = min(int(round(req.holdout_fraction * len(pairs))), len(pairs) - 1)
        held = [pairs[int(i)] for i in order[:n_held]]
        train = [pairs[int(i)] for i in order[n_held:]]
        report = finetune(
            model,
            train,
            margin=req.margin,
            epochs=req.epochs,
            batch_size=req.batch_size,
            lr=req.lr,
            seed=req.seed,
            heldout=held or None,
        )
        out_name = req.out or req.model
        path = ws.model_path(out_name)
        save_encoder(model, path)
        return sc.FinetuneResponse(
            model=out_name,
            path=str(path),
            pairs=len(train),
            history=report.history,
            heldout_cos_before=report.heldout_cos_before,
            heldout_cos_after=report.heldout_cos_after,
        )

    @app.post("/train-gmn", response_model=sc.TrainMatcherResponse)
    def train_gmn_endpoint(req: sc.TrainMatcherRequest) -> sc.TrainMatcherResponse:
        root, manifest = _load_corpus(ws, req.corpus)
        options = parse_ablation(req.ablation)
        encoder_model = load_encoder(ws.model_path(req.encoder, must_exist=True))
        _units, inputs = corpus_inputs(
            root, manifest, encoder_model, slicing=options.slicing, cache=ws.cache()
        )
        cfg = MatchConfig(
            hidden=req.hidden,
            rounds=req.rounds,
            margin=req.margin,
            lr=req.lr,
            batch=req.batch,
            cross_attention=options.cross_attention,
            drop_flow=options.drop_flow.index if options.drop_flow is not None else None,
        )
        matcher = MatchModel(encoder_model.cfg.d_model, cfg, seed=req.seed)
        pairs = matcher_pairs(manifest, inputs, seed=req.seed)
        history = train_matcher(matcher, pairs, epochs=req.epochs, seed=req.seed)
        path = ws.model_path(req.out)
        save_matcher(matcher, path)
        return sc.TrainMatcherResponse(
            model=req.out, path=str(path), pairs=len(pairs), history=history
        )

    # -- retrieval ------------------------------------------------------------

    def _query_input(req, encoder_model, inputs, slicing, cache):
        if req.query_id is not None:
            if req.query_id not in inputs:
                raise ValueError(f"unknown function_id {req.query_id!r}")
            return req.query_id, inputs[req.query_id]
        if req.query_text:
            fn = _single_function(req.query_text)
            return fn.name, prepare_query(encoder_model, fn, slicing=slicing, cache=cache)
        raise ValueError("provide query_id or query_text")

    @app.post("/search", response_model=sc.SearchResponse)
    def search(req: sc.SearchRequest) -> sc.SearchResponse:
        root, manifest = _load_corpus(ws, req.corpus)
        options = parse_ablation(req.ablation)
        encoder_model = load_encoder(ws.model_path(req.encoder, must_exist=True))
        matcher = load_matcher(ws.model_path(req.matcher, must_exist=True))
        cache = ws.cache()
        _units, inputs = corpus_inputs(
            root, manifest, encoder_model, slicing=options.slicing, cache=cache
        )
        qname, qin = _query_input(req, encoder_model, inputs, options.slicing, cache)
        if req.pool is not None:
            missing = [fid for fid in req.pool if fid not in inputs]
            if missing:
                raise ValueError(f"pool ids not in corpus: {', '.join(missing)}")
            candidates = {fid: inputs[fid] for fid in req.pool if fid != qname}
        else:
            candidates = {fid: g for fid, g in inputs.items() if fid != qname}
        if not candidates:
            raise ValueError("empty candidate pool")
        hits = rank_pool(matcher, qin, candidates, k=req.k)
        return sc.SearchResponse(query=qname, results=[sc.SearchHit(**h) for h in hits])

    @app.post("/eval", response_model=sc.EvalResponse)
    def eval_endpoint(req: sc.EvalRequest) -> sc.EvalResponse:
        root, _manifest = _load_corpus(ws, req.corpus)
        settings = TrainSettings(
            encoder=EncoderConfig(d_model=req.d_model, layers=req.layers, heads=req.heads),
            pretrain_epochs=req.pretrain_epochs,
            finetune_epochs=req.finetune_epochs,
            matcher=MatchConfig(hidden=req.hidden, rounds=req.rounds),
            matcher_epochs=req.matcher_epochs,
            min_count=req.min_count,
            seed=req.seed,
        )
        outcome = run_experiment(
            root,
            task=req.task,
            poolsize=req.poolsize,
            seed=req.seed,
            settings=settings,
            ablation=req.ablation,
            with_baseline=req.with_baseline,
            max_queries=req.max_queries,
            cache=ws.cache(),
        )
        suffix = f"-{req.ablation.replace(':', '_')}" if req.ablation else ""
        run_name = req.run or f"{req.task.lower()}-{req.corpus}-s{req.seed}{suffix}"
        run_path = ws.run_path(f"{run_name}.json")
        run_path.write_text(json.dumps(outcome.to_json(), indent=2) + "\n")
        csv_path = ws.run_path(f"{run_name}.csv")
        results_to_csv([outcome], csv_path)
        return sc.EvalResponse(
            run=run_name,
            task=outcome.task,
            ablation=outcome.ablation,
            n_queries=outcome.n_queries,
            poolsize=outcome.poolsize,
            metrics=outcome.metrics,
            baseline=outcome.baseline,
            run_path=str(run_path),
            csv_path=str(csv_path),
        )

    @app.post("/export-attention", response_model=sc.AttentionResponse)
    def export_attention_endpoint(req: sc.AttentionRequest) -> sc.AttentionResponse:
        root, manifest = _load_corpus(ws, req.corpus)
        options = parse_ablation(req.ablation)
        encoder_model = load_encoder(ws.model_path(req.encoder, must_exist=True))
        matcher = load_matcher(ws.model_path(req.matcher, must_exist=True))
        cache = ws.cache()
        _units, inputs = corpus_inputs(
            root, manifest, encoder_model, slicing=options.slicing, cache=cache
        )

        def side(fid: str | None, text: str | None, label: str):
            if fid is not None:
                if fid not in inputs:
                    raise ValueError(f"unknown function_id {fid!r}")
                return inputs[fid]
            if text:
                fn = _single_function(text)
                return prepare_query(encoder_model, fn, slicing=options.slicing, cache=cache)
            raise ValueError(f"provide {label} or {label}_text")

        ga = side(req.a, req.a_text, "a")
        gb = side(req.b, req.b_text, "b")
        data = export_attention(matcher, ga, gb)
        dot = attention_to_dot(data, round_index=req.round) if req.dot else None
        return sc.AttentionResponse(
            distance=data["distance"],
            cosine=data["cosine"],
            nodes_a=data["nodes_a"],
            nodes_b=data["nodes_b"],
            rounds=data["rounds"],
            dot=dot,
        )

    app.state.workspace = ws
    return app
