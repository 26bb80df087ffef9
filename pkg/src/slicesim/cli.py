"""Command-line client for the similarity service.

Every data-plane subcommand talks to a running service over HTTP; start
one with ``slicesim serve``.  The client holds no model state, it only
shapes requests and prints JSON responses (or raw DOT when asked).
SLICESIM_URL overrides the server address.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import httpx

from .service.state import DEFAULT_URL, URL_ENV, WORKSPACE_ENV


def _post(args: argparse.Namespace, path: str, payload: dict) -> dict:
    with httpx.Client(base_url=args.url, timeout=None) as client:
        resp = client.post(path, json=payload)
        return _unwrap(resp)


def _get(args: argparse.Namespace, path: str) -> dict:
    with httpx.Client(base_url=args.url, timeout=None) as client:
        return _unwrap(client.get(path))


def _unwrap(resp: httpx.Response) -> dict:
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        print(f"error {resp.status_code}: {detail}", file=sys.stderr)
        raise SystemExit(1)
    return resp.json()


def _emit(data: dict) -> None:
    print(json.dumps(data, indent=2))


def _read(path: str) -> str:
    return Path(path).read_text()


# ---------------------------------------------------------------------------
# Command handlers


def cmd_serve(args: argparse.Namespace) -> None:
    import uvicorn

    from .service import Workspace, create_app

    workspace = args.workspace or os.environ.get(WORKSPACE_ENV, "slicesim-workspace")
    uvicorn.run(create_app(Workspace(workspace)), host=args.host, port=args.port)


def cmd_health(args: argparse.Namespace) -> None:
    _emit(_get(args, "/health"))


def cmd_parse(args: argparse.Namespace) -> None:
    _emit(_post(args, "/parse", {"text": _read(args.file)}))


def cmd_slice(args: argparse.Namespace) -> None:
    _emit(_post(args, "/slice", {"text": _read(args.file), "prune": not args.no_prune}))


def cmd_graph(args: argparse.Namespace) -> None:
    data = _post(
        args,
        "/graph",
        {
            "text": _read(args.file),
            "prune": not args.no_prune,
            "merge": not args.no_merge,
            "slicing": not args.no_slicing,
            "dot": args.dot,
        },
    )
    if args.dot:
        for fn in data["functions"]:
            print(fn["dot"])
    else:
        _emit(data)


def cmd_gen_corpus(args: argparse.Namespace) -> None:
    _emit(
        _post(
            args,
            "/gen-corpus",
            {
                "name": args.name,
                "functions": args.functions,
                "variants": args.variants,
                "seed": args.seed,
                "templates": args.templates,
            },
        )
    )


def cmd_pretrain(args: argparse.Namespace) -> None:
    _emit(
        _post(
            args,
            "/pretrain",
            {
                "corpus": args.corpus,
                "model": args.model,
                "d_model": args.d_model,
                "layers": args.layers,
                "heads": args.heads,
                "max_len": args.max_len,
                "mask_fraction": args.mask_fraction,
                "epochs": args.epochs,
                "batch_size": args.batch_size,
                "lr": args.lr,
                "min_count": args.min_count,
                "seed": args.seed,
            },
        )
    )


def cmd_finetune(args: argparse.Namespace) -> None:
    _emit(
        _post(
            args,
            "/finetune",
            {
                "corpus": args.corpus,
                "model": args.model,
                "out": args.out,
                "epochs": args.epochs,
                "batch_size": args.batch_size,
                "lr": args.lr,
                "margin": args.margin,
                "holdout_fraction": args.holdout_fraction,
                "seed": args.seed,
            },
        )
    )


def cmd_train_gmn(args: argparse.Namespace) -> None:
    _emit(
        _post(
            args,
            "/train-gmn",
            {
                "corpus": args.corpus,
                "encoder": args.encoder,
                "out": args.out,
                "hidden": args.hidden,
                "rounds": args.rounds,
                "margin": args.margin,
                "lr": args.lr,
                "batch": args.batch,
                "epochs": args.epochs,
                "seed": args.seed,
                "ablation": args.ablation,
            },
        )
    )


def cmd_search(args: argparse.Namespace) -> None:
    payload: dict = {
        "corpus": args.corpus,
        "encoder": args.encoder,
        "matcher": args.matcher,
        "k": args.k,
        "ablation": args.ablation,
        "pool": args.pool or None,
    }
    if os.path.isfile(args.query):
        payload["query_text"] = _read(args.query)
    else:
        payload["query_id"] = args.query
    _emit(_post(args, "/search", payload))


def cmd_eval(args: argparse.Namespace) -> None:
    _emit(
        _post(
            args,
            "/eval",
            {
                "corpus": args.corpus,
                "task": args.task,
                "poolsize": args.poolsize,
                "seed": args.seed,
                "ablation": args.ablation,
                "max_queries": args.max_queries,
                "run": args.run,
                "with_baseline": not args.no_baseline,
                "d_model": args.d_model,
                "layers": args.layers,
                "heads": args.heads,
                "pretrain_epochs": args.pretrain_epochs,
                "finetune_epochs": args.finetune_epochs,
                "matcher_epochs": args.matcher_epochs,
                "hidden": args.hidden,
                "rounds": args.rounds,
                "min_count": args.min_count,
            },
        )
    )


def cmd_export_attention(args: argparse.Namespace) -> None:
    payload: dict = {
        "corpus": args.corpus,
        "encoder": args.encoder,
        "matcher": args.matcher,
        "round": args.round,
        "dot": args.dot,
        "ablation": args.ablation,
    }
    for side, value in (("a", args.a), ("b", args.b)):
        if os.path.isfile(value):
            payload[f"{side}_text"] = _read(value)
        else:
            payload[side] = value
    data = _post(args, "/export-attention", payload)
    if args.dot:
        print(data["dot"])
    else:
        _emit(data)


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slicesim", description="slice-graph binary code similarity"
    )
    parser.add_argument(
        "--url",
        default=os.environ.get(URL_ENV, DEFAULT_URL),
        help=f"service address (or ${URL_ENV}); default {DEFAULT_URL}",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--workspace", default=None, help=f"workspace dir (or ${WORKSPACE_ENV})")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("health", help="service status")
    p.set_defaults(func=cmd_health)

    p = sub.add_parser("parse", help="parse IR text and print it canonically")
    p.add_argument("file")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("slice", help="slice the functions in a file")
    p.add_argument("file")
    p.add_argument("--no-prune", action="store_true", help="skip dead-code pruning")
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("graph", help="build flow-typed slice graphs")
    p.add_argument("file")
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--no-merge", action="store_true", help="keep duplicate nodes")
    p.add_argument("--no-slicing", action="store_true", help="whole-block graph instead")
    p.add_argument("--dot", action="store_true", help="print DOT instead of JSON")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--name", required=True)
    p.add_argument("--functions", type=int, default=100)
    p.add_argument("--variants", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--templates", type=int, default=10, help="opcode-skeleton families")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("pretrain", help="masked-token pretraining of the slice encoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", default="encoder")
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--mask-fraction", type=float, default=0.15)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--min-count", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="contrastive fine-tuning of a pretrained encoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None, help="save under this name (default: overwrite)")
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.0003)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--holdout-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("train-gmn", help="train the graph matcher")
    p.add_argument("--corpus", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--out", default="matcher")
    p.add_argument("--hidden", type=int, default=48)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--margin", type=float, default=0.5)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--epochs", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ablation", default=None)
    p.set_defaults(func=cmd_train_gmn)

    p = sub.add_parser("search", help="rank corpus functions against a query")
    p.add_argument("--corpus", required=True)
    p.add_argument("--encoder", default="encoder")
    p.add_argument("--matcher", default="matcher")
    p.add_argument("--query", required=True, help="function_id or path to an IR file")
    p.add_argument("--pool", nargs="*", default=None, help="candidate function_ids")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--ablation", default=None)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="train on half the corpus, evaluate retrieval")
    p.add_argument("--corpus", required=True)
    p.add_argument("--task", choices=["XO", "XC", "XA", "XM"], default="XO")
    p.add_argument("--poolsize", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ablation", default=None)
    p.add_argument("--max-queries", type=int, default=None)
    p.add_argument("--run", default=None, help="run name for saved outputs")
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--pretrain-epochs", type=int, default=8)
    p.add_argument("--finetune-epochs", type=int, default=8)
    p.add_argument("--matcher-epochs", type=int, default=32)
    p.add_argument("--hidden", type=int, default=48)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--min-count", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-attention", help="cross-graph attention for a pair")
    p.add_argument("--corpus", required=True)
    p.add_argument("--encoder", default="encoder")
    p.add_argument("--matcher", default="matcher")
    p.add_argument("--a", required=True, help="function_id or path to an IR file")
    p.add_argument("--b", required=True, help="function_id or path to an IR file")
    p.add_argument("--round", type=int, default=-1)
    p.add_argument("--dot", action="store_true", help="print the DOT overlay")
    p.add_argument("--ablation", default=None)
    p.set_defaults(func=cmd_export_attention)

    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
