"""End-to-end checks of the HTTP service on a throwaway workspace.

A module-scoped fixture generates one small corpus through the API and
trains a tiny encoder/matcher pair once; the endpoint tests then poke at
request validation, artifact paths and the error mapping (ValueError to
400, FileNotFoundError to 404) against those shared artifacts.
"""

from __future__ import annotations

import json
from types import SimpleNamespace

import pytest
from fastapi.testclient import TestClient

import slicesim
from slicesim.service.app import create_app
from slicesim.service.state import Workspace

from conftest import (
    FLAG_HEAVY_PRUNED_TEXT,
    FLAG_HEAVY_TEXT,
    MIXED_DEPENDENCE_SLICES,
    MIXED_DEPENDENCE_TEXT,
)

TWO_FUNCTIONS = MIXED_DEPENDENCE_TEXT + FLAG_HEAVY_TEXT


@pytest.fixture(scope="module")
def svc(tmp_path_factory):
    ws = Workspace(tmp_path_factory.mktemp("workspace"))
    client = TestClient(create_app(ws))

    gen = client.post(
        "/gen-corpus",
        json={"name": "tiny", "functions": 6, "variants": 2, "seed": 0, "templates": 3},
    )
    assert gen.status_code == 200, gen.text
    pre = client.post(
        "/pretrain",
        json={
            "corpus": "tiny", "model": "enc",
            "d_model": 16, "layers": 1, "heads": 2,
            "epochs": 1, "batch_size": 32, "seed": 0,
        },
    )
    assert pre.status_code == 200, pre.text
    fit = client.post(
        "/finetune",
        json={
            "corpus": "tiny", "model": "enc", "out": "enc-ft",
            "epochs": 1, "holdout_fraction": 0.5, "seed": 0,
        },
    )
    assert fit.status_code == 200, fit.text
    gmn = client.post(
        "/train-gmn",
        json={
            "corpus": "tiny", "encoder": "enc-ft", "out": "match",
            "hidden": 8, "rounds": 2, "epochs": 2, "seed": 0,
        },
    )
    assert gmn.status_code == 200, gmn.text

    manifest = json.loads((ws.corpora / "tiny" / "manifest.json").read_text())
    ids = [e["function_id"] for e in manifest["entries"]]
    return SimpleNamespace(
        client=client, ws=ws, ids=ids,
        gen=gen.json(), pre=pre.json(), fit=fit.json(), gmn=gmn.json(),
    )


# ---------------------------------------------------------------------------
# Workspace


def test_workspace_creates_layout_and_validates_names(tmp_path):
    ws = Workspace(tmp_path / "w")
    assert ws.corpora.is_dir() and ws.models.is_dir() and ws.runs.is_dir()
    with pytest.raises(ValueError, match="invalid name"):
        ws.corpus_dir("../escape")
    with pytest.raises(ValueError, match="invalid name"):
        ws.model_path(".hidden")
    assert ws.model_path("ok_name-1.x").name == "ok_name-1.x.zip"


def test_workspace_listings_need_real_artifacts(tmp_path):
    ws = Workspace(tmp_path)
    (ws.corpora / "empty-dir").mkdir()
    (ws.models / "notes.txt").write_text("not a checkpoint")
    assert ws.list_corpora() == []
    assert ws.list_models() == []
    with pytest.raises(FileNotFoundError, match="has no manifest"):
        ws.corpus_dir("empty-dir", must_exist=True)
    with pytest.raises(FileNotFoundError, match="not found"):
        ws.model_path("ghost", must_exist=True)


def test_workspace_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("SLICESIM_WORKSPACE", str(tmp_path / "from-env"))
    ws = Workspace.from_env()
    assert ws.root == tmp_path / "from-env"

    monkeypatch.setenv("SLICESIM_CACHE", str(tmp_path / "elsewhere"))
    assert ws.cache().directory == tmp_path / "elsewhere"
    monkeypatch.delenv("SLICESIM_CACHE")
    assert ws.cache().directory == ws.root / "cache"

    app = create_app()
    assert app.state.workspace.root == tmp_path / "from-env"


# ---------------------------------------------------------------------------
# Health and IR inspection


def test_health_reports_workspace_contents(svc):
    body = svc.client.get("/health").json()
    assert body["status"] == "ok"
    assert body["version"] == slicesim.__version__
    assert body["workspace"] == str(svc.ws.root)
    assert "tiny" in body["corpora"]
    assert {"enc", "enc-ft", "match"} <= set(body["models"])


def test_parse_returns_shape_and_canonical_text(svc):
    body = svc.client.post("/parse", json={"text": TWO_FUNCTIONS}).json()
    assert [f["name"] for f in body["functions"]] == ["sample", "flagheavy"]
    assert body["diagnostics"] == []
    sample, flagheavy = body["functions"]
    assert (sample["blocks"], sample["instructions"]) == (1, 6)
    assert (flagheavy["blocks"], flagheavy["instructions"]) == (3, 12)
    # the echoed text is the canonical print, so feeding it back is a no-op
    again = svc.client.post("/parse", json={"text": sample["text"]}).json()
    assert again["functions"][0]["text"] == sample["text"]


def test_parse_surfaces_diagnostics(svc):
    bad = "func broken\nblock 0\n  jz e:zf, , r:rax\nendfunc\n"
    body = svc.client.post("/parse", json={"text": bad}).json()
    assert any("jump instructions cannot define" in d for d in body["diagnostics"])


def test_slice_endpoint_honours_prune_flag(svc):
    pruned = svc.client.post(
        "/slice", json={"text": FLAG_HEAVY_TEXT, "prune": True}
    ).json()
    raw_of_pruned = svc.client.post(
        "/slice", json={"text": FLAG_HEAVY_PRUNED_TEXT, "prune": False}
    ).json()
    assert pruned["functions"][0]["slices"] == raw_of_pruned["functions"][0]["slices"]

    unpruned = svc.client.post(
        "/slice", json={"text": FLAG_HEAVY_TEXT, "prune": False}
    ).json()
    assert len(unpruned["functions"][0]["slices"]) > len(pruned["functions"][0]["slices"])


def test_slice_info_fields(svc):
    # prune would drop the dead trailing rbx add, so ask for the raw slices
    body = svc.client.post(
        "/slice", json={"text": MIXED_DEPENDENCE_TEXT, "prune": False}
    ).json()
    (fn,) = body["functions"]
    assert fn["name"] == "sample"
    covers = tuple(tuple(s["instructions"]) for s in fn["slices"])
    assert covers == MIXED_DEPENDENCE_SLICES
    call_slice = fn["slices"][1]
    assert call_slice["id"] == 1 and call_slice["block"] == 0
    assert "call fn:av_freep(r:rdi)" in call_slice["text"]
    assert "call" in call_slice["tokens"] and "av_freep" in call_slice["tokens"]


def test_graph_endpoint_granularity_and_dot(svc):
    sliced = svc.client.post("/graph", json={"text": FLAG_HEAVY_TEXT}).json()
    graph = sliced["functions"][0]["graph"]
    assert graph["function"] == "flagheavy"
    assert {n["block"] for n in graph["nodes"]} == {0, 1, 2}
    assert len(graph["nodes"]) > 3  # several slices per block
    assert all(len(e) == 3 for e in graph["edges"])
    assert sliced["functions"][0]["dot"] is None

    blocks = svc.client.post(
        "/graph", json={"text": FLAG_HEAVY_TEXT, "slicing": False, "dot": True}
    ).json()
    bgraph = blocks["functions"][0]["graph"]
    assert len(bgraph["nodes"]) == 3
    assert blocks["functions"][0]["dot"].startswith("digraph")


# ---------------------------------------------------------------------------
# Corpus generation and training


def test_gen_corpus_creates_manifest(svc):
    assert svc.gen == {
        "corpus": "tiny",
        "entries": 12,
        "path": str(svc.ws.corpora / "tiny"),
    }
    assert (svc.ws.corpora / "tiny" / "manifest.json").is_file()
    assert svc.ids[0] == "src0000@x64-gcc-O0"
    assert len(svc.ids) == len(set(svc.ids)) == 12


def test_gen_corpus_rejects_bad_requests(svc):
    assert svc.client.post("/gen-corpus", json={"name": "x", "functions": 0}).status_code == 422
    r = svc.client.post("/gen-corpus", json={"name": "no/slashes"})
    assert r.status_code == 400
    assert "invalid name" in r.json()["detail"]


def test_pretrain_saves_listed_model(svc):
    assert svc.pre["model"] == "enc"
    assert svc.pre["path"] == str(svc.ws.models / "enc.zip")
    assert (svc.ws.models / "enc.zip").is_file()
    assert svc.pre["vocab_size"] > 12  # specials + kinds + learned entries
    assert svc.pre["slices"] > 12
    assert len(svc.pre["history"]) == 1  # one epoch requested


def test_pretrain_missing_corpus_is_404(svc):
    r = svc.client.post("/pretrain", json={"corpus": "nope", "model": "m"})
    assert r.status_code == 404
    assert "has no manifest" in r.json()["detail"]


def test_finetune_reports_holdout_and_new_model(svc):
    assert svc.fit["model"] == "enc-ft"
    assert svc.fit["path"] == str(svc.ws.models / "enc-ft.zip")
    assert (svc.ws.models / "enc-ft.zip").is_file()
    assert svc.fit["pairs"] >= 1
    assert len(svc.fit["history"]) == 1
    # half the pairs were held out, so the cosine summary must be present
    assert isinstance(svc.fit["heldout_cos_before"], float)
    assert isinstance(svc.fit["heldout_cos_after"], float)


def test_finetune_defaults_out_to_input_model(svc):
    src = (svc.ws.models / "enc.zip").read_bytes()
    (svc.ws.models / "enc2.zip").write_bytes(src)
    r = svc.client.post(
        "/finetune", json={"corpus": "tiny", "model": "enc2", "epochs": 1}
    )
    assert r.status_code == 200, r.text
    assert r.json()["model"] == "enc2"
    assert r.json()["path"] == str(svc.ws.models / "enc2.zip")


def test_finetune_single_config_corpus_is_400(svc):
    gen = svc.client.post(
        "/gen-corpus", json={"name": "solo", "functions": 2, "variants": 1, "templates": 2}
    )
    assert gen.status_code == 200
    r = svc.client.post("/finetune", json={"corpus": "solo", "model": "enc", "epochs": 1})
    assert r.status_code == 400
    assert r.json()["detail"] == "corpus yields no fine-tuning pairs"


def test_finetune_missing_model_is_404(svc):
    r = svc.client.post("/finetune", json={"corpus": "tiny", "model": "ghost"})
    assert r.status_code == 404
    assert "ghost" in r.json()["detail"]


def test_train_gmn_saves_matcher(svc):
    assert svc.gmn["model"] == "match"
    assert svc.gmn["path"] == str(svc.ws.models / "match.zip")
    assert (svc.ws.models / "match.zip").is_file()
    assert svc.gmn["pairs"] >= 2
    assert len(svc.gmn["history"]) == 2


def test_train_gmn_rejects_unknown_ablation(svc):
    r = svc.client.post(
        "/train-gmn",
        json={"corpus": "tiny", "encoder": "enc-ft", "ablation": "no-such-thing"},
    )
    assert r.status_code == 400
    assert "unknown ablation" in r.json()["detail"]


# ---------------------------------------------------------------------------
# Search


def test_search_by_id_ranks_the_rest_of_the_corpus(svc):
    query = svc.ids[0]
    r = svc.client.post(
        "/search",
        json={"corpus": "tiny", "encoder": "enc-ft", "matcher": "match", "query_id": query},
    )
    assert r.status_code == 200, r.text
    body = r.json()
    assert body["query"] == query
    assert len(body["results"]) == 10  # default k over 11 candidates
    hit_ids = [h["function_id"] for h in body["results"]]
    assert query not in hit_ids
    distances = [h["distance"] for h in body["results"]]
    assert distances == sorted(distances)
    assert all(set(h) == {"function_id", "distance", "cosine"} for h in body["results"])


def test_search_by_text_and_explicit_pool(svc):
    pool = svc.ids[:3]
    r = svc.client.post(
        "/search",
        json={
            "corpus": "tiny", "encoder": "enc-ft", "matcher": "match",
            "query_text": MIXED_DEPENDENCE_TEXT, "pool": pool, "k": 2,
        },
    )
    assert r.status_code == 200, r.text
    body = r.json()
    assert body["query"] == "sample"
    assert len(body["results"]) == 2
    assert {h["function_id"] for h in body["results"]} <= set(pool)


def test_search_request_validation(svc):
    base = {"corpus": "tiny", "encoder": "enc-ft", "matcher": "match"}

    r = svc.client.post("/search", json={**base, "query_id": "nope@x64-gcc-O0"})
    assert (r.status_code, r.json()["detail"]) == (400, "unknown function_id 'nope@x64-gcc-O0'")

    r = svc.client.post("/search", json=base)
    assert (r.status_code, r.json()["detail"]) == (400, "provide query_id or query_text")

    r = svc.client.post(
        "/search", json={**base, "query_id": svc.ids[0], "pool": [svc.ids[1], "ghost"]}
    )
    assert r.status_code == 400
    assert r.json()["detail"] == "pool ids not in corpus: ghost"

    r = svc.client.post("/search", json={**base, "query_id": svc.ids[0], "pool": [svc.ids[0]]})
    assert (r.status_code, r.json()["detail"]) == (400, "empty candidate pool")

    r = svc.client.post("/search", json={**base, "query_text": TWO_FUNCTIONS})
    assert r.status_code == 400
    assert "expected exactly one function" in r.json()["detail"]


# ---------------------------------------------------------------------------
# Evaluation runs


EVAL_KNOBS = {
    "d_model": 16, "layers": 1, "heads": 2,
    "pretrain_epochs": 1, "finetune_epochs": 1, "matcher_epochs": 2,
    "hidden": 8, "rounds": 2,
}


def test_eval_writes_run_artifacts(svc):
    r = svc.client.post(
        "/eval",
        json={
            "corpus": "tiny", "task": "XO", "poolsize": 4, "max_queries": 2,
            "run": "myrun", "with_baseline": False, **EVAL_KNOBS,
        },
    )
    assert r.status_code == 200, r.text
    body = r.json()
    assert body["run"] == "myrun"
    assert (body["task"], body["ablation"]) == ("XO", None)
    assert (body["n_queries"], body["poolsize"]) == (2, 4)
    assert body["baseline"] is None
    assert set(body["metrics"]) == {"recall@1", "recall@5", "recall@10", "mrr@10"}

    run_json = json.loads((svc.ws.runs / "myrun.json").read_text())
    assert run_json["metrics"] == body["metrics"]
    csv_lines = (svc.ws.runs / "myrun.csv").read_text().splitlines()
    assert csv_lines[0].startswith("task,ablation,scorer,poolsize")
    assert len(csv_lines) == 2  # header plus the pipeline row, no baseline


def test_eval_names_ablated_runs(svc):
    r = svc.client.post(
        "/eval",
        json={
            "corpus": "tiny", "task": "XO", "poolsize": 4, "max_queries": 2,
            "seed": 3, "ablation": "drop-flow:jump", **EVAL_KNOBS,
        },
    )
    assert r.status_code == 200, r.text
    body = r.json()
    assert body["run"] == "xo-tiny-s3-drop-flow_jump"
    assert body["ablation"] == "drop-flow:jump"
    assert body["baseline"] is not None
    assert (svc.ws.runs / "xo-tiny-s3-drop-flow_jump.json").is_file()
    assert (svc.ws.runs / "xo-tiny-s3-drop-flow_jump.csv").is_file()


# ---------------------------------------------------------------------------
# Attention export


def test_export_attention_between_corpus_functions(svc):
    r = svc.client.post(
        "/export-attention",
        json={
            "corpus": "tiny", "encoder": "enc-ft", "matcher": "match",
            "a": svc.ids[0], "b": svc.ids[1],
        },
    )
    assert r.status_code == 200, r.text
    body = r.json()
    assert body["dot"] is None
    assert len(body["rounds"]) == 2  # the shared matcher ran two rounds
    assert set(body["rounds"][0]) == {"a_to_b", "b_to_a"}
    assert len(body["rounds"][0]["a_to_b"]) == len(body["nodes_a"])
    assert all(isinstance(t, str) and t for t in body["nodes_a"] + body["nodes_b"])
    assert body["distance"] >= 0.0
    assert -1.0 <= body["cosine"] <= 1.0


def test_export_attention_accepts_text_and_emits_dot(svc):
    r = svc.client.post(
        "/export-attention",
        json={
            "corpus": "tiny", "encoder": "enc-ft", "matcher": "match",
            "a": svc.ids[0], "b_text": MIXED_DEPENDENCE_TEXT,
            "dot": True, "round": 0,
        },
    )
    assert r.status_code == 200, r.text
    dot = r.json()["dot"]
    assert dot.startswith("digraph")
    assert "a0" in dot and "b0" in dot


def test_export_attention_validation(svc):
    base = {"corpus": "tiny", "encoder": "enc-ft", "matcher": "match"}

    r = svc.client.post("/export-attention", json={**base, "a": "ghost", "b": svc.ids[0]})
    assert (r.status_code, r.json()["detail"]) == (400, "unknown function_id 'ghost'")

    r = svc.client.post("/export-attention", json={**base, "a": svc.ids[0]})
    assert (r.status_code, r.json()["detail"]) == (400, "provide b or b_text")
