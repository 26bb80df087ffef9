"""Workspace layout for the HTTP service.

A workspace is a directory with three children: ``corpora/<name>/``
(generated or imported corpora, each with a manifest.json), ``models/``
(encoder and matcher checkpoints) and ``runs/`` (evaluation outputs).
Embedding caches live under ``cache/`` unless SLICESIM_CACHE points
elsewhere.
"""

from __future__ import annotations

import os
import re
from pathlib import Path

from ..encoder import EmbeddingCache

__all__ = ["Workspace", "WORKSPACE_ENV", "CACHE_ENV", "URL_ENV", "DEFAULT_URL"]

WORKSPACE_ENV = "SLICESIM_WORKSPACE"
CACHE_ENV = "SLICESIM_CACHE"
URL_ENV = "SLICESIM_URL"
DEFAULT_URL = "http://127.0.0.1:8000"

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


def _checked(name: str) -> str:
    if not _NAME_RE.match(name):
        raise ValueError(f"invalid name {name!r}; use letters, digits, ., _, -")
    return name


class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.corpora = self.root / "corpora"
        self.models = self.root / "models"
        self.runs = self.root / "runs"
        for d in (self.corpora, self.models, self.runs):
            d.mkdir(parents=True, exist_ok=True)

    @classmethod
    def from_env(cls) -> "Workspace":
        return cls(os.environ.get(WORKSPACE_ENV, "slicesim-workspace"))

    def corpus_dir(self, name: str, must_exist: bool = False) -> Path:
        path = self.corpora / _checked(name)
        if must_exist and not (path / "manifest.json").is_file():
            raise FileNotFoundError(f"corpus {name!r} has no manifest in this workspace")
        return path

    def model_path(self, name: str, must_exist: bool = False) -> Path:
        path = self.models / f"{_checked(name)}.zip"
        if must_exist and not path.is_file():
            raise FileNotFoundError(f"model {name!r} not found in this workspace")
        return path

    def run_path(self, name: str) -> Path:
        return self.runs / _checked(name)

    def cache(self) -> EmbeddingCache:
        directory = os.environ.get(CACHE_ENV) or self.root / "cache"
        return EmbeddingCache(directory)

    def list_corpora(self) -> list[str]:
        return sorted(p.name for p in self.corpora.iterdir() if (p / "manifest.json").is_file())

    def list_models(self) -> list[str]:
        return sorted(p.stem for p in self.models.glob("*.zip"))
