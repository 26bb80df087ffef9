"""Checkpoint archive format.

A checkpoint is a STORED-mode zip with two entries:

* ``header.json``: format version, a caller-supplied config dict, and the
  ordered parameter manifest ``[{"name", "shape"}, ...]``;
* ``params.bin``: the parameters' little-endian float32 payloads
  concatenated in manifest order.

Zip metadata (timestamps, compression) is pinned so that two identical
training runs produce byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .tensor import Tensor

__all__ = ["save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

FORMAT_VERSION = 1

_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path: str | Path, header: dict, params: list[tuple[str, Tensor]]) -> None:
    manifest = [{"name": name, "shape": list(t.data.shape)} for name, t in params]
    full_header = {"format_version": FORMAT_VERSION, "header": header, "params": manifest}
    payload = io.BytesIO()
    for _name, t in params:
        payload.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("header.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(full_header, sort_keys=True, indent=1))
        info = zipfile.ZipInfo("params.bin", date_time=_EPOCH)
        zf.writestr(info, payload.getvalue())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (caller header, name -> float64 array)."""
    with zipfile.ZipFile(path) as zf:
        full_header = json.loads(zf.read("header.json"))
        blob = zf.read("params.bin")
    if full_header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {full_header.get('format_version')}")
    params: dict[str, np.ndarray] = {}
    offset = 0
    for entry in full_header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        params[entry["name"]] = raw.astype(np.float64).reshape(shape)
        offset += count * 4
    return full_header["header"], params
