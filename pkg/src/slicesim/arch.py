"""Per-architecture argument-register tables.

The prune pass must not delete dead-looking assignments that set up call
arguments, so it needs to know which registers carry arguments on each
architecture.  A small built-in table covers the shipped fixtures; a JSON
config file (``{"x64": ["rdi", ...], ...}``) can extend or override it.
"""

from __future__ import annotations

import json
from pathlib import Path

DEFAULT_ARGUMENT_REGISTERS: dict[str, tuple[str, ...]] = {
    "x64": ("rdi", "rsi", "rdx", "rcx", "r8", "r9"),
    "arm64": ("x0", "x1", "x2", "x3", "x4", "x5", "x6", "x7"),
    # 32-bit x86 passes arguments on the stack.
    "x86": (),
}

DEFAULT_ARCH = "x64"


def load_argument_registers(path: str | Path) -> dict[str, tuple[str, ...]]:
    """Load an architecture -> ordered argument-register list mapping."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("argument-register table must be a JSON object")
    table: dict[str, tuple[str, ...]] = {}
    for arch, regs in data.items():
        if not isinstance(regs, list) or not all(isinstance(r, str) for r in regs):
            raise ValueError(f"entry for {arch!r} must be a list of register names")
        table[arch] = tuple(regs)
    return table


def argument_register_set(
    arch: str = DEFAULT_ARCH, table: dict[str, tuple[str, ...]] | None = None
) -> frozenset[str]:
    merged = dict(DEFAULT_ARGUMENT_REGISTERS)
    if table:
        merged.update(table)
    if arch not in merged:
        raise KeyError(f"unknown architecture {arch!r}; known: {sorted(merged)}")
    return frozenset(merged[arch])
