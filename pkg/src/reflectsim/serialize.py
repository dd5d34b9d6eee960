"""Deterministic CSV/JSON writers for run artifacts.

All floats are written with 17 significant digits so that artifacts are
byte-identical across runs and platforms with IEEE-754 doubles.
"""
from __future__ import annotations

import json
from pathlib import Path


def fmt(value) -> str:
    """Render a scalar for CSV output (floats at full precision)."""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_csv(path: str | Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _canonical(obj):
    """Recursively convert numpy scalars/arrays so json can encode them."""
    import numpy as np

    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: str | Path, obj) -> None:
    text = json.dumps(_canonical(obj), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def dumps_json(obj) -> str:
    return json.dumps(_canonical(obj), indent=2, sort_keys=True)
