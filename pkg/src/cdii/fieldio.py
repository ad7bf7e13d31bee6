"""Text serialization of fields (FLD2) and key=value manifests."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .fields import Grid2D, Matrix2Field, ScalarField2, VectorField2


class FormatError(ValueError):
    pass


def _g(x: float) -> str:
    return format(float(x), ".17g")


def _block_lines(grid: Grid2D, values: np.ndarray) -> list[str]:
    lines = [f"FLD2 {grid.nx} {grid.ny} {_g(grid.h)} {_g(grid.ox)} {_g(grid.oy)}"]
    for row in values:
        lines.append(" ".join(_g(v) for v in row))
    return lines


def _components(f) -> list[tuple[str, np.ndarray]]:
    if isinstance(f, ScalarField2):
        return [("", f.values)]
    if isinstance(f, VectorField2):
        return [("cx", f.cx), ("cy", f.cy)]
    if isinstance(f, Matrix2Field):
        return [(n, getattr(f, n)) for n in ("a11", "a12", "a21", "a22")]
    raise TypeError(f"cannot serialize {type(f).__name__}")


def dumps(f) -> str:
    lines = []
    for tag, values in _components(f):
        if tag:
            lines.append(f"COMP {tag}")
        lines.extend(_block_lines(f.grid, values))
    return "\n".join(lines) + "\n"


def loads(text: str):
    """Parse FLD2 text into a ScalarField2, VectorField2 or Matrix2Field."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    blocks: dict[str, np.ndarray] = {}
    grid = None
    pos = 0
    while pos < len(lines):
        tag = ""
        if lines[pos].startswith("COMP"):
            parts = lines[pos].split()
            if len(parts) != 2:
                raise FormatError(f"line {pos + 1}: bad component tag")
            tag = parts[1]
            pos += 1
        head = lines[pos].split() if pos < len(lines) else []
        if len(head) != 6 or head[0] != "FLD2":
            raise FormatError(f"line {pos + 1}: expected 'FLD2 nx ny h ox oy'")
        try:
            g = Grid2D(int(head[1]), int(head[2]), float(head[3]), float(head[4]), float(head[5]))
        except ValueError as exc:
            raise FormatError(f"line {pos + 1}: {exc}") from exc
        if grid is not None and g != grid:
            raise FormatError("component blocks disagree on the grid")
        grid = g
        rows = lines[pos + 1: pos + 1 + g.ny]
        if len(rows) != g.ny:
            raise FormatError("truncated FLD2 block")
        try:
            values = np.array([[float(v) for v in r.split()] for r in rows])
        except ValueError:
            values = None
        if values is None or values.shape != g.shape:
            raise FormatError(f"block {tag or 'values'}: expected {g.ny} rows of {g.nx} values")
        blocks[tag] = values
        pos += 1 + g.ny
    if grid is None:
        raise FormatError("empty FLD2 file")
    keys = set(blocks)
    if keys == {""}:
        return ScalarField2(grid, blocks[""])
    if keys == {"cx", "cy"}:
        return VectorField2(grid, blocks["cx"], blocks["cy"])
    if keys == {"a11", "a12", "a21", "a22"}:
        return Matrix2Field(grid, blocks["a11"], blocks["a12"], blocks["a21"], blocks["a22"])
    raise FormatError(f"unrecognized component set {sorted(keys)}")


def save(path, f) -> None:
    Path(path).write_text(dumps(f))


def load(path):
    return loads(Path(path).read_text())


def dump_kv(d: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in d.items())


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for n, ln in enumerate(text.splitlines(), 1):
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise FormatError(f"line {n}: expected key=value")
        k, v = ln.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def save_mask(path, grid: Grid2D, mask: np.ndarray) -> None:
    save(path, ScalarField2(grid, mask.astype(float)))


def write_section_csv(path, abscissa, values) -> None:
    with open(path, "w") as fh:
        for a, v in zip(abscissa, values):
            fh.write(f"{_g(a)},{_g(v)}\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
