"""Attention-matrix and copy-gate images.

Rows are output steps, columns input positions; brighter means more
attention.  A one-pixel black rule separates the matrix from the gate strip,
where white is generating (p_gen = 1) and black copying.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np


@dataclass
class HeatmapSpec:
    matrix: np.ndarray  # (T_y, T_x)
    row_labels: list[str]
    col_labels: list[str]
    gate: np.ndarray  # (T_y,)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.gate = np.asarray(self.gate, dtype=np.float64)
        ty, tx = self.matrix.shape
        if len(self.row_labels) != ty or len(self.col_labels) != tx or self.gate.shape != (ty,):
            raise ValueError(f"labels/gate do not match a {ty}x{tx} matrix")
        if ty == 0 or tx == 0:
            raise ValueError("empty heatmap")
        for arr in (self.matrix, self.gate):
            if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
                raise ValueError("heatmap values must lie in [0, 1]")


def quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def image_rows(spec: HeatmapSpec) -> np.ndarray:
    """Pixel grid: T_y matrix rows, one black rule row, then the gate row.

    The gate has one value per output step, written left-aligned; the image is
    ``max(T_x, T_y)`` wide so no gate value is dropped, and unused pixels are
    black.
    """
    ty, tx = spec.matrix.shape
    width = max(tx, ty)
    img = np.zeros((ty + 2, width), dtype=np.uint8)
    img[:ty, :tx] = quantize(spec.matrix)
    img[ty + 1, :ty] = quantize(spec.gate)
    return img


def write_pgm(img: np.ndarray, path, matrix_shape: tuple[int, int] | None = None) -> None:
    h, w = img.shape
    comment = f"# matrix {matrix_shape[0]} {matrix_shape[1]}\n" if matrix_shape else ""
    with open(path, "wb") as fh:
        fh.write(f"P5\n{comment}{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def _parse_pgm(data: bytes):
    fields = []
    comments = []
    pos = 0
    while len(fields) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ValueError("truncated graymap header")
        if data[pos : pos + 1] == b"#":
            end = data.index(b"\n", pos)
            comments.append(data[pos + 1 : end].decode("ascii", "replace").strip())
            pos = end + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError("not a binary graymap")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError("only 8-bit graymaps are supported")
    pos += 1
    body = data[pos : pos + w * h]
    if len(body) != w * h:
        raise ValueError("truncated graymap body")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w), comments


def read_pgm(path) -> np.ndarray:
    return _parse_pgm(Path(path).read_bytes())[0]


def read_heatmap(path) -> tuple[np.ndarray, np.ndarray]:
    """(matrix, gate) in [0, 1] from a graymap written by :func:`render`."""
    img, comments = _parse_pgm(Path(path).read_bytes())
    for c in comments:
        parts = c.split()
        if len(parts) == 3 and parts[0] == "matrix":
            return split_image(img, int(parts[1]), int(parts[2]))
    raise ValueError("graymap carries no matrix dimensions")


def split_image(img: np.ndarray, ty: int, tx: int) -> tuple[np.ndarray, np.ndarray]:
    """Recover (matrix, gate) in [0, 1] from an image made by :func:`image_rows`."""
    return img[:ty, :tx] / 255.0, img[ty + 1, :ty] / 255.0


def _label(ch: str) -> str:
    if ch == " ":
        return "␣"
    if ord(ch) < 32:
        return {"\x02": "<s>", "\x03": "</s>", "\x1a": "<unk>"}.get(ch, "?")
    return ch


def write_svg(spec: HeatmapSpec, path, cell: int = 12) -> None:
    ty, tx = spec.matrix.shape
    margin = 3 * cell
    width = margin + max(tx, ty) * cell + cell
    height = margin + (ty + 2) * cell + cell
    q = quantize(spec.matrix)
    g = quantize(spec.gate)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" data-rows="{ty}" data-cols="{tx}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="rgb(128,128,128)"/>',
    ]
    for j, ch in enumerate(spec.col_labels):
        x = margin + j * cell + cell // 2
        out.append(f'<text x="{x}" y="{margin - 4}" font-size="{cell - 2}" font-family="monospace" text-anchor="middle">{escape(_label(ch))}</text>')
    for i, ch in enumerate(spec.row_labels):
        y = margin + i * cell + cell - 2
        out.append(f'<text x="{margin - 4}" y="{y}" font-size="{cell - 2}" font-family="monospace" text-anchor="end">{escape(_label(ch))}</text>')
        for j in range(tx):
            v = int(q[i, j])
            out.append(f'<rect x="{margin + j * cell}" y="{margin + i * cell}" width="{cell}" height="{cell}" fill="rgb({v},{v},{v})"/>')
    rule_y = margin + ty * cell
    out.append(f'<rect x="{margin}" y="{rule_y}" width="{tx * cell}" height="{cell}" fill="rgb(0,0,0)"/>')
    for i in range(ty):
        v = int(g[i])
        out.append(f'<rect x="{margin + i * cell}" y="{rule_y + cell}" width="{cell}" height="{cell}" fill="rgb({v},{v},{v})"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def spec_from_trace(trace, alphabet=None) -> HeatmapSpec:
    from .data import ALPHABET
    from .model import sources_for_trace

    alphabet = alphabet or ALPHABET
    rows = [alphabet.symbols[int(i)] for i in trace.emitted]
    cols = sources_for_trace(trace, alphabet)
    return HeatmapSpec(trace.attention, rows, cols, trace.p_gen)


def render(trace, path, format: str = "pgm", alphabet=None) -> Path:
    """Write one trace as a graymap (``pgm``) or labelled vector image (``svg``)."""
    if trace.length == 0:
        raise ValueError("cannot render an empty trace")
    spec = spec_from_trace(trace, alphabet)
    path = Path(path)
    if format == "pgm":
        write_pgm(image_rows(spec), path, spec.matrix.shape)
    elif format == "svg":
        write_svg(spec, path)
    else:
        raise ValueError(f"unknown image format {format!r}")
    return path


def argmax_monotone(matrix: np.ndarray, rows: Sequence[int] | None = None) -> bool:
    """True when the per-row argmax column never moves left over ``rows``."""
    m = np.asarray(matrix)
    idx = np.argmax(m if rows is None else m[list(rows)], axis=1)
    return bool(np.all(np.diff(idx) >= 0))
