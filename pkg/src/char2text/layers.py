"""GRU cells, the bidirectional encoder, and additive attention.

All functions are batched: vectors carry a leading batch axis and sequences
are right-padded, with true lengths passed alongside.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .tensor import Tensor

DIRECTIONS = ("fwd", "bwd")


@dataclass(frozen=True)
class GruCell:
    """Weights of one direction of one layer.

    ``w_ih`` is (input, 3*hidden) and ``w_hh_zr`` is (hidden, 2*hidden); columns
    are ordered update gate, reset gate, candidate.  ``w_hh_n`` is the hidden
    path of the candidate and ``bias`` holds one bias per gate.
    """

    w_ih: Tensor
    w_hh_zr: Tensor
    w_hh_n: Tensor
    bias: Tensor

    @property
    def hidden_size(self) -> int:
        return self.w_hh_n.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_ih.shape[0]


@dataclass(frozen=True)
class GruParams:
    cells: Mapping[tuple[int, str], GruCell]
    input_size: int
    hidden_size: int
    num_layers: int

    def cell(self, layer: int, direction: str) -> GruCell:
        return self.cells[(layer, direction)]

    @classmethod
    def from_store(cls, tensors: Mapping[str, Tensor], prefix: str) -> GruParams:
        cells = {}
        layer = 0
        while f"{prefix}.l{layer}.fwd.w_ih" in tensors:
            for d in DIRECTIONS:
                p = f"{prefix}.l{layer}.{d}."
                cells[(layer, d)] = GruCell(
                    tensors[p + "w_ih"], tensors[p + "w_hh_zr"], tensors[p + "w_hh_n"], tensors[p + "bias"]
                )
            layer += 1
        if not cells:
            raise KeyError(f"no GRU parameters under prefix {prefix!r}")
        c0 = cells[(0, "fwd")]
        return cls(cells, c0.input_size, c0.hidden_size, layer)


def init_gru(prefix: str, input_size: int, hidden_size: int, num_layers: int, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases, both directions per layer."""
    bound = 1.0 / np.sqrt(hidden_size)
    out = {}
    for layer in range(num_layers):
        n_in = input_size if layer == 0 else 2 * hidden_size
        for d in DIRECTIONS:
            p = f"{prefix}.l{layer}.{d}."
            out[p + "w_ih"] = rng.uniform(-bound, bound, (n_in, 3 * hidden_size)).astype(dtype)
            out[p + "w_hh_zr"] = rng.uniform(-bound, bound, (hidden_size, 2 * hidden_size)).astype(dtype)
            out[p + "w_hh_n"] = rng.uniform(-bound, bound, (hidden_size, hidden_size)).astype(dtype)
            out[p + "bias"] = np.zeros(3 * hidden_size, dtype=dtype)
    return out


def project_inputs(x: Tensor, cell: GruCell) -> Tensor:
    """Input-path pre-activations for all gates, with biases folded in."""
    if x.shape[-1] != cell.input_size:
        raise T.ShapeError(f"gru: input size {x.shape[-1]} does not match cell input size {cell.input_size}")
    return x @ cell.w_ih + cell.bias


def gru_step_projected(xp: Tensor, h_prev: Tensor, cell: GruCell) -> Tensor:
    """GRU recurrence from precomputed input projections ``xp`` (batch, 3H)."""
    H = cell.hidden_size
    if h_prev.shape[-1] != H:
        raise T.ShapeError(f"gru: hidden size {h_prev.shape[-1]} does not match cell hidden size {H}")
    zr = T.sigmoid(xp[:, : 2 * H] + h_prev @ cell.w_hh_zr)
    z = zr[:, :H]
    r = zr[:, H:]
    cand = T.tanh(xp[:, 2 * H :] + (r * h_prev) @ cell.w_hh_n)
    return h_prev + z * (cand - h_prev)


def gru_step(x: Tensor, h_prev: Tensor, cell: GruCell) -> Tensor:
    """h_t = (1 - z) * h_prev + z * tanh(W x + U (r * h_prev) + b)."""
    return gru_step_projected(project_inputs(x, cell), h_prev, cell)


def reversal_index(lengths: np.ndarray, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Fancy index reversing each row within its own length; padding stays put."""
    lengths = np.asarray(lengths)
    t = np.arange(max_len)[None, :]
    rev = np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
    return np.arange(len(lengths))[:, None], rev


def _run_direction(xp: Tensor, cell: GruCell, h0: Tensor) -> Tensor:
    h = h0
    outs = []
    for t in range(xp.shape[1]):
        h = gru_step_projected(xp[:, t], h, cell)
        outs.append(h)
    return T.stack(outs, axis=1)


@dataclass
class EncoderAnnotations:
    """h_j = forward_j || backward_j for every input position.

    ``values`` is (batch, T_x, 2H); positions at or beyond ``lengths`` are
    padding.  ``backward_first`` holds, per layer, the backward state at
    position 1 (it has read the whole sequence).
    """

    values: Tensor
    lengths: np.ndarray
    backward_first: list[Tensor]

    @property
    def max_len(self) -> int:
        return self.values.shape[1]

    def mask(self) -> np.ndarray:
        return np.arange(self.max_len)[None, :] < self.lengths[:, None]


def encode_bidirectional(x: Tensor, lengths, gru: GruParams) -> EncoderAnnotations:
    """Run every layer of ``gru`` over ``x`` (batch, T_x, input) in both directions."""
    lengths = np.asarray(lengths, dtype=np.int64)
    B, Tx = x.shape[0], x.shape[1]
    if Tx == 0 or lengths.size == 0 or lengths.min() < 1:
        raise ValueError("encode_bidirectional needs non-empty sequences")
    if lengths.max() > Tx or len(lengths) != B:
        raise T.ShapeError("encode_bidirectional: lengths do not fit the input batch")
    rows, rev = reversal_index(lengths, Tx)
    h0 = Tensor(np.zeros((B, gru.hidden_size), dtype=x.dtype))
    layer_in = x
    firsts = []
    for layer in range(gru.num_layers):
        fcell = gru.cell(layer, "fwd")
        bcell = gru.cell(layer, "bwd")
        fwd = _run_direction(project_inputs(layer_in, fcell), fcell, h0)
        xb = project_inputs(layer_in, bcell)[rows, rev]
        bwd = _run_direction(xb, bcell, h0)[rows, rev]
        firsts.append(bwd[:, 0])
        layer_in = T.concat([fwd, bwd], axis=-1)
    return EncoderAnnotations(layer_in, lengths, firsts)


@dataclass(frozen=True)
class AlignmentParams:
    w_s: Tensor  # (H, A)
    w_h: Tensor  # (2H, A)
    v: Tensor  # (A, 1)
    bias: Tensor  # (A,)

    @classmethod
    def from_store(cls, tensors: Mapping[str, Tensor], prefix: str = "align") -> AlignmentParams:
        return cls(*(tensors[f"{prefix}.{k}"] for k in ("w_s", "w_h", "v", "bias")))


def init_alignment(hidden_size: int, width: int, rng: np.random.Generator, dtype=np.float32, prefix: str = "align") -> dict[str, np.ndarray]:
    b_s = 1.0 / np.sqrt(hidden_size)
    b_h = 1.0 / np.sqrt(2 * hidden_size)
    b_v = 1.0 / np.sqrt(width)
    return {
        f"{prefix}.w_s": rng.uniform(-b_s, b_s, (hidden_size, width)).astype(dtype),
        f"{prefix}.w_h": rng.uniform(-b_h, b_h, (2 * hidden_size, width)).astype(dtype),
        f"{prefix}.v": rng.uniform(-b_v, b_v, (width, 1)).astype(dtype),
        f"{prefix}.bias": np.zeros(width, dtype=dtype),
    }


@dataclass
class AttentionResult:
    scores: Tensor  # (batch, T_x)
    alpha: Tensor  # (batch, T_x)
    context: Tensor  # (batch, 2H)


class Attention:
    """Additive attention over a fixed set of annotations.

    The annotation projection does not depend on the decoder state, so it is
    computed once per sequence rather than once per step.
    """

    def __init__(self, annotations: EncoderAnnotations, params: AlignmentParams):
        self.annotations = annotations
        self.params = params
        self.keys = annotations.values @ params.w_h + params.bias
        mask = annotations.mask()
        self._neg_mask = Tensor(np.where(mask, 0.0, -1e9).astype(annotations.values.dtype))

    def __call__(self, s_prev: Tensor) -> AttentionResult:
        B, Tx, _ = self.annotations.values.shape
        q = (s_prev @ self.params.w_s).reshape(B, 1, -1)
        e = (T.tanh(self.keys + q) @ self.params.v).reshape(B, Tx)
        alpha = T.softmax(e + self._neg_mask, axis=-1)
        ctx = (alpha.reshape(B, 1, Tx) @ self.annotations.values).reshape(B, -1)
        return AttentionResult(e, alpha, ctx)


def attend(s_prev: Tensor, annotations: EncoderAnnotations, params: AlignmentParams) -> AttentionResult:
    """e_j = v . tanh(W_s s + W_h h_j + b); alpha = softmax(e); C = sum_j alpha_j h_j."""
    return Attention(annotations, params)(s_prev)
