"""Character-wise copy mechanism.

The decoder's proposal over the alphabet (``alphabet_distribution``) is
blended with a copy proposal obtained by pooling attention mass per input
character (``copy_distribution``).  The blend weight is a sigmoid gate that
also sees its own value from the previous step (``copy_gate``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

INITIAL_GATE = 0.5
# keeps the gate strictly inside (0, 1) where the sigmoid would round to 0 or 1
GATE_EPS = 1e-6


@dataclass(frozen=True)
class OutputHead:
    v: Tensor  # (3H, A), acting on [s_i ; C_i]
    b: Tensor  # (A,)

    @classmethod
    def from_store(cls, tensors: Mapping[str, Tensor], prefix: str = "head") -> OutputHead:
        return cls(tensors[f"{prefix}.v"], tensors[f"{prefix}.b"])


@dataclass(frozen=True)
class CopyGateParams:
    w_y: Tensor  # (E, 1)
    w_s: Tensor  # (H, 1)
    w_c: Tensor  # (2H, 1)
    w_p: Tensor  # (1,)
    bias: Tensor  # (1,)

    @classmethod
    def from_store(cls, tensors: Mapping[str, Tensor], prefix: str = "gate") -> CopyGateParams:
        return cls(*(tensors[f"{prefix}.{k}"] for k in ("w_y", "w_s", "w_c", "w_p", "bias")))


@dataclass
class StepDistributions:
    p_alph: np.ndarray
    p_copy: np.ndarray
    p_gen: float
    p_final: np.ndarray


def alphabet_distribution(s: Tensor, context: Tensor, head: OutputHead) -> Tensor:
    """softmax(V [s ; C] + b) over the alphabet."""
    return T.softmax(T.concat([s, context], axis=-1) @ head.v + head.b, axis=-1)


class CopyPlan:
    """Constant scatter matrices mapping input positions to alphabet entries.

    ``onehot[b, j]`` is the one-hot row of input character j.  ``shifted[b, j]``
    is the one-hot row of character j+1, so that attention on position j
    proposes the character that follows it; the last real position maps to
    nothing and the remaining mass is renormalised.
    """

    def __init__(self, inputs: np.ndarray, lengths, alphabet_size: int, shift: bool, dtype=np.float64):
        inputs = np.asarray(inputs)
        lengths = np.asarray(lengths)
        B, Tx = inputs.shape
        valid = np.arange(Tx)[None, :] < lengths[:, None]
        onehot = np.zeros((B, Tx, alphabet_size), dtype=dtype)
        bi, ti = np.nonzero(valid)
        onehot[bi, ti, inputs[bi, ti]] = 1.0
        self.onehot = Tensor(onehot)
        self.shift = shift
        self.shifted = None
        if shift:
            shifted = np.zeros_like(onehot)
            shifted[:, :-1] = onehot[:, 1:]
            self.shifted = Tensor(shifted)

    def __call__(self, alpha: Tensor) -> Tensor:
        B, Tx = alpha.shape
        a = alpha.reshape(B, 1, Tx)
        plain = (a @ self.onehot).reshape(B, -1)
        if not self.shift:
            return plain
        moved = (a @ self.shifted).reshape(B, -1)
        total = moved.data.sum(axis=-1, keepdims=True)
        empty = (total == 0).astype(alpha.dtype)
        if not empty.any():
            return moved / moved.sum(axis=-1, keepdims=True)
        # rows whose mass sat entirely on the final position fall back to the unshifted view
        keep = 1.0 - empty
        return moved / (moved.sum(axis=-1, keepdims=True) + empty) * keep + plain * empty


def copy_distribution(alphas: Sequence[float], input_chars: Sequence[int], alphabet_size: int, shift: bool) -> np.ndarray:
    """Attention mass pooled by character for a single sequence.

    ``input_chars`` are alphabet indices.  With ``shift`` the attention vector
    is first moved one position to the right and renormalised.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    chars = np.asarray(input_chars)
    if alphas.shape != chars.shape:
        raise ValueError(f"copy_distribution: {alphas.size} attention weights for {chars.size} input characters")
    plan = CopyPlan(chars[None, :], [chars.size], alphabet_size, shift)
    with T.no_grad():
        return plan(Tensor(alphas[None, :]))[0].data


def copy_gate(y_prev: Tensor, s: Tensor, p_prev: Tensor, context: Tensor, params: CopyGateParams) -> Tensor:
    """sigmoid(W_y y + W_s s + W_p p_prev + W_c C + b), shape (batch, 1).

    The sigmoid is squeezed affinely into [GATE_EPS, 1 - GATE_EPS].
    """
    logit = y_prev @ params.w_y + s @ params.w_s + p_prev * params.w_p + context @ params.w_c + params.bias
    return T.sigmoid(logit) * (1.0 - 2 * GATE_EPS) + GATE_EPS


def mixture(p_gen, p_alph: Tensor, p_copy: Tensor) -> Tensor:
    """p_gen * P_alph + (1 - p_gen) * P_copy."""
    p_gen = T._ensure(p_gen, p_alph)
    return p_gen * p_alph + (1.0 - p_gen) * p_copy


def init_head(state_size: int, context_size: int, alphabet_size: int, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    bound = 1.0 / np.sqrt(state_size + context_size)
    return {
        "head.v": rng.uniform(-bound, bound, (state_size + context_size, alphabet_size)).astype(dtype),
        "head.b": np.zeros(alphabet_size, dtype=dtype),
    }


def init_gate(embed_size: int, hidden_size: int, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    def u(n):
        b = 1.0 / np.sqrt(n)
        return rng.uniform(-b, b, (n, 1)).astype(dtype)

    return {
        "gate.w_y": u(embed_size),
        "gate.w_s": u(hidden_size),
        "gate.w_c": u(2 * hidden_size),
        "gate.w_p": np.zeros(1, dtype=dtype),
        "gate.bias": np.zeros(1, dtype=dtype),
    }
