"""Encoder-decoder with attention, character copy and exchangeable GRUs.

Parameters live in a flat ``{name: ndarray}`` store.  Two dimension-identical
bidirectional GRUs (``gru_a`` and ``gru_b``) are stored side by side and a
:class:`RoleAssignment` decides which one encodes and which one decodes.
Everything else (embeddings, attention, output head, copy gate, decoder
initialisation and input projection) is shared by both roles.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .copynet import (
    INITIAL_GATE,
    CopyGateParams,
    CopyPlan,
    OutputHead,
    StepDistributions,
    alphabet_distribution,
    copy_gate,
    init_gate,
    init_head,
    mixture,
)
from .data import ALPHABET, Alphabet, pad_batch, transliterate
from .layers import (
    AlignmentParams,
    Attention,
    GruParams,
    encode_bidirectional,
    gru_step,
    init_alignment,
    init_gru,
)
from .tensor import Tensor

ParameterStore = dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    alphabet_size: int = len(ALPHABET)
    embedding_size: int = 32
    hidden_size: int = 128
    alignment_size: int | None = None
    num_layers: int = 1
    copy: bool = True
    shift: bool = True
    loss_reduction: str = "mean"
    dtype: str = "float32"

    def __post_init__(self):
        if self.loss_reduction not in ("mean", "sum"):
            raise ValueError(f"loss_reduction must be 'mean' or 'sum', got {self.loss_reduction!r}")
        for name in ("alphabet_size", "embedding_size", "hidden_size", "num_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def width(self) -> int:
        return self.alignment_size or self.hidden_size


@dataclass(frozen=True)
class RoleAssignment:
    encoder_gru: str
    decoder_gru: str

    def __post_init__(self):
        if self.encoder_gru == self.decoder_gru:
            raise ValueError("encoder and decoder must use different GRUs")


FORWARD = RoleAssignment("gru_a", "gru_b")
BACKWARD = RoleAssignment("gru_b", "gru_a")


def assign_roles(phase: str) -> RoleAssignment:
    """``forward`` builds table -> text, ``backward`` swaps the GRUs for text -> table."""
    if phase == "forward":
        return FORWARD
    if phase == "backward":
        return BACKWARD
    raise ValueError(f"unknown phase {phase!r}")


def decoder_cells(num_layers: int) -> list[tuple[int, str]]:
    """Cells a decoder steps: all of them below the top layer, the forward one on top."""
    cells = [(l, d) for l in range(num_layers - 1) for d in ("fwd", "bwd")]
    return cells + [(num_layers - 1, "fwd")]


def init_params(config: ModelConfig, seed: int = 0) -> ParameterStore:
    params = _init_params(config, seed)
    check_params(params, config)
    return params


def _init_params(config: ModelConfig, seed: int) -> ParameterStore:
    rng = np.random.default_rng(seed)
    dt = np.dtype(config.dtype)
    E, H, A = config.embedding_size, config.hidden_size, config.alphabet_size
    params: ParameterStore = {"embedding": rng.normal(0.0, 1.0, (A, E)).astype(dt)}
    params.update(init_gru("gru_a", E, H, config.num_layers, rng, dt))
    params.update(init_gru("gru_b", E, H, config.num_layers, rng, dt))
    params.update(init_alignment(H, config.width, rng, dt))
    params.update(init_head(H, 2 * H, A, rng, dt))
    params.update(init_gate(E, H, rng, dt))
    bound = 1.0 / np.sqrt(H)
    for l, d in decoder_cells(config.num_layers):
        params[f"init.l{l}.{d}.w"] = rng.uniform(-bound, bound, (H, H)).astype(dt)
        params[f"init.l{l}.{d}.b"] = np.zeros(H, dtype=dt)
    b_in = 1.0 / np.sqrt(E + 2 * H)
    params["dec_in.w"] = rng.uniform(-b_in, b_in, (E + 2 * H, E)).astype(dt)
    params["dec_in.b"] = np.zeros(E, dtype=dt)
    return params


@lru_cache(maxsize=32)
def _expected_shapes(config_key: str) -> dict[str, tuple[int, ...]]:
    config = ModelConfig(**json.loads(config_key))
    return {k: v.shape for k, v in _init_params(config, 0).items()}


def check_params(params: Mapping[str, np.ndarray], config: ModelConfig) -> None:
    """Both GRUs must agree on every dimension, and every tensor must match the config."""
    a = {k[len("gru_a"):]: v.shape for k, v in params.items() if k.startswith("gru_a.")}
    b = {k[len("gru_b"):]: v.shape for k, v in params.items() if k.startswith("gru_b.")}
    if not a or a != b:
        raise ValueError("gru_a and gru_b must have identical dimensions")
    if "embedding" not in params or params["embedding"].shape != (config.alphabet_size, config.embedding_size):
        raise ValueError("embedding table does not match the alphabet size")
    expected = _expected_shapes(json.dumps(asdict(config), sort_keys=True))
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise ValueError(f"parameter names differ from the config (missing {missing[:3]}, unexpected {extra[:3]})")
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise ValueError(f"parameter {k} has shape {params[k].shape}, expected {shape}")


@dataclass
class DecoderTrace:
    """Per-step record of one decode (teacher-forced or free-running)."""

    source: str
    attention: np.ndarray  # (T_y, T_x)
    p_gen: np.ndarray  # (T_y,)
    p_alph: np.ndarray  # (T_y, A)
    p_copy: np.ndarray  # (T_y, A)
    p_final: np.ndarray  # (T_y, A)
    emitted: np.ndarray  # (T_y,)
    terminated: bool

    @property
    def length(self) -> int:
        return len(self.emitted)

    def step(self, i: int) -> StepDistributions:
        return StepDistributions(self.p_alph[i], self.p_copy[i], float(self.p_gen[i]), self.p_final[i])

    def output(self, alphabet: Alphabet = ALPHABET) -> str:
        return alphabet.decode(self.emitted)


@dataclass
class _State:
    hidden: dict[tuple[int, str], Tensor]
    p_prev: Tensor


class Network:
    """Parameters bound as graph leaves for one forward computation."""

    def __init__(self, params: Mapping[str, np.ndarray], config: ModelConfig, trainable: bool = False):
        self.config = config
        self.leaves = T.leaves_from(params, trainable)
        self.embedding = self.leaves["embedding"]
        self.grus = {g: GruParams.from_store(self.leaves, g) for g in ("gru_a", "gru_b")}
        self.align = AlignmentParams.from_store(self.leaves)
        self.head = OutputHead.from_store(self.leaves)
        self.gate = CopyGateParams.from_store(self.leaves)
        self.dtype = np.dtype(config.dtype)

    def encode(self, src: np.ndarray, lengths: np.ndarray, roles: RoleAssignment):
        emb = T.embedding(self.embedding, src)
        ann = encode_bidirectional(emb, lengths, self.grus[roles.encoder_gru])
        attention = Attention(ann, self.align)
        plan = CopyPlan(src, lengths, self.config.alphabet_size, self.config.shift, dtype=self.dtype) if self.config.copy else None
        hidden = {}
        for l, d in decoder_cells(self.grus[roles.decoder_gru].num_layers):
            w, b = self.leaves[f"init.l{l}.{d}.w"], self.leaves[f"init.l{l}.{d}.b"]
            hidden[(l, d)] = T.tanh(ann.backward_first[l] @ w + b)
        p0 = Tensor(np.full((src.shape[0], 1), INITIAL_GATE, dtype=self.dtype))
        return attention, plan, _State(hidden, p0)

    def step(self, state: _State, y_prev: np.ndarray, attention: Attention, plan: CopyPlan | None, roles: RoleAssignment):
        gru = self.grus[roles.decoder_gru]
        top = gru.num_layers - 1
        att = attention(state.hidden[(top, "fwd")])
        y_emb = T.embedding(self.embedding, y_prev)
        x = T.concat([y_emb, att.context], axis=-1) @ self.leaves["dec_in.w"] + self.leaves["dec_in.b"]
        hidden = {}
        for layer in range(gru.num_layers):
            dirs = ("fwd",) if layer == top else ("fwd", "bwd")
            for d in dirs:
                hidden[(layer, d)] = gru_step(x, state.hidden[(layer, d)], gru.cell(layer, d))
            if layer != top:
                x = T.concat([hidden[(layer, "fwd")], hidden[(layer, "bwd")]], axis=-1)
        s = hidden[(top, "fwd")]
        p_alph = alphabet_distribution(s, att.context, self.head)
        if plan is None:
            p_gen = Tensor(np.ones((y_prev.shape[0], 1), dtype=self.dtype))
            p_copy = Tensor(np.zeros_like(p_alph.data))
            p_final = p_alph
        else:
            p_gen = copy_gate(y_emb, s, state.p_prev, att.context, self.gate)
            p_copy = plan(att.alpha)
            p_final = mixture(p_gen, p_alph, p_copy)
        return _State(hidden, p_gen), (p_final, p_alph, p_copy, p_gen, att.alpha)


def _source_batch(sources: Sequence[str], alphabet: Alphabet):
    seqs = [[alphabet.sos] + alphabet.encode(s) + [alphabet.eos] for s in sources]
    return pad_batch(seqs, pad=alphabet.eos)


def _collect(records, b: int, n: int, tx: int):
    p_final, p_alph, p_copy, p_gen, alpha = (np.stack([r[k][b] for r in records[:n]]) for k in range(5))
    return alpha[:, :tx], p_gen[:, 0], p_alph, p_copy, p_final


@dataclass
class ForwardResult:
    loss: Tensor
    network: Network
    traces: list[DecoderTrace]
    p_gen_mean: float


def teacher_forced(
    params: Mapping[str, np.ndarray],
    config: ModelConfig,
    roles: RoleAssignment,
    sources: Sequence[str],
    targets: Sequence[str],
    alphabet: Alphabet = ALPHABET,
    trainable: bool = False,
    record: bool = False,
) -> ForwardResult:
    """Teacher-forced negative log-likelihood over a batch.

    The loss averages per-sequence losses, each a mean (or sum, per
    ``config.loss_reduction``) over target characters including the end
    symbol.
    """
    if len(sources) != len(targets) or not sources:
        raise ValueError("need equally many, non-zero sources and targets")
    _check_chars(sources, alphabet)
    _check_chars(targets, alphabet)
    net = Network(params, config, trainable=trainable)
    src, src_len = _source_batch(sources, alphabet)
    tgt_seqs = [alphabet.encode(t) for t in targets]
    tin, _ = pad_batch([[alphabet.sos] + t for t in tgt_seqs], pad=alphabet.eos)
    tout, tlen = pad_batch([t + [alphabet.eos] for t in tgt_seqs], pad=alphabet.eos)
    attention, plan, state = net.encode(src, src_len, roles)
    losses, records, gates = [], [], []
    for i in range(tin.shape[1]):
        state, out = net.step(state, tin[:, i], attention, plan, roles)
        losses.append(T.nll(out[0], tout[:, i]))
        gates.append(out[3].data[:, 0])
        if record:
            records.append(tuple(o.data for o in out))
    mask = (np.arange(tout.shape[1])[None, :] < tlen[:, None]).astype(net.dtype)
    weights = mask / tlen[:, None] if config.loss_reduction == "mean" else mask
    weights = weights / len(sources)
    loss = (T.stack(losses, axis=1) * Tensor(weights.astype(net.dtype))).sum()
    p_gen_mean = float((np.stack(gates, axis=1) * mask).sum() / mask.sum())
    traces = []
    if record:
        for b in range(len(sources)):
            n = int(tlen[b])
            alpha, pg, pa, pc, pf = _collect(records, b, n, int(src_len[b]))
            traces.append(DecoderTrace(sources[b], alpha, pg, pa, pc, pf, tout[b, :n].copy(), True))
    return ForwardResult(loss, net, traces, p_gen_mean)


def run_teacher_forced(params, roles: RoleAssignment, source: str, target: str, config: ModelConfig, alphabet: Alphabet = ALPHABET):
    """Loss (float) and trace for one (source, target) pair."""
    with T.no_grad():
        res = teacher_forced(params, config, roles, [source], [target], alphabet, record=True)
    return float(res.loss.data), res.traces[0]


def loss_and_grads(params, config: ModelConfig, roles: RoleAssignment, sources, targets, alphabet: Alphabet = ALPHABET):
    """(loss, gradients per parameter, mean gate value) for one batch."""
    res = teacher_forced(params, config, roles, sources, targets, alphabet, trainable=True)
    grads = T.grad(res.loss, res.network.leaves)
    return float(res.loss.data), grads, res.p_gen_mean


def greedy_decode_batch(
    params: Mapping[str, np.ndarray],
    config: ModelConfig,
    roles: RoleAssignment,
    sources: Sequence[str],
    max_len: int,
    alphabet: Alphabet = ALPHABET,
    record: bool = True,
) -> list[tuple[str, DecoderTrace | None]]:
    """Argmax decoding; stops at the end symbol or after ``max_len`` steps."""
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    if not sources:
        return []
    with T.no_grad():
        net = Network(params, config)
        src, src_len = _source_batch(sources, alphabet)
        attention, plan, state = net.encode(src, src_len, roles)
        B = len(sources)
        y = np.full(B, alphabet.sos, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        ends = np.full(B, max_len, dtype=np.int64)
        emitted, records = [], []
        for i in range(max_len):
            state, out = net.step(state, y, attention, plan, roles)
            y = np.argmax(out[0].data, axis=-1)
            emitted.append(y)
            if record:
                records.append(tuple(o.data for o in out))
            newly = (y == alphabet.eos) & ~done
            ends[newly] = i + 1
            done |= newly
            if done.all():
                break
    emitted = np.stack(emitted, axis=1)
    results = []
    for b in range(B):
        n = int(ends[b])
        seq = emitted[b, :n]
        text = alphabet.decode(seq)
        trace = None
        if record:
            alpha, pg, pa, pc, pf = _collect(records, b, n, int(src_len[b]))
            trace = DecoderTrace(sources[b], alpha, pg, pa, pc, pf, seq.copy(), bool(done[b]))
        results.append((text, trace))
    return results


def greedy_decode(params, roles: RoleAssignment, source: str, max_len: int, config: ModelConfig, alphabet: Alphabet = ALPHABET):
    return greedy_decode_batch(params, config, roles, [source], max_len, alphabet)[0]


class EncodingError(ValueError):
    pass


def _check_chars(texts: Sequence[str], alphabet: Alphabet) -> None:
    for t in texts:
        for ch in t:
            if ch in alphabet:
                continue
            alt = transliterate(ch)
            if alt == ch or not all(c in alphabet for c in alt):
                raise EncodingError(f"character {ch!r} is outside the alphabet")


def sources_for_trace(trace: DecoderTrace, alphabet: Alphabet = ALPHABET) -> list[str]:
    """Column labels of a trace's attention matrix (control symbols included)."""
    return [alphabet.SOS] + list(alphabet.decode(alphabet.encode(trace.source), strip_control=False)) + [alphabet.EOS]


def with_flags(config: ModelConfig, **flags) -> ModelConfig:
    return replace(config, **flags)
