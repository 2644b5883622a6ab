"""Two-phase switching-GRU training with teacher forcing, Adam and clipping."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import DatasetInstance
from .metrics import MetricReport, corpus_bleu, score_corpus
from .model import (
    ModelConfig,
    ParameterStore,
    assign_roles,
    greedy_decode_batch,
    init_params,
    loss_and_grads,
)

log = logging.getLogger(__name__)

VARIANTS = {
    "eda": {"copy": False, "switch": False},
    "eda_c": {"copy": True, "switch": False},
    "eda_s": {"copy": False, "switch": True},
    "eda_cs": {"copy": True, "switch": True},
}


class ConfigurationError(ValueError):
    pass


@dataclass
class TrainConfig:
    max_epochs: int = 20
    batch_size: int = 1
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    eval_every: int = 0  # optimisation steps between validations; 0 means once per epoch
    patience: int = 5
    copy: bool = True
    switch: bool = True
    shift: bool = True
    seed: int = 0
    max_decode_len: int = 300
    eval_batch_size: int = 64
    max_iterations: int | None = None
    target_score: float | None = None  # stop as soon as a validation score reaches this

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigurationError("patience must be at least 1")
        if not (self.learning_rate > 0 and self.clip_norm > 0):
            raise ConfigurationError("learning rate and clip norm must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.eval_every < 0:
            raise ConfigurationError("batch size and epoch count must be positive")

    def model_config(self, base: ModelConfig) -> ModelConfig:
        return replace(base, copy=self.copy, shift=self.shift)

    def variant(self, name: str) -> TrainConfig:
        try:
            return replace(self, **VARIANTS[name])
        except KeyError:
            raise ConfigurationError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None


@dataclass
class IterationReport:
    l_forward: float
    l_backward: float | None
    grad_norm_forward: float
    grad_norm_backward: float | None
    p_gen_mean: float
    skipped_backward: int = 0


def _update(params, grads, opt: T.AdamState, clip_norm: float) -> float:
    norm = T.global_norm(grads)
    if not math.isfinite(norm):
        raise T.NumericError("non-finite gradient norm")
    T.adam_step(params, T.clip_global_norm(grads, clip_norm), opt)
    return norm


def reconstruction_len(texts: Sequence[str], cap: int) -> int:
    return min(cap, int(1.5 * max(len(t) for t in texts)) + 10)


def switching_iteration(
    batch: Sequence[tuple[str, str]],
    params: ParameterStore,
    opt: T.AdamState,
    model_config: ModelConfig,
    config: TrainConfig,
) -> IterationReport:
    """One learning iteration on a batch of (MR, sentence) pairs.

    The forward phase trains table -> text.  When switching is on, the
    current table -> text model first produces sentences greedily; after the
    forward update the GRUs swap roles and the model is trained to rebuild
    each MR from its generated sentence.
    """
    sources = [x for x, _ in batch]
    targets = [y for _, y in batch]
    fwd = assign_roles("forward")
    generated = None
    if config.switch:
        # generated from the parameters the forward loss is evaluated at; no graph is kept
        decoded = greedy_decode_batch(
            params, model_config, fwd, sources, reconstruction_len(targets, config.max_decode_len), record=False
        )
        generated = [text for text, _ in decoded]
    l_f, grads, p_mean = loss_and_grads(params, model_config, fwd, sources, targets)
    n_f = _update(params, grads, opt, config.clip_norm)
    if not config.switch:
        return IterationReport(l_f, None, n_f, None, p_mean)
    keep = [i for i, g in enumerate(generated) if g]
    skipped = len(batch) - len(keep)
    if not keep:
        return IterationReport(l_f, None, n_f, None, p_mean, skipped)
    l_b, grads, _ = loss_and_grads(
        params, model_config, assign_roles("backward"), [generated[i] for i in keep], [sources[i] for i in keep]
    )
    n_b = _update(params, grads, opt, config.clip_norm)
    return IterationReport(l_f, l_b, n_f, n_b, p_mean, skipped)


class EarlyStopping:
    """Tracks the best score; signals a stop after ``patience`` evaluations without improvement."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigurationError("patience must be at least 1")
        self.patience = patience
        self.best: float | None = None
        self.best_index: int | None = None
        self.count = 0
        self.bad = 0

    def update(self, score: float) -> bool:
        self.count += 1
        if self.best is None or score > self.best:
            self.best = score
            self.best_index = self.count
            self.bad = 0
            return True
        self.bad += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad >= self.patience


def decode_all(
    params: ParameterStore,
    model_config: ModelConfig,
    sources: Sequence[str],
    max_len: int = 300,
    batch_size: int = 64,
    phase: str = "forward",
) -> list[str]:
    """Greedy outputs in input order; batches are formed by length to limit padding."""
    roles = assign_roles(phase)
    order = sorted(range(len(sources)), key=lambda i: (len(sources[i]), i))
    out: list[str] = [""] * len(sources)
    for k in range(0, len(order), batch_size):
        idx = order[k : k + batch_size]
        res = greedy_decode_batch(params, model_config, roles, [sources[i] for i in idx], max_len, record=False)
        for i, (text, _) in zip(idx, res):
            out[i] = text
    return out


def reconstruct(
    params: ParameterStore, model_config: ModelConfig, sources: Sequence[str], max_len: int = 300, batch_size: int = 64
) -> list[str]:
    """G(F(x)): generate a sentence from each MR, then rebuild the MR from that sentence."""
    sentences = decode_all(params, model_config, sources, max_len, batch_size, phase="forward")
    return decode_all(params, model_config, sentences, max_len, batch_size, phase="backward")


@dataclass
class TrainResult:
    params: ParameterStore
    best_bleu: float
    best_eval: int
    log: list[dict]
    optimizer: T.AdamState
    iterations: int
    last_params: ParameterStore = field(repr=False, default_factory=dict)


def _batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def train(
    train_pairs: Sequence[tuple[str, str]],
    validation: Sequence[DatasetInstance],
    params: ParameterStore,
    model_config: ModelConfig,
    config: TrainConfig,
    optimizer: T.AdamState | None = None,
    start_iteration: int = 0,
    sink: Callable[[dict], None] | None = None,
    evaluator: Callable[[ParameterStore, ModelConfig], float] | None = None,
) -> TrainResult:
    """Train with validation-BLEU early stopping and keep the best checkpoint."""
    if not validation:
        raise ConfigurationError("validation set is empty")
    if not train_pairs:
        raise ConfigurationError("training set is empty")
    mcfg = config.model_config(model_config)
    opt = optimizer or T.AdamState(lr=config.learning_rate)
    val_sources = [inst.source for inst in validation]
    val_refs = [inst.references for inst in validation]

    def validate(p) -> float:
        if evaluator is not None:
            return evaluator(p, mcfg)
        hyps = decode_all(p, mcfg, val_sources, config.max_decode_len, config.eval_batch_size)
        return corpus_bleu(hyps, val_refs)

    stopper = EarlyStopping(config.patience)
    history: list[dict] = []
    best_params = {k: v.copy() for k, v in params.items()}
    it = start_iteration
    window: list[IterationReport] = []

    def evaluate(epoch: int) -> None:
        nonlocal best_params
        score = validate(params)
        lb = [r.l_backward for r in window if r.l_backward is not None]
        rec = {
            "iteration": it,
            "epoch": epoch,
            "l_forward": float(np.mean([r.l_forward for r in window])) if window else None,
            "l_backward": float(np.mean(lb)) if lb else None,
            "bleu": score,
            "p_gen_mean": float(np.mean([r.p_gen_mean for r in window])) if window else None,
        }
        history.append(rec)
        if sink is not None:
            sink(rec)
        log.info("iteration %d epoch %d bleu %.4f", it, epoch, score)
        if stopper.update(score):
            best_params = {k: v.copy() for k, v in params.items()}
        window.clear()

    def reached() -> bool:
        return config.target_score is not None and history[-1]["bleu"] >= config.target_score

    done = False
    for epoch in range(config.max_epochs):
        for idx in _batches(len(train_pairs), config.batch_size, config.seed, epoch):
            batch = [train_pairs[i] for i in idx]
            window.append(switching_iteration(batch, params, opt, mcfg, config))
            it += 1
            if config.eval_every and it % config.eval_every == 0:
                evaluate(epoch)
                if stopper.should_stop or reached():
                    done = True
                    break
            if config.max_iterations is not None and it - start_iteration >= config.max_iterations:
                done = True
                break
        if done:
            break
        if not config.eval_every:
            evaluate(epoch)
            if stopper.should_stop or reached():
                break
    if window or stopper.best is None:
        evaluate(epoch)
    return TrainResult(
        best_params, stopper.best, stopper.best_index, history, opt, it, {k: v.copy() for k, v in params.items()}
    )


def write_log(records: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def evaluate_instances(
    params: ParameterStore, model_config: ModelConfig, instances: Sequence[DatasetInstance], max_len: int = 300, batch_size: int = 64
) -> tuple[MetricReport, list[str]]:
    hyps = decode_all(params, model_config, [i.source for i in instances], max_len, batch_size)
    return score_corpus(hyps, [i.references for i in instances]), hyps


@dataclass
class AblationRow:
    variant: str
    report: MetricReport
    result: TrainResult = field(repr=False)


def ablation_suite(
    train_pairs: Sequence[tuple[str, str]],
    validation: Sequence[DatasetInstance],
    test: Sequence[DatasetInstance],
    model_config: ModelConfig,
    config: TrainConfig,
    variants: Sequence[str] = tuple(VARIANTS),
) -> list[AblationRow]:
    """Train each variant from the same initialisation and budget; score on ``test``."""
    rows = []
    for name in variants:
        cfg = config.variant(name)
        params = init_params(cfg.model_config(model_config), seed=config.seed)
        result = train(train_pairs, validation, params, model_config, cfg)
        report, _ = evaluate_instances(result.params, cfg.model_config(model_config), test, cfg.max_decode_len, cfg.eval_batch_size)
        rows.append(AblationRow(name, report, result))
    return rows


def format_ablation(rows: Sequence[AblationRow]) -> str:
    metrics = list(rows[0].report.as_dict()) if rows else []
    lines = ["variant\t" + "\t".join(metrics)]
    for row in rows:
        vals = row.report.as_dict()
        lines.append(row.variant + "\t" + "\t".join(f"{vals[m]:.4f}" for m in metrics))
    return "\n".join(lines) + "\n"


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
