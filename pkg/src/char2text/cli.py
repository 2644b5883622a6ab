"""Command-line entry point: ``char2text <command> ...``.

Commands: prepare-data, train, generate, evaluate, inspect.  Exit status is
0 on success, 2 for bad configuration or input, 3 for misaligned evaluation
files and 4 for corrupt checkpoints or traces.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from . import tensor as T
from .data import (
    SPLITS,
    DatasetError,
    ParseError,
    ValuePools,
    build_e2eplus,
    corpus_stats,
    flatten,
    load_dataset,
    parse_mr,
    scan_disjointness,
    write_e2e_csv,
)
from .metrics import AlignmentError, score_all
from .model import EncodingError, ModelConfig, assign_roles, greedy_decode_batch, init_params
from .store import Checkpoint, CorruptArtifactError, load_checkpoint, load_traces, save_checkpoint, save_traces
from .training import ConfigurationError, TrainConfig, VARIANTS, ablation_suite, format_ablation, train, write_log

log = logging.getLogger("char2text")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ALIGNMENT = 3
EXIT_CORRUPT = 4


class UsageError(Exception):
    """Bad configuration or input; maps to exit status 2."""


# ---------------------------------------------------------------- run configuration


@dataclass
class RunConfig:
    embedding_size: int = 32
    hidden_size: int = 128
    alignment_size: int | None = None
    num_layers: int = 1
    dtype: str = "float32"
    loss_reduction: str = "mean"
    max_epochs: int = 20
    batch_size: int = 1
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    eval_every: int = 0
    patience: int = 5
    max_decode_len: int = 300
    eval_batch_size: int = 64
    max_iterations: int | None = None
    target_score: float | None = None
    variant: str = "eda_cs"
    shift: bool = True
    seed: int = 0
    train: str | None = None
    validation: str | None = None
    test: str | None = None
    format: str = "e2e-csv"
    synthetic: str | None = None  # "copy" or "restaurant" in place of dataset paths
    synthetic_size: int = 5000
    output_dir: str = "run"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}")
        if self.synthetic not in (None, "copy", "restaurant"):
            raise UsageError(f"unknown synthetic corpus {self.synthetic!r}")
        if self.synthetic is None and not (self.train and self.validation):
            raise UsageError("training needs 'train' and 'validation' paths or a 'synthetic' corpus")

    def model_config(self) -> ModelConfig:
        v = VARIANTS[self.variant]
        return ModelConfig(
            embedding_size=self.embedding_size,
            hidden_size=self.hidden_size,
            alignment_size=self.alignment_size,
            num_layers=self.num_layers,
            copy=v["copy"],
            shift=self.shift,
            loss_reduction=self.loss_reduction,
            dtype=self.dtype,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            clip_norm=self.clip_norm,
            eval_every=self.eval_every,
            patience=self.patience,
            shift=self.shift,
            seed=self.seed,
            max_decode_len=self.max_decode_len,
            eval_batch_size=self.eval_batch_size,
            max_iterations=self.max_iterations,
            target_score=self.target_score,
            **VARIANTS[self.variant],
        )


_RUN_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, value: Any) -> Any:
    """Convert command-line strings to the field's type; file values are checked, not converted."""
    kind = _RUN_FIELDS[name].type
    if value is None:
        return None
    if isinstance(value, str) and not kind.startswith("str"):
        if value.lower() in ("none", "null"):
            return None
        try:
            if kind.startswith("bool"):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return value.lower() in ("true", "1", "yes")
            if kind.startswith("int"):
                return int(value)
            if kind.startswith("float"):
                return float(value)
        except ValueError:
            raise UsageError(f"{name}: cannot parse {value!r} as {kind}") from None
    if kind.startswith("bool") and not isinstance(value, bool):
        raise UsageError(f"{name}: expected a boolean, got {value!r}")
    if kind.startswith("int") and (isinstance(value, bool) or not isinstance(value, int)):
        raise UsageError(f"{name}: expected an integer, got {value!r}")
    if kind.startswith("float") and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise UsageError(f"{name}: expected a number, got {value!r}")
    if kind.startswith("str") and not isinstance(value, str):
        raise UsageError(f"{name}: expected a string, got {value!r}")
    return float(value) if kind.startswith("float") else value


def resolve_run_config(file_values: dict | None, overrides: dict) -> RunConfig:
    """Defaults, then the config file, then command-line overrides."""
    merged: dict[str, Any] = {}
    for source in (file_values or {}, overrides):
        unknown = sorted(set(source) - set(_RUN_FIELDS))
        if unknown:
            raise UsageError(f"unknown configuration keys: {', '.join(unknown)}")
        for k, v in source.items():
            merged[k] = _coerce(k, v)
    try:
        return RunConfig(**merged)
    except (ConfigurationError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def read_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top level must be an object")
    return data


def _parse_set(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip().replace("-", "_")] = value
    return out


# ---------------------------------------------------------------- commands


def _load_split(path, split: str, fmt: str):
    try:
        return load_dataset(path, fmt, split)
    except FileNotFoundError:
        raise UsageError(f"dataset file not found: {path}") from None


def cmd_prepare_data(args) -> int:
    splits = {s: getattr(args, s) for s in SPLITS if getattr(args, s)}
    if not splits:
        raise UsageError("give at least one of --train, --validation, --test")
    dataset = []
    for split, path in splits.items():
        dataset.extend(_load_split(path, split, args.format))
    if args.stats:
        print(json.dumps(corpus_stats(dataset).as_dict(), indent=2, sort_keys=True))
    if args.pools is None:
        if args.out is not None:
            raise UsageError("--out needs --pools")
        return EXIT_OK
    try:
        pools = ValuePools.from_directory(args.pools)
    except FileNotFoundError as exc:
        raise UsageError(f"missing pool file: {exc.filename or exc}") from None
    try:
        built, report = build_e2eplus(dataset, pools, seed=args.seed)
    except DatasetError as exc:
        raise UsageError(f"pool invariant violated: {exc}") from None
    problems = scan_disjointness(built, pools=pools)
    if problems:
        raise UsageError("built corpus fails the disjointness scan: " + "; ".join(problems[:5]))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    for split in splits:
        write_e2e_csv([i for i in built if i.split == split], out / f"e2eplus.{split}.csv")
    (out / "e2eplus.build.json").write_text(report.to_json() + "\n", encoding="utf-8")
    if args.stats:
        print(json.dumps(corpus_stats(built).as_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _datasets(cfg: RunConfig):
    if cfg.synthetic == "copy":
        from .synthetic import copy_task

        task = copy_task(cfg.synthetic_size, seed=cfg.seed)
        return task.train, task.validation, task.test
    if cfg.synthetic == "restaurant":
        from .synthetic import restaurant_corpus

        c = restaurant_corpus(cfg.synthetic_size, seed=cfg.seed)
        return c["train"], c["validation"], c["test"]
    tr = _load_split(cfg.train, "train", cfg.format)
    va = _load_split(cfg.validation, "validation", cfg.format)
    te = _load_split(cfg.test, "test", cfg.format) if cfg.test else []
    return tr, va, te


def _cli_overrides(args) -> dict:
    out = {}
    for name in ("variant", "seed", "max_epochs", "batch_size", "learning_rate", "hidden_size",
                 "embedding_size", "max_iterations", "eval_every", "patience", "train", "validation",
                 "test", "synthetic", "output_dir"):
        value = getattr(args, name, None)
        if value is not None:
            out[name] = value
    out.update(_parse_set(args.set or []))
    return out


def cmd_train(args) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    cfg = resolve_run_config(file_values, _cli_overrides(args))
    mcfg = cfg.model_config()
    tcfg = cfg.train_config()
    train_set, val_set, test_set = _datasets(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo = asdict(cfg)

    if args.ablation:
        if not test_set:
            raise UsageError("--ablation needs a test split")
        rows = ablation_suite(flatten(train_set), val_set, test_set, mcfg, tcfg)
        table = format_ablation(rows)
        (out / "ablation.tsv").write_text(table, encoding="utf-8")
        print(table, end="")
        return EXIT_OK

    start = 0
    optimizer = None
    if args.resume:
        prev = load_checkpoint(args.resume)
        if prev.model_config != mcfg:
            raise UsageError("resumed checkpoint has different model dimensions or flags")
        params, optimizer, start = prev.params, prev.optimizer, prev.iteration
    else:
        params = init_params(mcfg, seed=cfg.seed)

    records: list[dict] = []
    result = train(flatten(train_set), val_set, params, mcfg, tcfg, optimizer=optimizer, start_iteration=start, sink=records.append)
    save_checkpoint(out / "best.ckpt", Checkpoint(result.params, mcfg, iteration=result.iterations, run_config=echo,
                                                  extra={"best_bleu": result.best_bleu, "best_eval": result.best_eval}))
    save_checkpoint(out / "last.ckpt", Checkpoint(result.last_params, mcfg, optimizer=result.optimizer,
                                                  iteration=result.iterations, run_config=echo))
    log_path = out / "train_log.jsonl"
    if args.resume and log_path.exists():
        with open(log_path, "a", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    else:
        write_log(records, log_path)
    print(f"best validation bleu {result.best_bleu:.4f} at evaluation {result.best_eval}; {result.iterations} iterations")
    return EXIT_OK


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    try:
        lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise UsageError(f"input file not found: {args.input}") from None
    sources: list[str | None] = []
    errors = []
    for n, line in enumerate(lines, 1):
        try:
            sources.append(str(parse_mr(line)))
        except ParseError as exc:
            sources.append(None)
            errors.append({"line": n, "error": str(exc)})
    good = [i for i, s in enumerate(sources) if s is not None]
    outputs = [""] * len(sources)
    traces = []
    roles = assign_roles("forward")
    for k in range(0, len(good), args.batch_size):
        idx = good[k : k + args.batch_size]
        try:
            res = greedy_decode_batch(ckpt.params, ckpt.model_config, roles, [sources[i] for i in idx], args.max_len, record=bool(args.trace))
        except EncodingError as exc:
            raise UsageError(str(exc)) from None
        for i, (text, tr) in zip(idx, res):
            outputs[i] = text
            if tr is not None:
                traces.append(tr)
    with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(o + "\n" for o in outputs)
    if args.trace:
        save_traces(args.trace, traces)
    for e in errors:
        print(json.dumps(e, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        report = score_all(args.hypotheses, args.references)
    except FileNotFoundError as exc:
        raise UsageError(f"file not found: {exc.filename}") from None
    text = report.format()
    print(text, end="")
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .viz import render

    try:
        traces = load_traces(args.trace_file)
    except FileNotFoundError:
        raise UsageError(f"trace file not found: {args.trace_file}") from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats = ["pgm", "svg"] if args.format == "both" else [args.format]
    for k, tr in enumerate(traces):
        if tr.length == 0:
            log.warning("trace %d is empty; skipped", k)
            continue
        for fmt in formats:
            path = render(tr, out / f"trace_{k:04d}.{fmt}", fmt)
            print(path)
    return EXIT_OK


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="char2text", description="Character-level data-to-text generation with copying.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pd = sub.add_parser("prepare-data", help="corpus statistics and E2E+ construction")
    for s in SPLITS:
        pd.add_argument(f"--{s}", metavar="PATH")
    pd.add_argument("--format", default="e2e-csv", choices=["e2e-csv", "hotel-restaurant-json"])
    pd.add_argument("--pools", metavar="DIR", help="directory of <slot>.<split>.txt value lists")
    pd.add_argument("--out", metavar="DIR")
    pd.add_argument("--seed", type=int, default=0)
    pd.add_argument("--stats", action="store_true")
    pd.set_defaults(func=cmd_prepare_data)

    tr = sub.add_parser("train", help="train one variant or the four-variant ablation")
    tr.add_argument("--config", metavar="JSON")
    tr.add_argument("--variant", choices=sorted(VARIANTS))
    tr.add_argument("--ablation", action="store_true")
    tr.add_argument("--resume", metavar="CKPT")
    tr.add_argument("--train")
    tr.add_argument("--validation")
    tr.add_argument("--test")
    tr.add_argument("--synthetic", choices=["copy", "restaurant"])
    tr.add_argument("--output-dir")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--max-epochs", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--learning-rate", type=float)
    tr.add_argument("--hidden-size", type=int)
    tr.add_argument("--embedding-size", type=int)
    tr.add_argument("--max-iterations", type=int)
    tr.add_argument("--eval-every", type=int)
    tr.add_argument("--patience", type=int)
    tr.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any configuration key")
    tr.set_defaults(func=cmd_train)

    ge = sub.add_parser("generate", help="greedy generation from one MR per line")
    ge.add_argument("--checkpoint", required=True)
    ge.add_argument("--input", required=True)
    ge.add_argument("--output", required=True)
    ge.add_argument("--trace", metavar="PATH")
    ge.add_argument("--max-len", type=int, default=300)
    ge.add_argument("--batch-size", type=int, default=64)
    ge.set_defaults(func=cmd_generate)

    ev = sub.add_parser("evaluate", help="BLEU, NIST, METEOR, ROUGE-L and CIDEr")
    ev.add_argument("--hypotheses", required=True)
    ev.add_argument("--references", required=True)
    ev.add_argument("--output")
    ev.set_defaults(func=cmd_evaluate)

    ins = sub.add_parser("inspect", help="render attention and copy-gate images from a trace file")
    ins.add_argument("trace_file")
    ins.add_argument("--out-dir", default=".")
    ins.add_argument("--format", choices=["pgm", "svg", "both"], default="pgm")
    ins.set_defaults(func=cmd_inspect)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, DatasetError, ParseError, EncodingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AlignmentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALIGNMENT
    except CorruptArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except T.NumericError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
