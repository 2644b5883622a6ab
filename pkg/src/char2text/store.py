"""Single-file containers for checkpoints and decoder traces.

Layout: 8-byte magic, u32 format version, u64 header length, a UTF-8 JSON
header (sorted keys) describing each array, the raw little-endian array
bytes in header order, and a trailing SHA-256 of everything before it.
Nothing time- or host-dependent is written, so equal inputs give equal bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import tensor as T
from .data import ALPHABET, Alphabet
from .model import DecoderTrace, ModelConfig, ParameterStore, check_params

FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"C2TCKPT\x00"
TRACE_MAGIC = b"C2TTRACE"
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


class CorruptArtifactError(ValueError):
    """File is truncated, of the wrong kind, or fails its digest."""


def _canonical(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    return np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<")))


def dump_container(path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write and return the hex digest."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = _canonical(arrays[name])
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(magic, FORMAT_VERSION, len(header)) + header + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)
    return digest.hex()


def load_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size + _DIGEST:
        raise CorruptArtifactError(f"{path}: file too short")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    got_magic, version, hlen = _PREFIX.unpack_from(body)
    if got_magic != magic:
        raise CorruptArtifactError(f"{path}: wrong file kind")
    if version != FORMAT_VERSION:
        raise CorruptArtifactError(f"{path}: unsupported format version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise CorruptArtifactError(f"{path}: integrity digest mismatch")
    start = _PREFIX.size
    try:
        header = json.loads(body[start : start + hlen].decode("utf-8"))
        base = start + hlen
        arrays = {}
        for e in header["arrays"]:
            lo = base + e["offset"]
            raw = body[lo : lo + e["nbytes"]]
            if len(raw) != e["nbytes"]:
                raise CorruptArtifactError(f"{path}: array {e['name']} truncated")
            arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorruptArtifactError):
            raise
        raise CorruptArtifactError(f"{path}: malformed header ({exc})") from None
    return header["meta"], arrays


def file_digest(path) -> str:
    return Path(path).read_bytes()[-_DIGEST:].hex()


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    params: ParameterStore
    model_config: ModelConfig
    alphabet: list[str] = field(default_factory=ALPHABET.snapshot)
    optimizer: T.AdamState | None = None
    iteration: int = 0
    run_config: dict[str, Any] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> str:
    arrays = {f"param/{k}": v for k, v in ckpt.params.items()}
    opt_meta = None
    if ckpt.optimizer is not None:
        o = ckpt.optimizer
        opt_meta = {"lr": o.lr, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps, "t": o.t}
        arrays.update({f"adam_m/{k}": v for k, v in o.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in o.v.items()})
    meta = {
        "alphabet": ckpt.alphabet,
        "model": asdict(ckpt.model_config),
        "optimizer": opt_meta,
        "iteration": ckpt.iteration,
        "run_config": ckpt.run_config,
        "extra": ckpt.extra,
    }
    return dump_container(path, CHECKPOINT_MAGIC, meta, arrays)


def load_checkpoint(path) -> Checkpoint:
    meta, arrays = load_container(path, CHECKPOINT_MAGIC)
    try:
        mcfg = ModelConfig(**meta["model"])
        params = {k[len("param/") :]: v for k, v in arrays.items() if k.startswith("param/")}
        opt = None
        if meta["optimizer"] is not None:
            opt = T.AdamState(**meta["optimizer"])
            opt.m = {k[len("adam_m/") :]: v for k, v in arrays.items() if k.startswith("adam_m/")}
            opt.v = {k[len("adam_v/") :]: v for k, v in arrays.items() if k.startswith("adam_v/")}
        check_params(params, mcfg)
        ckpt = Checkpoint(params, mcfg, meta["alphabet"], opt, meta["iteration"], meta["run_config"], meta.get("extra", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptArtifactError(f"{path}: inconsistent checkpoint ({exc})") from None
    if ckpt.alphabet != ALPHABET.snapshot():
        raise CorruptArtifactError(f"{path}: checkpoint alphabet differs from this build's alphabet")
    return ckpt


# ---------------------------------------------------------------- traces

_TRACE_FIELDS = ("attention", "p_gen", "p_alph", "p_copy", "p_final", "emitted")


def save_traces(path, traces: list[DecoderTrace]) -> str:
    arrays = {}
    items = []
    for k, tr in enumerate(traces):
        for f in _TRACE_FIELDS:
            arrays[f"{k:06d}/{f}"] = getattr(tr, f)
        items.append({"source": tr.source, "terminated": bool(tr.terminated)})
    return dump_container(path, TRACE_MAGIC, {"traces": items}, arrays)


def load_traces(path) -> list[DecoderTrace]:
    meta, arrays = load_container(path, TRACE_MAGIC)
    out = []
    try:
        for k, item in enumerate(meta["traces"]):
            fields = {f: arrays[f"{k:06d}/{f}"] for f in _TRACE_FIELDS}
            tr = DecoderTrace(item["source"], terminated=item["terminated"], **fields)
            ty = tr.length
            if tr.attention.ndim != 2 or tr.attention.shape[0] != ty or tr.p_gen.shape != (ty,):
                raise ValueError(f"trace {k} has inconsistent shapes")
            out.append(tr)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptArtifactError(f"{path}: inconsistent trace file ({exc})") from None
    return out


def alphabet_from_snapshot(symbols: list[str]) -> Alphabet:
    if symbols != ALPHABET.snapshot():
        raise CorruptArtifactError("unsupported alphabet snapshot")
    return ALPHABET
