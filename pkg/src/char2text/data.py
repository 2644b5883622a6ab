"""Alphabet, meaning representations, corpus loading and the E2E+ builder."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import random
import re
import unicodedata
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPLITS = ("train", "validation", "test")


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class DatasetError(ValueError):
    """Malformed corpus file or inconsistent dataset configuration."""


# ---------------------------------------------------------------- alphabet

_TRANSLIT = {
    "ß": "ss", "æ": "ae", "Æ": "AE", "œ": "oe", "Œ": "OE", "ø": "o", "Ø": "O",
    "ł": "l", "Ł": "L", "đ": "d", "Đ": "D", "ð": "d", "þ": "th", "Þ": "Th", "ı": "i",
    "‘": "'", "’": "'", "‚": "'", "“": '"', "”": '"', "„": '"', "′": "'", "″": '"',
    "–": "-", "\u2014": "-", "‐": "-", "‑": "-", "−": "-", "…": "...", " ": " ",
    "£": "GBP", "€": "EUR", "\t": " ", "\n": " ", "\r": " ",
}


def transliterate(text: str) -> str:
    """Best-effort ASCII rendering of ``text``; anything left over stays as is."""
    out = []
    for ch in text:
        if 32 <= ord(ch) < 127:
            out.append(ch)
            continue
        if ch in _TRANSLIT:
            out.append(_TRANSLIT[ch])
            continue
        decomposed = unicodedata.normalize("NFKD", ch)
        stripped = "".join(c for c in decomposed if not unicodedata.combining(c))
        out.append(stripped if stripped and all(32 <= ord(c) < 127 for c in stripped) else ch)
    return "".join(out)


class Alphabet:
    """Printable ASCII plus start, end and unknown control symbols.

    ``chars`` replaces the printable block, e.g. for tiny test alphabets.
    """

    SOS = "\x02"
    EOS = "\x03"
    UNK = "\x1a"

    def __init__(self, chars: str | None = None):
        base = [chr(c) for c in range(32, 127)] if chars is None else list(dict.fromkeys(chars))
        self.symbols: list[str] = base + [self.SOS, self.EOS, self.UNK]
        self.index = {s: i for i, s in enumerate(self.symbols)}
        self.unk = self.index[self.UNK]
        self.sos = self.index[self.SOS]
        self.eos = self.index[self.EOS]

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Alphabet) and self.symbols == other.symbols

    def __contains__(self, ch: str) -> bool:
        return ch in self.index

    def encode(self, text: str) -> list[int]:
        idx = self.index
        if all(c in idx for c in text):
            return [idx[c] for c in text]
        text = transliterate(text)
        return [idx.get(c, self.unk) for c in text]

    def decode(self, indices: Iterable[int], strip_control: bool = True) -> str:
        chars = [self.symbols[int(i)] for i in indices]
        if strip_control:
            chars = [c for c in chars if c not in (self.SOS, self.EOS)]
        return "".join(chars)

    def snapshot(self) -> list[str]:
        return list(self.symbols)


ALPHABET = Alphabet()


def encode_text(text: str, alphabet: Alphabet = ALPHABET) -> list[int]:
    return alphabet.encode(text)


# ---------------------------------------------------------------- meaning representations


@dataclass(frozen=True)
class Slot:
    key: str
    value: str


@dataclass(frozen=True)
class MeaningRepresentation:
    slots: tuple[Slot, ...]

    def __str__(self) -> str:
        return ", ".join(f"{s.key}[{s.value}]" for s in self.slots)

    serialize = __str__

    def get(self, key: str) -> str | None:
        for s in self.slots:
            if s.key == key:
                return s.value
        return None

    def keys(self) -> list[str]:
        return [s.key for s in self.slots]

    def replace(self, key: str, value: str) -> MeaningRepresentation:
        return MeaningRepresentation(tuple(Slot(s.key, value) if s.key == key else s for s in self.slots))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> MeaningRepresentation:
        return cls(tuple(Slot(k, v) for k, v in pairs))


def parse_mr(text: str) -> MeaningRepresentation:
    """Parse ``key1[value1], key2[value2], ...``.

    Values may contain nested balanced brackets.  Duplicate keys are kept in
    order.
    """
    slots = []
    i, n = 0, len(text)
    while True:
        while i < n and text[i] in " \t":
            i += 1
        if i >= n:
            if not slots:
                raise ParseError("empty meaning representation", i)
            break
        open_at = text.find("[", i)
        if open_at < 0:
            raise ParseError("expected '['", n)
        key = text[i:open_at].strip()
        if not key:
            raise ParseError("empty slot key", i)
        if "]" in key or "," in key:
            raise ParseError("unbalanced ']' in slot key", i + key.index("]") if "]" in key else i + key.index(","))
        depth, j = 1, open_at + 1
        while j < n and depth:
            if text[j] == "[":
                depth += 1
            elif text[j] == "]":
                depth -= 1
            j += 1
        if depth:
            raise ParseError("unbalanced '['", open_at)
        slots.append(Slot(key, text[open_at + 1 : j - 1]))
        i = j
        while i < n and text[i] in " \t":
            i += 1
        if i < n:
            if text[i] != ",":
                raise ParseError("expected ',' between slots", i)
            i += 1
    return MeaningRepresentation(tuple(slots))


# ---------------------------------------------------------------- datasets


@dataclass
class DatasetInstance:
    mr: MeaningRepresentation
    references: list[str]
    split: str = "train"

    def __post_init__(self):
        if not self.references:
            raise DatasetError(f"instance {self.mr} has no reference")

    @property
    def source(self) -> str:
        return str(self.mr)


def group_references(pairs: Iterable[tuple[MeaningRepresentation, str]], split: str) -> list[DatasetInstance]:
    """Merge rows sharing an MR string, keeping first-seen order."""
    groups: OrderedDict[str, DatasetInstance] = OrderedDict()
    for mr, ref in pairs:
        key = str(mr)
        if key in groups:
            groups[key].references.append(ref)
        else:
            groups[key] = DatasetInstance(mr, [ref], split)
    return list(groups.values())


def _read_e2e_csv(path: Path) -> list[tuple[MeaningRepresentation, str]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return rows
        cols = [h.strip().lower() for h in header]
        if "mr" not in cols or "ref" not in cols:
            raise DatasetError(f"{path}: header must contain 'mr' and 'ref' columns, got {header}")
        mi, ri = cols.index("mr"), cols.index("ref")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) <= max(mi, ri):
                raise DatasetError(f"{path}: row {rowno} has {len(row)} columns")
            try:
                mr = parse_mr(row[mi])
            except ParseError as exc:
                raise DatasetError(f"{path}: row {rowno}: {exc}") from None
            rows.append((mr, row[ri]))
    return rows


_ACT_RE = re.compile(r"^\s*([A-Za-z_?]+)\s*\((.*)\)\s*$", re.S)


def parse_dialogue_act(act: str) -> tuple[str, list[tuple[str, str]]]:
    """Split ``inform(name='x';area=y)`` into the act type and its slot pairs."""
    m = _ACT_RE.match(act)
    if not m:
        raise ValueError(f"not a dialogue act: {act!r}")
    kind, body = m.group(1), m.group(2)
    pairs = []
    for part in body.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            k, v = part.split("=", 1)
            v = v.strip()
            if len(v) >= 2 and v[0] == v[-1] and v[0] in "'\"":
                v = v[1:-1]
        else:
            k, v = part, ""
        pairs.append((k.strip(), v))
    return kind, pairs


def _read_act_json(path: Path, split: str) -> list[tuple[MeaningRepresentation, str]]:
    text = Path(path).read_text(encoding="utf-8")
    # the published files open with '#' comment lines
    body = "\n".join(line for line in text.splitlines() if not line.lstrip().startswith("#"))
    try:
        records = json.loads(body)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON at line {exc.lineno}") from None
    rows = []
    for rowno, rec in enumerate(records, start=1):
        if not isinstance(rec, list) or len(rec) < 2:
            raise DatasetError(f"{path}: record {rowno} is not [act, sentence, ...]")
        try:
            kind, pairs = parse_dialogue_act(rec[0])
        except ValueError as exc:
            raise DatasetError(f"{path}: record {rowno}: {exc}") from None
        if kind != "inform" or not pairs:
            continue
        rows.append((MeaningRepresentation.from_pairs(pairs), rec[1]))
    return rows


def load_dataset(path, format: str = "e2e-csv", split: str = "train", group: bool | None = None) -> list[DatasetInstance]:
    """Load one split of a corpus.

    Training rows stay one instance per reference.  Validation and test rows
    are grouped by MR unless ``group`` says otherwise.
    """
    path = Path(path)
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}")
    if format == "e2e-csv":
        rows = _read_e2e_csv(path)
    elif format == "hotel-restaurant-json":
        rows = _read_act_json(path, split)
    else:
        raise DatasetError(f"unknown dataset format {format!r}")
    if group is None:
        group = split != "train"
    if group:
        return group_references(rows, split)
    return [DatasetInstance(mr, [ref], split) for mr, ref in rows]


def flatten(instances: Iterable[DatasetInstance]) -> list[tuple[str, str]]:
    """(MR string, reference) training pairs."""
    return [(inst.source, ref) for inst in instances for ref in inst.references]


def write_e2e_csv(instances: Iterable[DatasetInstance], path_or_buffer) -> None:
    own = isinstance(path_or_buffer, (str, Path))
    fh = open(path_or_buffer, "w", newline="", encoding="utf-8") if own else path_or_buffer
    try:
        writer = csv.writer(fh, quoting=csv.QUOTE_ALL, lineterminator="\n")
        writer.writerow(["mr", "ref"])
        for inst in instances:
            for ref in inst.references:
                writer.writerow([inst.source, ref])
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------- statistics


@dataclass
class CorpusStats:
    counts: dict[str, int]
    instances: dict[str, int]
    mr_chars: float
    ref_chars: float

    def as_dict(self) -> dict:
        return {"counts": self.counts, "instances": self.instances, "mr_chars": self.mr_chars, "ref_chars": self.ref_chars}


def corpus_stats(dataset: Sequence[DatasetInstance]) -> CorpusStats:
    """Pair counts per split and mean character lengths over (MR, reference) pairs."""
    counts: Counter = Counter()
    groups: Counter = Counter()
    mr_total = ref_total = n = 0
    for inst in dataset:
        src = len(inst.source)
        groups[inst.split] += 1
        for ref in inst.references:
            counts[inst.split] += 1
            mr_total += src
            ref_total += len(ref)
            n += 1
    return CorpusStats(
        dict(counts), dict(groups), mr_total / n if n else 0.0, ref_total / n if n else 0.0
    )


# ---------------------------------------------------------------- E2E+ construction

COPY_SLOTS = ("name", "near", "food")


@dataclass
class ValuePools:
    """Replacement values per slot and split."""

    pools: dict[str, dict[str, list[str]]]

    def partition(self, slot: str, split: str) -> list[str]:
        try:
            values = self.pools[slot][split]
        except KeyError:
            raise DatasetError(f"no pool partition for slot {slot!r}, split {split!r}") from None
        if not values:
            raise DatasetError(f"empty pool partition for slot {slot!r}, split {split!r}")
        return values

    def validate(self) -> None:
        for slot, parts in self.pools.items():
            names = list(parts)
            for a in range(len(names)):
                for b in range(a + 1, len(names)):
                    common = set(parts[names[a]]) & set(parts[names[b]])
                    if common:
                        raise DatasetError(
                            f"pool {slot!r}: splits {names[a]} and {names[b]} share {sorted(common)[:3]}"
                        )
        if "name" in self.pools and "near" in self.pools:
            all_names = {v for vs in self.pools["name"].values() for v in vs}
            all_near = {v for vs in self.pools["near"].values() for v in vs}
            common = all_names & all_near
            if common:
                raise DatasetError(f"name and near pools share {sorted(common)[:3]}")

    def digest(self) -> dict[str, str]:
        out = {}
        for slot in sorted(self.pools):
            h = hashlib.sha256()
            for split in sorted(self.pools[slot]):
                h.update(split.encode() + b"\0")
                for v in self.pools[slot][split]:
                    h.update(v.encode("utf-8") + b"\n")
            out[slot] = h.hexdigest()
        return out

    @classmethod
    def from_directory(cls, directory, slots: Sequence[str] = COPY_SLOTS) -> ValuePools:
        """Read ``<slot>.<split>.txt`` files, one value per line."""
        directory = Path(directory)
        pools: dict[str, dict[str, list[str]]] = {}
        for slot in slots:
            pools[slot] = {}
            for split in SPLITS:
                path = directory / f"{slot}.{split}.txt"
                if not path.exists():
                    raise FileNotFoundError(str(path))
                pools[slot][split] = read_pool_file(path)
        return cls(pools)

    @classmethod
    def split_lists(cls, values: dict[str, Sequence[str]], fractions=(0.8, 0.1, 0.1), seed: int = 0) -> ValuePools:
        """Deterministically partition one list per slot into the three splits."""
        pools = {}
        for slot in sorted(values):
            vals = sorted(set(values[slot]))
            random.Random(f"{seed}:{slot}").shuffle(vals)
            n = len(vals)
            a = int(round(fractions[0] * n))
            b = a + int(round(fractions[1] * n))
            pools[slot] = {"train": vals[:a], "validation": vals[a:b], "test": vals[b:]}
        return cls(pools)


def read_pool_file(path) -> list[str]:
    seen = OrderedDict()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        v = line.strip()
        if v:
            seen[v] = None
    return list(seen)


def _replace_all(text: str, mapping: dict[str, str]) -> str:
    if not mapping:
        return text
    keys = sorted(mapping, key=len, reverse=True)
    pattern = re.compile("|".join(re.escape(k) for k in keys))
    return pattern.sub(lambda m: mapping[m.group(0)], text)


@dataclass
class BuildReport:
    seed: int
    pool_digests: dict[str, str]
    replaced: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "pools": self.pool_digests, "replaced": self.replaced, "skipped": self.skipped},
            indent=2,
            sort_keys=True,
        )


def build_e2eplus(
    dataset: Sequence[DatasetInstance], pools: ValuePools, seed: int, slots: Sequence[str] = COPY_SLOTS
) -> tuple[list[DatasetInstance], BuildReport]:
    """Resample copy-prone slot values from split-disjoint pools.

    For every instance and every listed slot it carries, a new value is drawn
    from the pool partition of the instance's split.  The MR and all its
    references are rewritten, longest original value first.  A slot is left
    alone when some reference does not contain its value verbatim.
    """
    pools.validate()
    rng = random.Random(seed)
    report = BuildReport(seed, pools.digest(), {s: 0 for s in slots}, {s: 0 for s in slots})
    out = []
    for inst in dataset:
        mapping: dict[str, str] = {}
        mr = inst.mr
        for slot in slots:
            old = mr.get(slot)
            if old is None:
                continue
            candidates = pools.partition(slot, inst.split)
            new = candidates[rng.randrange(len(candidates))]
            if not old or not all(old in ref for ref in inst.references) or old in mapping:
                report.skipped[slot] += 1
                continue
            mapping[old] = new
            mr = mr.replace(slot, new)
            report.replaced[slot] += 1
        refs = [_replace_all(ref, mapping) for ref in inst.references]
        out.append(DatasetInstance(mr, refs, inst.split))
    return out, report


def scan_disjointness(
    dataset: Sequence[DatasetInstance], slots: Sequence[str] = COPY_SLOTS, pools: ValuePools | None = None
) -> list[str]:
    """Violations of name/near and split-wise value disjointness found in a built corpus.

    With ``pools`` only pool values are checked, and each must sit in its own
    split; original values kept by the consistency guard are ignored.
    Without ``pools`` every value in the corpus is checked.
    """
    values: dict[str, dict[str, set]] = {s: {sp: set() for sp in SPLITS} for s in slots}
    allowed: dict[str, set] = {}
    if pools is not None:
        allowed = {s: {v for vs in pools.pools.get(s, {}).values() for v in vs} for s in slots}
    problems = []
    cross = "name" in slots and "near" in slots
    for n, inst in enumerate(dataset):
        for s in slots:
            v = inst.mr.get(s)
            if v is None:
                continue
            if cross and pools is not None and s in ("name", "near"):
                other = "near" if s == "name" else "name"
                if v in allowed[other]:
                    problems.append(f"instance {n}: {other}-pool value {v!r} used as {s}")
            if pools is None or v in allowed[s]:
                values[s].setdefault(inst.split, set()).add(v)
    if cross and pools is None:
        names = set().union(*values["name"].values())
        near = set().union(*values["near"].values())
        for v in sorted(names & near):
            problems.append(f"value {v!r} used as both name and near")
    for s in slots:
        splits = sorted(values[s])
        for i in range(len(splits)):
            for j in range(i + 1, len(splits)):
                for v in sorted(values[s][splits[i]] & values[s][splits[j]]):
                    problems.append(f"{s} value {v!r} in both {splits[i]} and {splits[j]}")
        if pools is not None:
            for sp in splits:
                own = set(pools.pools.get(s, {}).get(sp, ()))
                for v in sorted(values[s][sp] - own):
                    problems.append(f"{s} value {v!r} in {sp} comes from another split's pool")
    return problems


# ---------------------------------------------------------------- batching


def pad_batch(sequences: Sequence[Sequence[int]], pad: int = 0) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    out = np.full((len(sequences), int(lengths.max()) if len(sequences) else 0), pad, dtype=np.int64)
    for i, s in enumerate(sequences):
        out[i, : len(s)] = s
    return out, lengths


def serialize_instances(instances: Iterable[DatasetInstance]) -> bytes:
    buf = io.StringIO()
    write_e2e_csv(instances, buf)
    return buf.getvalue().encode("utf-8")
