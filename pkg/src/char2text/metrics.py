"""Multi-reference corpus metrics: BLEU, NIST, METEOR (exact + stem), ROUGE-L, CIDEr.

All five share one tokenizer: lowercase, punctuation split off as separate
tokens (the mteval-13a rules).  Hypotheses are plain strings, references are
lists of strings per instance.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

from nltk.stem.porter import PorterStemmer

_RULES = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
]


class AlignmentError(ValueError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


@lru_cache(maxsize=65536)
def _tokenize(text: str) -> tuple[str, ...]:
    s = " " + text.lower().strip() + " "
    for pattern, repl in _RULES:
        s = pattern.sub(repl, s)
    return tuple(s.split())


def tokenize(text: str) -> list[str]:
    return list(_tokenize(text))


@dataclass
class TokenizedPair:
    hypothesis: list[str]
    references: list[list[str]]


def prepare(hypotheses: Sequence[str], references: Sequence[Sequence[str]]) -> list[TokenizedPair]:
    if len(hypotheses) != len(references):
        raise AlignmentError(
            f"{len(hypotheses)} hypotheses but {len(references)} reference groups", min(len(hypotheses), len(references))
        )
    corpus = []
    for i, (h, refs) in enumerate(zip(hypotheses, references)):
        if not refs:
            raise AlignmentError(f"instance {i} has no reference", i)
        corpus.append(TokenizedPair(tokenize(h), [tokenize(r) for r in refs]))
    if not corpus:
        raise ValueError("empty corpus")
    return corpus


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------- BLEU


def bleu(corpus: Sequence[TokenizedPair], max_n: int = 4) -> float:
    """Corpus BLEU, uniform weights, closest reference length, no smoothing."""
    if not corpus:
        raise ValueError("empty corpus")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = ref_len = 0
    for pair in corpus:
        h = pair.hypothesis
        hyp_len += len(h)
        ref_len += min((len(r) for r in pair.references), key=lambda L: (abs(L - len(h)), L))
        for n in range(1, max_n + 1):
            hc = ngrams(h, n)
            best: Counter = Counter()
            for r in pair.references:
                best |= ngrams(r, n)
            matched[n - 1] += sum(min(c, best[g]) for g, c in hc.items())
            total[n - 1] += max(len(h) - n + 1, 0)
    if min(matched) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p)


# ---------------------------------------------------------------- NIST

_NIST_BETA = math.log(0.5) / math.log(1.5) ** 2


def nist_information(corpus: Sequence[TokenizedPair], max_n: int = 5) -> dict[tuple[str, ...], float]:
    """info(w1..wn) = log2(count(w1..wn-1) / count(w1..wn)) over all references."""
    counts: Counter = Counter()
    words = 0
    for pair in corpus:
        for r in pair.references:
            words += len(r)
            for n in range(1, max_n + 1):
                counts.update(ngrams(r, n))
    info = {}
    for g, c in counts.items():
        prefix = words if len(g) == 1 else counts[g[:-1]]
        info[g] = math.log2(prefix / c)
    return info


def nist(corpus: Sequence[TokenizedPair], max_n: int = 5) -> float:
    """NIST score with information weights from the reference side of the corpus.

    Matches are clipped by the maximum count over an instance's references;
    the brevity factor compares hypothesis length with mean reference length.
    """
    if not corpus:
        raise ValueError("empty corpus")
    info = nist_information(corpus, max_n)
    gained = [0.0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0.0
    for pair in corpus:
        h = pair.hypothesis
        hyp_len += len(h)
        ref_len += sum(len(r) for r in pair.references) / len(pair.references)
        for n in range(1, max_n + 1):
            hc = ngrams(h, n)
            best: Counter = Counter()
            for r in pair.references:
                best |= ngrams(r, n)
            gained[n - 1] += sum(min(c, best[g]) * info[g] for g, c in hc.items() if g in best)
            total[n - 1] += max(len(h) - n + 1, 0)
    score = sum(g / t for g, t in zip(gained, total) if t)
    ratio = hyp_len / ref_len if ref_len else 0.0
    if ratio <= 0:
        return 0.0
    bp = math.exp(_NIST_BETA * math.log(min(ratio, 1.0)) ** 2)
    return score * bp


# ---------------------------------------------------------------- METEOR

METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5

_stemmer = PorterStemmer()


@lru_cache(maxsize=65536)
def _stem(word: str) -> str:
    return _stemmer.stem(word)


def _align_stage(hyp, ref, used_r, align: dict[int, int], key) -> None:
    # prefer the reference position that extends the current chunk
    last_r = -2
    for i, tok in enumerate(hyp):
        if i in align:
            last_r = align[i]
            continue
        k = key(tok)
        options = [j for j, r in enumerate(ref) if not used_r[j] and key(r) == k]
        if not options:
            continue
        if last_r + 1 in options:
            j = last_r + 1
        else:
            later = [j for j in options if j > last_r]
            j = later[0] if later else options[0]
        used_r[j] = True
        align[i] = j
        last_r = j


def meteor_alignment(hyp: Sequence[str], ref: Sequence[str]) -> tuple[int, int]:
    """(matches, chunks) after the exact and the stemmed matching stages."""
    used_r = [False] * len(ref)
    align: dict[int, int] = {}
    _align_stage(hyp, ref, used_r, align, lambda w: w)
    _align_stage(hyp, ref, used_r, align, _stem)
    if not align:
        return 0, 0
    pairs = sorted(align.items())
    chunks = 1
    for (h0, r0), (h1, r1) in zip(pairs, pairs[1:]):
        if h1 != h0 + 1 or r1 != r0 + 1:
            chunks += 1
    return len(pairs), chunks


def _meteor_from_stats(matches: int, chunks: int, hyp_len: int, ref_len: int) -> float:
    if matches == 0:
        return 0.0
    p = matches / hyp_len
    r = matches / ref_len
    fmean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
    return fmean * (1.0 - penalty)


def meteor_reduced(corpus: Sequence[TokenizedPair]) -> float:
    """METEOR without synonym or paraphrase stages; best reference per instance."""
    if not corpus:
        raise ValueError("empty corpus")
    tot = [0, 0, 0, 0]
    for pair in corpus:
        best = None
        for r in pair.references:
            m, c = meteor_alignment(pair.hypothesis, r)
            stats = (m, c, len(pair.hypothesis), len(r))
            s = _meteor_from_stats(*stats)
            if best is None or s > best[0]:
                best = (s, stats)
        for k in range(4):
            tot[k] += best[1][k]
    return _meteor_from_stats(*tot)


# ---------------------------------------------------------------- ROUGE-L

ROUGE_BETA = 1.2


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_instance(hyp: Sequence[str], refs: Sequence[Sequence[str]], beta: float = ROUGE_BETA) -> float:
    best = 0.0
    for r in refs:
        lcs = lcs_length(hyp, r)
        if lcs == 0:
            continue
        p = lcs / len(hyp)
        rec = lcs / len(r)
        f = (1 + beta**2) * p * rec / (rec + beta**2 * p)
        best = max(best, f)
    return best


def rouge_l(corpus: Sequence[TokenizedPair]) -> float:
    if not corpus:
        raise ValueError("empty corpus")
    return sum(rouge_l_instance(p.hypothesis, p.references) for p in corpus) / len(corpus)


# ---------------------------------------------------------------- CIDEr


def _tfidf(counts: Counter, df: Counter, log_n: float) -> dict:
    return {g: c * (log_n - math.log(max(1.0, df[g]))) for g, c in counts.items()}


def _cosine(a: dict, b: dict) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    dot = sum(v * b.get(g, 0.0) for g, v in a.items())
    return dot / (na * nb)


def cider(corpus: Sequence[TokenizedPair], max_n: int = 4, scale: float = 10.0) -> float:
    """Plain CIDEr: tf-idf cosine per n-gram order, averaged over orders and references."""
    if not corpus:
        raise ValueError("empty corpus")
    df: Counter = Counter()
    for pair in corpus:
        seen = set()
        for r in pair.references:
            for n in range(1, max_n + 1):
                seen.update(ngrams(r, n))
        df.update(seen)
    log_n = math.log(len(corpus))
    total = 0.0
    for pair in corpus:
        inst = 0.0
        for n in range(1, max_n + 1):
            hv = _tfidf(ngrams(pair.hypothesis, n), df, log_n)
            inst += sum(_cosine(hv, _tfidf(ngrams(r, n), df, log_n)) for r in pair.references) / len(pair.references)
        total += scale * inst / max_n
    return total / len(corpus)


# ---------------------------------------------------------------- reports

METRICS = ("bleu", "nist", "meteor", "rouge_l", "cider")


@dataclass
class MetricReport:
    bleu: float
    nist: float
    meteor: float
    rouge_l: float
    cider: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def format(self) -> str:
        return "".join(f"{k}: {v:.4f}\n" for k, v in self.as_dict().items())

    @classmethod
    def parse(cls, text: str) -> MetricReport:
        values = {}
        for line in text.splitlines():
            if line.strip():
                k, v = line.split(":", 1)
                values[k.strip()] = float(v)
        return cls(**values)


def score_corpus(hypotheses: Sequence[str], references: Sequence[Sequence[str]]) -> MetricReport:
    corpus = prepare(hypotheses, references)
    return MetricReport(bleu(corpus), nist(corpus), meteor_reduced(corpus), rouge_l(corpus), cider(corpus))


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[Sequence[str]]) -> float:
    return bleu(prepare(hypotheses, references))


def read_hypotheses(path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    return text.splitlines()


def read_reference_groups(path) -> list[list[str]]:
    """Groups of references separated by blank lines."""
    groups: list[list[str]] = []
    current: list[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            current.append(line.rstrip("\n"))
        elif current:
            groups.append(current)
            current = []
    if current:
        groups.append(current)
    return groups


def write_reference_groups(groups: Sequence[Sequence[str]], path) -> None:
    Path(path).write_text("".join("\n".join(g) + "\n\n" for g in groups), encoding="utf-8")


def score_all(hypotheses_file, references_file) -> MetricReport:
    hyps = read_hypotheses(hypotheses_file)
    refs = read_reference_groups(references_file)
    if len(hyps) != len(refs):
        raise AlignmentError(
            f"{len(hyps)} hypotheses but {len(refs)} reference groups; first unmatched instance {min(len(hyps), len(refs))}",
            min(len(hyps), len(refs)),
        )
    return score_corpus(hyps, refs)
