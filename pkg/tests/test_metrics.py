import itertools
import math
import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from char2text import metrics as M
from char2text.metrics import AlignmentError, MetricReport, prepare

EDA_CS_E2E_ROW = "bleu: 0.6705\nnist: 8.5150\nmeteor: 0.4449\nrouge_l: 0.6894\ncider: 2.2355\n"


def corpus(hyps, refs):
    return prepare(hyps, refs)


def random_corpus(seed, n=6, vocab="a b c the dog".split(), min_len=3):
    rng = random.Random(seed)
    words = lambda: " ".join(rng.choice(vocab) for _ in range(rng.randint(min_len, 10)))
    return [words() for _ in range(n)], [[words() for _ in range(rng.randint(1, 3))] for _ in range(n)]


# ---------------------------------------------------------------- tokenizer


def test_tokenizer_lowercases_and_splits_punctuation():
    assert M.tokenize("The Eagle, near Burger King.") == ["the", "eagle", ",", "near", "burger", "king", "."]
    assert M.tokenize("costs £20-25 (cheap)") == ["costs", "£20", "-", "25", "(", "cheap", ")"]
    assert M.tokenize("3.5 stars") == ["3.5", "stars"]
    assert M.tokenize("") == []


# ---------------------------------------------------------------- BLEU


def test_bleu_identity_and_disjoint():
    assert M.bleu(corpus(["the cat sat on the mat"], [["the cat sat on the mat"]])) == 1.0
    assert M.bleu(corpus(["x y z w"], [["a b c d"]])) == 0.0


def test_bleu_two_instance_hand_computation():
    hyps = ["the cat sat on the mat", "a dog runs very fast"]
    refs = [["the cat is on the mat"], ["a dog runs very quickly", "the dog runs fast"]]
    # clipped matches / hypothesis n-grams, summed over both instances:
    #   1-grams (5 + 5) / (6 + 5); 2-grams (3 + 3) / (5 + 4)
    #   3-grams (1 + 2) / (4 + 3); 4-grams (0 + 1) / (3 + 2)
    # closest reference lengths 6 and 5 equal the hypothesis lengths, so BP = 1
    expected = (10 / 11 * 6 / 9 * 3 / 7 * 1 / 5) ** 0.25
    assert M.bleu(corpus(hyps, refs)) == pytest.approx(expected, abs=1e-12)


def test_bleu_brevity_penalty_by_hand():
    # every n-gram matches; c = 4, closest reference r = 6
    got = M.bleu(corpus(["a b c d"], [["a b c d e f", "q"]]))
    assert got == pytest.approx(math.exp(1 - 6 / 4), abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_bleu_matches_nltk(seed):
    from nltk.translate.bleu_score import corpus_bleu

    # nltk counts a phantom n-gram for hypotheses shorter than n, so stay at length >= 4
    hyps, refs = random_corpus(seed, vocab=["a", "b", "c"], min_len=4)
    c = corpus(hyps, refs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        oracle = corpus_bleu([p.references for p in c], [p.hypothesis for p in c])
    ours = M.bleu(c)
    if ours == 0.0:
        # nltk returns a tiny positive value instead of zero for a missing order
        assert oracle < 1e-50
    else:
        assert ours == pytest.approx(oracle, rel=1e-12)


def test_empty_hypothesis_is_not_an_error():
    assert M.bleu(corpus(["", "a b c d"], [["x"], ["a b c d"]])) >= 0.0


# ---------------------------------------------------------------- NIST


def test_nist_analytic_three_word_sentence():
    # single reference "a b c": each unigram carries log2(3/1); every longer n-gram
    # has info log2(1/1) = 0, so only the unigram term survives
    c = corpus(["a b c"], [["a b c"]])
    info = M.nist_information(c)
    assert info[("a",)] == pytest.approx(math.log2(3))
    assert info[("a", "b")] == 0.0
    assert M.nist(c) == pytest.approx(3 * math.log2(3) / 3, abs=1e-12)


def test_nist_info_weights_by_hand():
    # references: "a a b", "a c"  ->  5 words; count(a)=3, count(a a)=1, count(a b)=1
    info = M.nist_information(corpus(["x", "y"], [["a a b"], ["a c"]]))
    assert info[("a",)] == pytest.approx(math.log2(5 / 3))
    assert info[("a", "a")] == pytest.approx(math.log2(3 / 1))
    assert info[("b",)] == pytest.approx(math.log2(5))


def test_nist_disjoint_and_doubling():
    assert M.nist(corpus(["x y"], [["a b"]])) == 0.0
    hyps, refs = random_corpus(3)
    once = M.nist(corpus(hyps, refs))
    twice = M.nist(corpus(hyps * 2, refs * 2))
    assert twice == pytest.approx(once, rel=1e-12)


# ---------------------------------------------------------------- METEOR


def test_meteor_identity_formula():
    c = corpus(["the cat sat down quietly"], [["the cat sat down quietly"]])
    assert M.meteor_reduced(c) == pytest.approx(1 - 0.5 * (1 / 5) ** 3, abs=1e-12)
    assert round(M.meteor_reduced(c), 3) == 0.996


def test_meteor_zero_and_reordering():
    assert M.meteor_reduced(corpus(["x y"], [["a b"]])) == 0.0
    same = M.meteor_reduced(corpus(["a b c d e"], [["a b c d e"]]))
    shuffled = M.meteor_reduced(corpus(["c a e b d"], [["a b c d e"]]))
    assert shuffled < same


def test_meteor_stem_stage_matches_inflections():
    assert M.meteor_alignment(["running", "dogs"], ["run", "dog"]) == (2, 1)
    assert M.meteor_alignment(["running", "dogs"], ["dog", "run"]) == (2, 2)


def test_meteor_formula_by_hand():
    # hyp "a b x c", ref "a b c": 3 matches in 2 chunks, P = 3/4, R = 1
    p, r = 3 / 4, 1.0
    fmean = p * r / (0.9 * p + 0.1 * r)
    expected = fmean * (1 - 0.5 * (2 / 3) ** 3)
    assert M.meteor_reduced(corpus(["a b x c"], [["a b c"]])) == pytest.approx(expected, abs=1e-12)


# ---------------------------------------------------------------- ROUGE-L


def brute_force_lcs(a, b):
    for k in range(min(len(a), len(b)), 0, -1):
        subs_b = set(itertools.combinations(b, k))
        if any(s in subs_b for s in itertools.combinations(a, k)):
            return k
    return 0


def test_rouge_identity_and_equal_pr():
    assert M.rouge_l(corpus(["a b c d"], [["a b c d"]])) == 1.0
    assert M.rouge_l(corpus(["a b c d"], [["a c b d"]])) == pytest.approx(0.75, abs=1e-15)


def test_rouge_three_instance_fixture_against_brute_force():
    hyps = ["the cat sat on the mat", "a b a b a", "near the river there is a pub"]
    refs = [["the mat had a cat on it", "a cat sat"], ["b a b"], ["there is a pub near the river"]]
    c = corpus(hyps, refs)
    expected = []
    for p in c:
        best = 0.0
        for r in p.references:
            lcs = brute_force_lcs(p.hypothesis, r)
            if lcs:
                P, R = lcs / len(p.hypothesis), lcs / len(r)
                best = max(best, (1 + 1.2**2) * P * R / (R + 1.2**2 * P))
        expected.append(best)
    assert M.rouge_l(c) == pytest.approx(sum(expected) / 3, abs=1e-12)


@settings(max_examples=60)
@given(st.lists(st.sampled_from("abc"), max_size=7), st.lists(st.sampled_from("abc"), max_size=7))
def test_lcs_matches_brute_force(a, b):
    assert M.lcs_length(a, b) == brute_force_lcs(a, b)


# ---------------------------------------------------------------- CIDEr


def dense_cider(pairs, max_n=4):
    """Explicit vector version: one coordinate per n-gram of the whole corpus."""
    N = len(pairs)
    total = 0.0
    for n in range(1, max_n + 1):
        grams = sorted({g for p in pairs for s in [p.hypothesis] + p.references for g in M.ngrams(s, n)})
        col = {g: i for i, g in enumerate(grams)}

        def tf(tokens):
            v = np.zeros(len(grams))
            for g, c in M.ngrams(tokens, n).items():
                v[col[g]] += c
            return v

        df = np.zeros(len(grams))
        for p in pairs:
            present = np.zeros(len(grams), dtype=bool)
            for r in p.references:
                present |= tf(r) > 0
            df += present
        idf = np.log(N) - np.log(np.maximum(df, 1.0))
        for p in pairs:
            h = tf(p.hypothesis) * idf
            sims = []
            for r in p.references:
                rv = tf(r) * idf
                denom = np.linalg.norm(h) * np.linalg.norm(rv)
                sims.append(float(h @ rv / denom) if denom > 0 else 0.0)
            total += np.mean(sims)
    return 10.0 * total / (max_n * N)


def test_cider_single_instance_is_zero():
    assert M.cider(corpus(["a b c"], [["a b c"]])) == 0.0


def test_cider_orthogonal_is_zero():
    assert M.cider(corpus(["x y z", "u v w"], [["a b c"], ["d e f"]])) == 0.0


def test_cider_four_instance_dense_oracle():
    hyps = ["the pub is near the river", "a cheap french place", "the cafe serves fast food", "a pub"]
    refs = [
        ["the pub is by the river", "near the river is a pub"],
        ["a cheap place serving french food"],
        ["the cafe offers fast food", "fast food is served at the cafe"],
        ["a pub in the centre", "there is a pub"],
    ]
    c = corpus(hyps, refs)
    assert M.cider(c) == pytest.approx(dense_cider(c), abs=1e-9)


# ---------------------------------------------------------------- corpus-level laws


@pytest.mark.parametrize("seed", range(4))
def test_instance_order_does_not_matter(seed):
    hyps, refs = random_corpus(seed)
    order = list(range(len(hyps)))
    random.Random(seed).shuffle(order)
    a = M.score_corpus(hyps, refs).as_dict()
    b = M.score_corpus([hyps[i] for i in order], [refs[i] for i in order]).as_dict()
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_duplicate_reference_never_decreases(seed):
    hyps, refs = random_corpus(seed + 10)
    a = M.score_corpus(hyps, refs).as_dict()
    dup = [r + [r[0]] if i == 0 else r for i, r in enumerate(refs)]
    b = M.score_corpus(hyps, dup).as_dict()
    for k in ("bleu", "meteor", "rouge_l"):
        assert b[k] >= a[k] - 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_bounded_metrics(seed):
    r = M.score_corpus(*random_corpus(seed + 20))
    assert 0 <= r.bleu <= 1 and 0 <= r.meteor <= 1 and 0 <= r.rouge_l <= 1
    assert r.nist >= 0 and r.cider >= 0


# ---------------------------------------------------------------- reports and files


def write_pair(tmp_path, hyps, groups):
    h, r = tmp_path / "hyp.txt", tmp_path / "ref.txt"
    h.write_text("".join(x + "\n" for x in hyps))
    M.write_reference_groups(groups, r)
    return h, r


def test_score_all_identity(tmp_path):
    groups = [["The Eagle is a pub.", "A pub called The Eagle."], ["Aromi serves Thai food."]]
    report = M.score_all(*write_pair(tmp_path, [g[0] for g in groups], groups))
    assert report.bleu == 1.0 and report.rouge_l == 1.0 and report.meteor >= 0.99
    assert len(report.as_dict()) == 5


def test_score_all_alignment_error(tmp_path):
    with pytest.raises(AlignmentError) as exc:
        M.score_all(*write_pair(tmp_path, ["a", "b", "c"], [["a"], ["b"]]))
    assert exc.value.index == 2


def test_reference_groups_round_trip(tmp_path):
    groups = [["a b", "c"], ["d"]]
    M.write_reference_groups(groups, tmp_path / "r.txt")
    assert M.read_reference_groups(tmp_path / "r.txt") == groups


def test_report_format_and_parse():
    report = MetricReport.parse(EDA_CS_E2E_ROW)
    assert report.bleu == 0.6705 and report.nist == 8.5150 and report.cider == 2.2355
    assert report.format() == EDA_CS_E2E_ROW
    assert [line.split(":")[0] for line in report.format().splitlines()] == list(M.METRICS)


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        M.score_corpus([], [])
