import numpy as np
import pytest
from conftest import gradient_error
from hypothesis import given, settings
from hypothesis import strategies as st

from char2text import tensor as T
from char2text.layers import (
    AlignmentParams,
    GruCell,
    GruParams,
    attend,
    encode_bidirectional,
    gru_step,
    init_alignment,
    init_gru,
    reversal_index,
)
from char2text.tensor import Tensor


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def random_cell(rng, n_in, H):
    return {
        "w_ih": rng.normal(0, 0.5, (n_in, 3 * H)),
        "w_hh_zr": rng.normal(0, 0.5, (H, 2 * H)),
        "w_hh_n": rng.normal(0, 0.5, (H, H)),
        "bias": rng.normal(0, 0.5, 3 * H),
    }


def as_cell(arrs) -> GruCell:
    return GruCell(*(a if isinstance(a, Tensor) else Tensor(a) for a in (arrs["w_ih"], arrs["w_hh_zr"], arrs["w_hh_n"], arrs["bias"])))


def gru_params(store, prefix="g"):
    return GruParams.from_store({k: Tensor(v.astype(np.float64)) for k, v in store.items()}, prefix)


# ---------------------------------------------------------------- GRU step


def test_zero_params_halve_the_state():
    H = 4
    cell = as_cell({"w_ih": np.zeros((3, 3 * H)), "w_hh_zr": np.zeros((H, 2 * H)), "w_hh_n": np.zeros((H, H)), "bias": np.zeros(3 * H)})
    v = np.array([[1.0, -2.0, 0.5, 3.0]])
    h = gru_step(Tensor(np.ones((1, 3))), Tensor(v), cell).data
    np.testing.assert_allclose(h, 0.5 * v, rtol=0, atol=1e-15)
    h0 = gru_step(Tensor(np.ones((1, 3))), Tensor(np.zeros((1, H))), cell).data
    np.testing.assert_array_equal(h0, np.zeros((1, H)))


def test_gru_step_matches_hand_unrolled_equations():
    rng = np.random.default_rng(3)
    n_in, H = 5, 4
    p = random_cell(rng, n_in, H)
    x = rng.normal(size=(2, n_in))
    h = rng.normal(size=(2, H))
    Wz, Wr, Wn = p["w_ih"][:, :H], p["w_ih"][:, H : 2 * H], p["w_ih"][:, 2 * H :]
    Uz, Ur = p["w_hh_zr"][:, :H], p["w_hh_zr"][:, H:]
    bz, br, bn = p["bias"][:H], p["bias"][H : 2 * H], p["bias"][2 * H :]
    z = sig(x @ Wz + h @ Uz + bz)
    r = sig(x @ Wr + h @ Ur + br)
    cand = np.tanh(x @ Wn + (r * h) @ p["w_hh_n"] + bn)
    expected = (1 - z) * h + z * cand
    got = gru_step(Tensor(x), Tensor(h), as_cell(p)).data
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-10)


def test_gru_step_gradients():
    rng = np.random.default_rng(4)
    n_in, H = 3, 5
    arrs = dict(random_cell(rng, n_in, H), x=rng.normal(size=(2, n_in)), h=rng.normal(size=(2, H)))
    w = rng.normal(size=(2, H))

    def build(t):
        out = gru_step(t["x"], t["h"], as_cell(t))
        return (out * Tensor(w)).sum()

    assert gradient_error(build, arrs) < 1e-4


def test_gru_step_rejects_wrong_sizes():
    rng = np.random.default_rng(0)
    cell = as_cell(random_cell(rng, 3, 4))
    with pytest.raises(T.ShapeError):
        gru_step(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 4))), cell)
    with pytest.raises(T.ShapeError):
        gru_step(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 5))), cell)


# ---------------------------------------------------------------- encoder


def test_length_one_annotation_is_both_single_steps():
    rng = np.random.default_rng(5)
    store = init_gru("g", 3, 4, 1, rng, np.float64)
    gru = gru_params(store)
    x = rng.normal(size=(1, 1, 3))
    ann = encode_bidirectional(Tensor(x), [1], gru)
    zero = Tensor(np.zeros((1, 4)))
    f = gru_step(Tensor(x[:, 0]), zero, gru.cell(0, "fwd")).data
    b = gru_step(Tensor(x[:, 0]), zero, gru.cell(0, "bwd")).data
    np.testing.assert_allclose(ann.values.data[0, 0], np.concatenate([f[0], b[0]]), atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 50), st.integers(0, 1000))
def test_annotation_count_equals_length(n, seed):
    rng = np.random.default_rng(seed)
    gru = gru_params(init_gru("g", 2, 3, 1, rng, np.float64))
    ann = encode_bidirectional(Tensor(rng.normal(size=(1, n, 2))), [n], gru)
    assert ann.values.shape == (1, n, 6)
    assert ann.mask().sum() == n


def test_reversal_swaps_and_reverses_halves():
    rng = np.random.default_rng(6)
    store = init_gru("g", 3, 4, 1, rng, np.float64)
    for suffix in ("w_ih", "w_hh_zr", "w_hh_n", "bias"):
        store[f"g.l0.bwd.{suffix}"] = store[f"g.l0.fwd.{suffix}"]
    gru = gru_params(store)
    x = rng.normal(size=(1, 7, 3))
    a = encode_bidirectional(Tensor(x), [7], gru).values.data[0]
    b = encode_bidirectional(Tensor(x[:, ::-1].copy()), [7], gru).values.data[0]
    np.testing.assert_allclose(a[:, :4], b[::-1, 4:], atol=1e-12)
    np.testing.assert_allclose(a[:, 4:], b[::-1, :4], atol=1e-12)


def test_padded_batch_matches_single_sequences():
    rng = np.random.default_rng(7)
    gru = gru_params(init_gru("g", 3, 4, 2, rng, np.float64))
    lengths = [5, 2, 3]
    x = rng.normal(size=(3, 5, 3))
    batch = encode_bidirectional(Tensor(x), lengths, gru)
    for i, n in enumerate(lengths):
        single = encode_bidirectional(Tensor(x[i : i + 1, :n]), [n], gru)
        np.testing.assert_allclose(batch.values.data[i, :n], single.values.data[0], atol=1e-12)
        for l in range(2):
            np.testing.assert_allclose(batch.backward_first[l].data[i], single.backward_first[l].data[0], atol=1e-12)


def test_reversal_index_keeps_padding():
    rows, rev = reversal_index(np.array([3, 1]), 4)
    np.testing.assert_array_equal(rev, [[2, 1, 0, 3], [0, 1, 2, 3]])


def test_empty_sequence_rejected():
    gru = gru_params(init_gru("g", 2, 3, 1, np.random.default_rng(0), np.float64))
    with pytest.raises(ValueError):
        encode_bidirectional(Tensor(np.zeros((1, 0, 2))), [0], gru)


def test_encoder_gradients():
    rng = np.random.default_rng(8)
    store = {k: v.astype(np.float64) for k, v in init_gru("g", 2, 3, 1, rng, np.float64).items()}
    arrs = dict(store, x=rng.normal(size=(2, 4, 2)))
    w = rng.normal(size=(2, 4, 6))

    def build(t):
        ann = encode_bidirectional(t["x"], [4, 2], GruParams.from_store(t, "g"))
        return (ann.values * Tensor(w)).sum()

    assert gradient_error(build, arrs) < 1e-4


# ---------------------------------------------------------------- attention


def align_params(rng, H, width, A):
    return {"w_s": rng.normal(size=(H, A)), "w_h": rng.normal(size=(width, A)), "v": rng.normal(size=(A, 1)), "bias": rng.normal(size=A)}


def annotations(values, lengths):
    from char2text.layers import EncoderAnnotations

    return EncoderAnnotations(Tensor(values), np.asarray(lengths), [])


def test_single_position_attends_fully():
    rng = np.random.default_rng(9)
    h = rng.normal(size=(1, 1, 6))
    p = AlignmentParams(**{k: Tensor(v) for k, v in align_params(rng, 3, 6, 5).items()})
    res = attend(Tensor(rng.normal(size=(1, 3))), annotations(h, [1]), p)
    np.testing.assert_array_equal(res.alpha.data, [[1.0]])
    np.testing.assert_allclose(res.context.data, h[:, 0], atol=1e-15)


def test_identical_annotations_give_uniform_attention():
    rng = np.random.default_rng(10)
    h = np.repeat(rng.normal(size=(1, 1, 6)), 4, axis=1)
    p = AlignmentParams(**{k: Tensor(v) for k, v in align_params(rng, 3, 6, 5).items()})
    res = attend(Tensor(rng.normal(size=(1, 3))), annotations(h, [4]), p)
    np.testing.assert_allclose(res.alpha.data, np.full((1, 4), 0.25), atol=1e-15)


def test_context_matches_explicit_sum():
    rng = np.random.default_rng(11)
    H, width, A = 3, 6, 5
    ap = align_params(rng, H, width, A)
    h = rng.normal(size=(4, width))
    s = rng.normal(size=H)
    e = np.array([ap["v"][:, 0] @ np.tanh(ap["w_s"].T @ s + ap["w_h"].T @ h[j] + ap["bias"]) for j in range(4)])
    alpha = np.exp(e - e.max()) / np.exp(e - e.max()).sum()
    ctx = sum(alpha[j] * h[j] for j in range(4))
    res = attend(Tensor(s[None]), annotations(h[None], [4]), AlignmentParams(**{k: Tensor(v) for k, v in ap.items()}))
    np.testing.assert_allclose(res.scores.data[0], e, atol=1e-10)
    np.testing.assert_allclose(res.context.data[0], ctx, atol=1e-10)


def test_padding_receives_no_attention():
    rng = np.random.default_rng(12)
    p = AlignmentParams(**{k: Tensor(v) for k, v in align_params(rng, 3, 6, 5).items()})
    res = attend(Tensor(rng.normal(size=(2, 3))), annotations(rng.normal(size=(2, 5, 6)), [5, 2]), p)
    assert np.all(res.alpha.data[1, 2:] == 0.0)
    np.testing.assert_allclose(res.alpha.data.sum(axis=1), 1.0, atol=1e-12)


def test_attention_gradients():
    rng = np.random.default_rng(13)
    arrs = dict(align_params(rng, 3, 4, 5), s=rng.normal(size=(2, 3)), h=rng.normal(size=(2, 3, 4)))
    w = rng.normal(size=(2, 4))

    def build(t):
        from char2text.layers import EncoderAnnotations

        ann = EncoderAnnotations(t["h"], np.array([3, 2]), [])
        p = AlignmentParams(t["w_s"], t["w_h"], t["v"], t["bias"])
        return (attend(t["s"], ann, p).context * Tensor(w)).sum()

    assert gradient_error(build, arrs) < 1e-4


def test_init_alignment_shapes():
    p = init_alignment(4, 8, np.random.default_rng(0))
    assert p["align.w_s"].shape[0] == 4 and p["align.w_h"].shape[0] == 8
    assert p["align.v"].shape == (p["align.w_s"].shape[1], 1)
