import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qtsum.quantizer import (
    Codebook,
    ema_update,
    exact_squared_distances,
    hard_assign,
    head_purity,
    inverse_cdf_sample,
    make_rng,
    soft_assign,
    soft_assign_batch,
    softmax_neg,
    squared_distances,
)


def brute_argmin(x, e):
    best = []
    for v in x:
        dists = [sum((a - b) ** 2 for a, b in zip(v, c)) for c in e]
        best.append(min(range(len(e)), key=lambda k: (dists[k], k)))
    return np.array(best)


def enumerated_softmax(x, e):
    logits = np.array([-float(((x - c) ** 2).sum()) for c in e])
    w = np.exp(logits - logits.max())
    return w / w.sum()


def farthest_point_init(points, k):
    chosen = [0]
    for _ in range(k - 1):
        d = exact_squared_distances(points, points[chosen]).min(1)
        chosen.append(int(d.argmax()))
    return points[chosen]


def test_hard_assign_matches_brute_force():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 1, 6))
    cb = Codebook.from_embeddings(rng.normal(size=(64, 6)))
    table = hard_assign(cb, x)
    assert np.array_equal(table.codes[:, 0], brute_argmin(x[:, 0], cb.embeddings))


def test_tie_goes_to_lower_id():
    cb = Codebook.from_embeddings(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 5.0]]))
    table = hard_assign(cb, np.zeros((1, 1, 2)))
    assert table.codes[0, 0] == 0
    cb = Codebook.from_embeddings(np.array([[0.0, 5.0], [-1.0, 0.0], [1.0, 0.0]]))
    assert hard_assign(cb, np.zeros((1, 1, 2))).codes[0, 0] == 1


def test_popularity_small_example():
    rng = np.random.default_rng(1)
    cb = Codebook.from_embeddings(rng.normal(size=(5, 4)))
    table = hard_assign(cb, rng.normal(size=(1, 3, 4)))
    assert table.popularity.sum() == 3


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 12), h=st.integers(1, 4), k=st.integers(1, 9), seed=st.integers(0, 2**31))
def test_popularity_conservation(n, h, k, seed):
    rng = np.random.default_rng(seed)
    cb = Codebook.from_embeddings(rng.normal(size=(k, 3)))
    table = hard_assign(cb, rng.normal(size=(n, h, 3)))
    assert table.popularity.sum() == n * h
    assert table.head_usage().sum() == n * h
    np.testing.assert_array_equal(table.head_usage().sum(1), table.popularity)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (7, 3), elements=st.floats(-10, 10)),
       arrays(np.float64, (5, 3), elements=st.floats(-10, 10)))
def test_fast_and_exact_distances_agree(x, e):
    np.testing.assert_allclose(squared_distances(x, e), exact_squared_distances(x, e),
                               rtol=1e-7, atol=1e-6)


def test_soft_em_matches_enumerated_softmax():
    rng = np.random.default_rng(3)
    cb = Codebook.from_embeddings(rng.normal(scale=0.7, size=(8, 4)))
    x = rng.normal(scale=0.5, size=4)
    codes, _ = soft_assign_batch(cb, x, 100_000, make_rng(11))
    freq = np.bincount(codes, minlength=8) / codes.size
    tv = 0.5 * np.abs(freq - enumerated_softmax(x, cb.embeddings)).sum()
    assert tv < 0.01


def test_soft_assign_average_and_determinism():
    rng = np.random.default_rng(4)
    cb = Codebook.from_embeddings(rng.normal(size=(6, 3)))
    x = rng.normal(size=3)
    a = soft_assign(cb, x, 30, make_rng(5))
    b = soft_assign(cb, x, 30, make_rng(5))
    assert np.array_equal(a.sampled_codes, b.sampled_codes)
    np.testing.assert_allclose(a.quantized, cb.embeddings[a.sampled_codes].mean(0))


def test_single_code_quantizes_to_it():
    cb = Codebook.from_embeddings(np.array([[0.5, -1.0]]))
    out = soft_assign(cb, np.array([9.0, 9.0]), 7, make_rng(0))
    assert (out.sampled_codes == 0).all()
    np.testing.assert_array_equal(out.quantized, [0.5, -1.0])


def test_soft_agrees_with_hard_when_gap_is_large():
    cb = Codebook.from_embeddings(np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]]))
    x = np.array([0.1, 0.1])
    p = softmax_neg(squared_distances(x, cb.embeddings))
    assert p.max() > 0.999
    codes, _ = soft_assign_batch(cb, x, 20_000, make_rng(2))
    assert (codes == hard_assign(cb, x[None, None]).codes[0, 0]).mean() > 0.998


def test_non_finite_input_rejected():
    cb = Codebook.from_embeddings(np.eye(2))
    with pytest.raises(ValueError):
        soft_assign(cb, np.array([np.nan, 0.0]), 3, make_rng(0))
    with pytest.raises(ValueError):
        soft_assign(cb, np.zeros(2), 0, make_rng(0))


def test_inverse_cdf_endpoints():
    p = np.array([0.25, 0.0, 0.75])
    assert list(inverse_cdf_sample(p, np.array([0.0, 0.2499, 0.25, 0.999999]))) == [0, 0, 2, 2]


def test_ema_empty_batch_only_decays():
    cb = Codebook.from_embeddings(np.array([[1.0, 2.0], [3.0, 4.0]]), counts=2.0)
    before = cb.embeddings.copy()
    ema_update(cb, np.zeros((0, 2)), np.zeros(0, dtype=int))
    np.testing.assert_allclose(cb.ema_counts, [1.98, 1.98])
    np.testing.assert_allclose(cb.embeddings, before)


def test_ema_fixed_point():
    cb = Codebook.from_embeddings(np.zeros((1, 3)))
    v = np.array([[0.3, 0.1, -0.7]])
    for _ in range(1000):
        ema_update(cb, v, np.array([0]))
    np.testing.assert_allclose(cb.embeddings[0], v[0], atol=1e-4)


def test_ema_invariant_holds():
    rng = np.random.default_rng(6)
    cb = Codebook.from_embeddings(rng.normal(size=(4, 3)))
    for _ in range(20):
        ema_update(cb, rng.normal(size=(10, 3)), rng.integers(0, 4, 10))
    expect = cb.ema_sums / np.maximum(cb.ema_counts, cb.epsilon)[:, None]
    np.testing.assert_allclose(cb.embeddings, expect)


def test_ema_rejects_bad_code():
    cb = Codebook.from_embeddings(np.eye(2))
    with pytest.raises(ValueError):
        ema_update(cb, np.zeros((1, 2)), np.array([2]))


def test_ema_stays_finite_under_many_updates():
    rng = np.random.default_rng(7)
    cb = Codebook.from_embeddings(rng.normal(size=(3, 2)))
    vecs = rng.uniform(-1, 1, size=(1000, 2))
    for step in range(1000):
        # a code that is never hit decays towards zero count
        ema_update(cb, vecs[step:step + 1], np.array([step % 2]))
    assert np.isfinite(cb.embeddings).all()


def run_four_gaussians(seed, steps=2000, batch=32):
    means = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    rng = make_rng(seed)

    def sample():
        idx = rng.integers(0, 4, batch)
        return means[idx] + rng.normal(scale=0.05, size=(batch, 2))

    cb = Codebook.from_embeddings(farthest_point_init(sample(), 4), counts=1.0)
    for _ in range(steps):
        x = sample()
        table = hard_assign(cb, x[:, None, :])
        ema_update(cb, x, table.codes[:, 0])
    return means, cb.embeddings


def four_gaussian_ok(means, emb):
    d = np.sqrt(exact_squared_distances(emb, means))
    nearest = d.argmin(1)
    return len(set(nearest)) == 4 and d.min(1).max() < 0.1


def test_four_gaussians_single_seed():
    means, emb = run_four_gaussians(0)
    assert four_gaussian_ok(means, emb)


def test_head_purity_counts():
    from qtsum.quantizer import AssignmentTable
    codes = np.array([[0, 1], [0, 1], [1, 1]])
    table = AssignmentTable(codes, np.zeros(codes.shape), np.bincount(codes.ravel(), minlength=3))
    purity, owner = head_purity(table)
    # code 0 only on head 0; code 1 on head 1 three times and head 0 once
    assert purity == pytest.approx(5 / 6)
    assert list(owner) == [0, 1, -1]
