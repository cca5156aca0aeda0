import numpy as np
import pytest
from scipy import stats

from multicenter import _accel, numerics
from multicenter.numerics import RngStream, gemm, philox4x32, softmax_xent, standard_normal
from oracles import naive_matmul

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


# Random123 known-answer vectors for Philox4x32-10: (counter words, key words, output)
PHILOX_KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    (
        (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
        (0xA4093822, 0x299F31D0),
        (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
    ),
]


@pytest.mark.parametrize("ctr,key,expected", PHILOX_KAT)
def test_philox_known_answers(ctr, key, expected):
    start = ctr[0] | (ctr[1] << 32)
    stream = ctr[2] | (ctr[3] << 32)
    seed = key[0] | (key[1] << 32)
    assert tuple(int(w) for w in philox4x32(seed, stream, start, 1)[0]) == expected
    assert tuple(int(w) for w in numerics._philox_numpy(seed, stream, start, 1)[0]) == expected


def test_standard_normal_empty():
    assert standard_normal(RngStream(3), 0).shape == (0,)


def test_standard_normal_moments():
    z = standard_normal(RngStream(12345), 10**6)
    assert abs(z.mean()) < 0.005
    assert abs(z.var() - 1.0) < 0.01


def test_standard_normal_deterministic():
    a = standard_normal(RngStream(99, 4), 1001)
    b = standard_normal(RngStream(99, 4), 1001)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("seed", [0, 1, 2024, 2**63 + 7])
def test_standard_normal_ks(seed):
    z = standard_normal(RngStream(seed), 10**5)
    assert stats.kstest(z, "norm").pvalue > 0.001


def test_uniform_ks_and_range():
    u = RngStream(5).uniform(10**5)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").pvalue > 0.001


def test_stream_draws_continue():
    rng = RngStream(8)
    head = rng.standard_normal(6)
    tail = rng.standard_normal(6)
    both = RngStream(8).standard_normal(12)
    np.testing.assert_array_equal(np.concatenate([head, tail]), both)


def test_substreams_differ():
    root = RngStream(42)
    a = root.spawn(1).standard_normal(64)
    b = root.spawn(2).standard_normal(64)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, RngStream(42, 1).standard_normal(64))


def test_permutation_and_beta():
    perm = RngStream(1).permutation(50)
    assert sorted(perm.tolist()) == list(range(50))
    rng = RngStream(2)
    draws = np.array([rng.beta(0.8, 0.8) for _ in range(4000)])
    assert draws.min() >= 0.0 and draws.max() <= 1.0
    assert stats.kstest(draws, "beta", args=(0.8, 0.8)).pvalue > 0.001


def test_rng_rejects_negative():
    with pytest.raises(ValueError):
        RngStream(1).standard_normal(-1)
    with pytest.raises(ValueError):
        RngStream(-1)


def test_gemm_identity():
    b = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(gemm(np.eye(3), b), b)


def test_gemm_small():
    np.testing.assert_array_equal(gemm([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]]), [[3.0], [7.0]])


def test_gemm_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
    # the naive loop sums in the same order, so the match is exact
    np.testing.assert_array_equal(gemm(a, b), naive_matmul(a, b))


def test_gemm_shape_mismatch():
    with pytest.raises(ValueError, match=r"\(2, 3\) @ \(2, 3\)"):
        gemm(np.ones((2, 3)), np.ones((2, 3)))


def test_gemm_bit_reproducible():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(17, 9)), rng.normal(size=(9, 5))
    assert gemm(a, b).tobytes() == gemm(a.copy(), b.copy()).tobytes()


def test_gemm_non_contiguous_operands():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(6, 4))
    b = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(gemm(a.T, b), naive_matmul(np.ascontiguousarray(a.T), b))


def test_softmax_xent_matches_definition():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(5, 7)) * 4
    t = rng.dirichlet(np.ones(7), size=5)
    losses, probs = softmax_xent(z, t)
    expected_p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(probs, expected_p, rtol=1e-13)
    np.testing.assert_allclose(losses, -np.sum(t * np.log(expected_p), axis=1), rtol=1e-12)


def test_softmax_xent_extreme_logits():
    z = np.array([[1000.0, -1000.0, 0.0]])
    t = np.array([[1.0, 0.0, 0.0]])
    losses, probs = softmax_xent(z, t)
    assert np.all(np.isfinite(probs)) and losses[0] == 0.0


@needs_numba
def test_backends_agree_bitwise():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(33, 21)), rng.normal(size=(21, 12))
    assert numerics._gemm_loop(a, b).tobytes() == numerics._gemm_numpy(a, b).tobytes()

    words = numerics._philox_numpy(77, 3, 2**64 - 10, 500)
    loop_words = numerics._philox_loop(np.uint64(77), np.uint64(3), np.uint64(2**64 - 10), 500)
    np.testing.assert_array_equal(words, loop_words)
    assert numerics._box_muller_loop(words).tobytes() == numerics._box_muller_numpy(words).tobytes()

    z = rng.normal(size=(40, 9)) * 6
    t = rng.dirichlet(np.ones(9), size=40)
    l1, p1 = numerics._softmax_xent_loop(z, t)
    l2, p2 = numerics._softmax_xent_numpy(z, t)
    assert l1.tobytes() == l2.tobytes() and p1.tobytes() == p2.tobytes()
