import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdnad.core_math import (
    ContractError,
    Rng,
    affine,
    gaussian_log_pdf,
    inverse_softplus,
    log_sum_exp,
    matmul,
    relu,
    relu_grad,
    rng_normal,
    rng_shuffle,
    softmax,
    softplus,
    softplus_grad,
    tanh,
    tanh_grad,
)
from oracles import trapezoid

finite = st.floats(min_value=-500, max_value=500, allow_nan=False)
vectors = st.lists(finite, min_size=1, max_size=12)


def test_log_sum_exp_examples():
    assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert log_sum_exp([-1000.0, -1000.0]) == pytest.approx(-1000 + math.log(2), abs=1e-12)
    assert log_sum_exp([3.0]) == 3.0
    assert log_sum_exp([-np.inf, 1.0]) == 1.0


@pytest.mark.parametrize("bad, msg", [([], "empty"), ([-np.inf, -np.inf], "degenerate mixture"), ([np.nan], "finite")])
def test_log_sum_exp_errors(bad, msg):
    with pytest.raises(ContractError, match=msg):
        log_sum_exp(bad)


def test_log_sum_exp_rowwise():
    v = np.array([[0.0, 0.0], [3.0, -np.inf]])
    np.testing.assert_allclose(log_sum_exp(v, axis=1), [math.log(2), 3.0])


@given(vectors, st.floats(min_value=-1e3, max_value=1e3))
def test_log_sum_exp_shift_invariance(v, c):
    assert log_sum_exp(np.array(v) + c) == pytest.approx(log_sum_exp(v) + c, abs=1e-9)


def test_gaussian_log_pdf_examples():
    assert gaussian_log_pdf(0, 0, 1) == pytest.approx(-0.9189385332046727, abs=1e-15)
    assert gaussian_log_pdf(1.7, 1.7, 0.3) == pytest.approx(-0.5 * math.log(2 * math.pi) - math.log(0.3))
    assert gaussian_log_pdf(2, 0, 1) == pytest.approx(-2.9189385332046727, abs=1e-15)
    with pytest.raises(ContractError):
        gaussian_log_pdf(0, 0, 0)
    with pytest.raises(ContractError):
        gaussian_log_pdf(0, 0, -1)


@pytest.mark.parametrize("mu, sigma", [(0.0, 1.0), (3.0, 0.01), (-2.5, 7.0)])
def test_gaussian_pdf_integrates_to_one(mu, sigma):
    total = trapezoid(lambda y: np.exp(gaussian_log_pdf(y, mu, sigma)), mu - 10 * sigma, mu + 10 * sigma, 10_000)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=0, atol=1e-15)
    # exp(0) : exp(ln 3) = 1 : 3
    for c in (0.0, 500.0):
        np.testing.assert_allclose(softmax([c, c + math.log(3)]), [0.25, 0.75], rtol=0, atol=1e-12)
    assert softmax([5.0]).tolist() == [1.0]
    with pytest.raises(ContractError):
        softmax([0.0, np.inf])


# spread below 745 keeps every exp() representable, so entries stay positive
logit_vectors = st.lists(st.floats(min_value=-300, max_value=300), min_size=1, max_size=12)


@given(logit_vectors, st.floats(min_value=-100, max_value=100))
def test_softmax_simplex_and_shift(v, c):
    p = softmax(v)
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) < 1e-9
    np.testing.assert_allclose(softmax(np.array(v) + c), p, rtol=0, atol=1e-9)
    # logits that differ by less than an ulp tie after exp()
    assert p[np.argmax(v)] == p.max()


def test_softplus_examples():
    assert softplus(0.0) == pytest.approx(math.log(2), abs=1e-15)
    assert softplus(1000.0) == 1000.0
    s = softplus(-1000.0)
    assert 0 < s <= 1e-300


@given(st.floats(min_value=-1e4, max_value=1e4))
def test_softplus_positive(z):
    assert softplus(z) > 0
    if z > 50:
        assert abs(softplus(z) - z) < 1e-9


def test_softplus_monotone():
    z = np.linspace(-40, 40, 2001)
    assert np.all(np.diff(softplus(z)) > 0)


@pytest.mark.parametrize("s", [1e-3, 0.5, 1.0, 20.0])
def test_inverse_softplus(s):
    assert softplus(inverse_softplus(s)) == pytest.approx(s, rel=1e-12)


@pytest.mark.parametrize(
    "f, df, points",
    [
        (relu, relu_grad, [-2.0, -0.3, 0.4, 3.0]),
        (tanh, tanh_grad, [-3.0, -0.5, 0.0, 0.7, 2.0]),
        (softplus, softplus_grad, [-30.0, -2.0, 0.0, 1.5, 30.0]),
    ],
)
def test_elementwise_gradients_match_finite_differences(f, df, points):
    h = 1e-5
    for z in points:
        fd = (f(np.float64(z + h)) - f(np.float64(z - h))) / (2 * h)
        an = float(df(np.float64(z)))
        assert abs(fd - an) <= 1e-6 * max(abs(an), abs(fd), 1e-7) or abs(fd - an) < 1e-10


def test_relu_examples():
    assert relu(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]
    assert relu_grad(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 1.0]


def test_matmul_and_affine():
    m = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(matmul(np.eye(2), m), m)
    b = np.array([1.0, -2.0])
    x = np.ones((4, 3))
    np.testing.assert_array_equal(affine(x, np.zeros((2, 3)), b), np.tile(b, (4, 1)))
    with pytest.raises(ContractError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(m, m)
    with pytest.raises(ContractError, match="shape mismatch"):
        affine(np.ones((4, 2)), np.zeros((2, 3)), b)


def test_rng_is_deterministic():
    a, b = Rng(42), Rng(42)
    assert [a.next_u64() for _ in range(10)] == [b.next_u64() for _ in range(10)]
    np.testing.assert_array_equal(Rng(1).normal(101), Rng(1).normal(101))
    np.testing.assert_array_equal(Rng(1).shuffle(50), Rng(1).shuffle(50))
    assert Rng(1).next_u64() != Rng(2).next_u64()


def test_rng_seed_expansion_matches_splitmix64_reference():
    # published splitmix64 outputs for seed 0
    assert Rng(0)._s[:3] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_rng_reference_stream():
    # frozen first outputs: any change to seeding or the generator breaks
    # reproducibility of every stored experiment
    r = Rng(0)
    assert [r.next_u64() for _ in range(3)] == FROZEN_SEED0


FROZEN_SEED0 = [11091344671253066420, 13793997310169335082, 1900383378846508768]


def test_rng_shuffle_small_cases():
    assert rng_shuffle(Rng(3), 1).tolist() == [0]
    assert rng_shuffle(Rng(3), 0).tolist() == []
    p = rng_shuffle(Rng(3), 100)
    assert sorted(p.tolist()) == list(range(100))


def test_rng_normal_moments():
    draws = rng_normal(Rng(2024), 100_000)
    assert abs(draws.mean()) < 0.02
    assert abs(draws.std() - 1.0) < 0.02


def test_rng_uniform_range():
    u = Rng(5).uniform(10_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01


def test_rng_below_is_in_range():
    r = Rng(9)
    vals = [r.below(7) for _ in range(7000)]
    assert set(vals) == set(range(7))
    counts = np.bincount(vals)
    assert counts.min() > 850


def test_derived_streams_differ():
    root = Rng(10)
    assert root.derive(1).next_u64() != root.derive(2).next_u64()
    assert Rng(10).derive(1).next_u64() == Rng(10).derive(1).next_u64()
