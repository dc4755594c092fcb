import math

import numpy as np
import pytest

from qadam.errors import ConfigError
from qadam.problems import (
    GradientStream,
    LogisticSynthetic,
    Quadratic,
    logistic_from_csv,
    logistic_synthetic,
    make_problem,
    mlp_tiny,
    quadratic,
)

DRAWS = 100_000


def small_problems():
    return [
        quadratic(6, 4.0, (-0.3, 0.1, 0.2), seed=2),
        logistic_synthetic(5, 60, 8, seed=1, label_noise=0.1),
        mlp_tiny((3, 4, 2), "tanh", 5, n_samples=24, batch=6),
    ]


def central_difference(f, x, h=1e-5):
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def draw_stats(p, x, seed, draws=DRAWS):
    stream = GradientStream([seed, 99])
    total = np.zeros(p.dim)
    total_sq = np.zeros(p.dim)
    biggest = 0.0
    for _ in range(draws):
        g = p.stochastic_gradient(x, stream)
        total += g
        total_sq += g * g
        biggest = max(biggest, float(np.linalg.norm(g)))
    return total / draws, total_sq / draws, biggest


def test_stream_is_counter_based():
    a = GradientStream(5)
    first = [a.next().random(3) for _ in range(4)]
    b = GradientStream(5, counter=2)
    assert np.array_equal(b.next().random(3), first[2])
    assert np.array_equal(GradientStream(5).generator(3).random(3), first[3])
    assert not np.array_equal(GradientStream(6).generator(0).random(3), first[0])
    assert not np.array_equal(GradientStream([5, 1]).generator(0).random(3), first[0])


def test_quadratic_examples():
    p = Quadratic([1.0, 1.0], [0.0, 0.0])
    assert p.full_gradient([3.0, 4.0]).tolist() == [3.0, 4.0]
    assert p.loss([3.0, 4.0]) == 12.5
    q = Quadratic([1.0, 2.0], [0.5, 0.0], noise=(-0.25, 0.25))
    x = np.array([1.0, 1.0])
    assert np.allclose(q.second_moment(x), q.full_gradient(x) ** 2 + 0.0625, rtol=0, atol=1e-15)


def test_quadratic_validation():
    with pytest.raises(ConfigError):
        quadratic(3, 0.5)
    with pytest.raises(ConfigError):
        quadratic(3, 1.0, (0.1, 0.2))
    with pytest.raises(ConfigError):
        quadratic(0)


def test_logistic_full_batch():
    p = logistic_synthetic(4, 30, 30, seed=0)
    x = np.random.default_rng(0).normal(size=4)
    assert np.allclose(p.full_gradient(x), p.per_sample_gradients(x).mean(axis=0), rtol=1e-13)
    assert np.array_equal(p.stochastic_gradient(x, GradientStream(1)), p.full_gradient(x))
    with pytest.raises(ConfigError):
        logistic_synthetic(4, 30, 0)
    with pytest.raises(ConfigError):
        logistic_synthetic(4, 30, 31)


def test_logistic_separable_optimum():
    p = logistic_synthetic(5, 200, 200, seed=3)
    # oracle: plain full-batch gradient descent
    x = np.zeros(p.dim)
    for _ in range(3000):
        x = x - p.full_gradient(x) / p.bounds.L
    start = np.linalg.norm(p.full_gradient(np.zeros(p.dim)))
    assert np.linalg.norm(p.full_gradient(x)) < 0.05 * start
    assert x @ p.w_true / np.linalg.norm(x) > 0.9
    # far along the separator the gradient is small too
    assert np.linalg.norm(p.full_gradient(100 * p.w_true)) < 0.05 * start


def test_logistic_csv(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("a,b,label\n1.0,2.0,1\n-1.0,0.5,0\n0.0,1.0,1\n")
    p = logistic_from_csv(path, batch=2)
    assert p.dim == 2 and p.n == 3
    assert p.y.tolist() == [1.0, -1.0, 1.0]
    bad = tmp_path / "bad.csv"
    bad.write_text("a,label\nx,1\n")
    with pytest.raises(ConfigError):
        logistic_from_csv(bad, 1)


def test_mlp_validation():
    with pytest.raises(ConfigError):
        mlp_tiny((3, 1))
    with pytest.raises(ConfigError):
        mlp_tiny((3, 0, 1))
    with pytest.raises(ConfigError):
        mlp_tiny((3, 4, 1), activation="relu")


@pytest.mark.parametrize("activation", ["tanh", "softplus", "sigmoid"])
def test_mlp_finite_differences(activation):
    p = mlp_tiny((3, 5, 4, 2), activation, 1, n_samples=20, batch=5)
    rng = np.random.default_rng(7)
    for _ in range(10):
        x = rng.normal(size=p.dim)
        fd = central_difference(p.loss, x)
        g = p.full_gradient(x)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


@pytest.mark.parametrize("p", small_problems(), ids=lambda p: p.name)
def test_finite_differences_all_problems(p):
    rng = np.random.default_rng(11)
    for _ in range(10):
        x = rng.normal(size=p.dim)
        fd = central_difference(p.loss, x)
        assert np.linalg.norm(p.full_gradient(x) - fd) <= 1e-5 * np.linalg.norm(fd)


def test_mlp_sign_flip_symmetry():
    p = mlp_tiny((3, 4, 1), "tanh", 2)
    x = np.random.default_rng(1).normal(size=p.dim)
    # zero the last layer and flip its sign: output is 0 either way
    last = p.shapes[-1][0] * p.shapes[-1][1] + p.shapes[-1][0]
    x[-last:] = 0.0
    flipped = x.copy()
    flipped[-last:] *= -1
    assert p.loss(x) == p.loss(flipped)
    assert math.isclose(p.loss(x), 0.5 * float(np.mean(np.sum(p.targets**2, axis=1))), rel_tol=1e-14)


def test_mlp_descends():
    p = mlp_tiny((3, 6, 1), "tanh", 4)
    x = p.x0.copy()
    losses = [p.loss(x)]
    for _ in range(50):
        x = x - 0.05 * p.full_gradient(x)
        losses.append(p.loss(x))
    assert all(b < a for a, b in zip(losses, losses[1:]))


@pytest.mark.parametrize("p", small_problems(), ids=lambda p: p.name)
def test_unbiased_bounded_and_second_moment(p):
    rng = np.random.default_rng(0)
    for point in range(5):
        x = rng.normal(size=p.dim)
        mean, mean_sq, biggest = draw_stats(p, x, point)
        full = p.full_gradient(x)
        stderr = np.sqrt(np.maximum(mean_sq - mean**2, 0.0) / DRAWS)
        assert np.all(np.abs(mean - full) <= 3 * stderr + 1e-12)
        if p.bounds.G is not None:
            assert biggest <= p.bounds.G
        sm = p.second_moment(x)
        if sm is not None:
            # rough band for E[g^2]: the fourth moment is bounded by max|g|^4
            band = 3 * biggest**2 / math.sqrt(DRAWS)
            assert np.all(np.abs(mean_sq - sm) <= band)


def test_make_problem():
    assert make_problem("quadratic", 4).dim == 4
    assert isinstance(make_problem("logistic", 6, 1), LogisticSynthetic)
    assert make_problem("mlp", 3).widths == (3, 8, 1)
    with pytest.raises(ConfigError):
        make_problem("resnet")
