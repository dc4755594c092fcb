import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qadam.errors import ConfigError, CorruptionError, UndefinedDeltaError
from qadam.quantize import (
    QuantizedTensor,
    Quantizer,
    contraction_factor,
    dequantize,
    grid_levels,
    half_levels,
    quantize_midpoint,
    quantize_ternary,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
vectors = arrays(np.float64, st.integers(1, 30), elements=finite)
bits = st.integers(2, 8)


def nearest_code_oracle(x, k):
    """Brute-force arg min over the grid in exact rationals, ties away from zero."""
    n = half_levels(k)
    scale = max(abs(Fraction(v)) for v in x)
    if scale == 0:
        return [n] * len(x)
    grid = [Fraction(c - n, n) for c in range(2 * n + 1)]
    return [min(range(2 * n + 1), key=lambda c: (abs(grid[c] - Fraction(v) / scale), -abs(grid[c]))) for v in x]


def test_grid_shape():
    for k in (2, 3, 4, 8):
        g = grid_levels(k)
        assert g.size == 2**k - 1
        assert g[0] == -1.0 and g[-1] == 1.0
        assert np.array_equal(g, -g[::-1])
        assert np.allclose(np.diff(g), 1.0 / half_levels(k))


def test_spec_examples():
    q = quantize_midpoint([1.0, -0.5, 0.1], 3)
    assert q.scale == 1.0
    assert np.allclose(dequantize(q), [1.0, -2.0 / 3.0, 0.0])
    z = quantize_midpoint([0.0, 0.0, 0.0], 2)
    assert z.scale == 0.0 and z.codes.tolist() == [1, 1, 1]
    assert dequantize(quantize_midpoint([1.0, 0.0, 0.0], 2)).tolist() == [1.0, 0.0, 0.0]


def test_ternary_examples():
    assert dequantize(quantize_ternary([0.9, 0.3, -0.6])).tolist() == [0.9, 0.0, -0.9]
    assert dequantize(quantize_ternary([0.0, 0.0])).tolist() == [0.0, 0.0]
    assert dequantize(quantize_ternary([1.0])).tolist() == [1.0]
    # boundary |x_i| = scale/2 goes to zero
    assert dequantize(quantize_ternary([1.0, 0.5, -0.5])).tolist() == [1.0, 0.0, 0.0]


def test_dequantize_examples():
    assert dequantize(QuantizedTensor(1.0, 2, [2, 1, 0])).tolist() == [1.0, 0.0, -1.0]
    assert dequantize(QuantizedTensor(0.0, 3, [3, 3])).tolist() == [0.0, 0.0]
    assert dequantize(QuantizedTensor(2.0, 3, [6, 3])).tolist() == [2.0, 0.0]
    with pytest.raises(CorruptionError):
        dequantize(QuantizedTensor(1.0, 2, [3]))


def test_contraction_examples():
    assert contraction_factor([1.0, 0.0, 0.0], quantize_midpoint([1.0, 0.0, 0.0], 2)) == 1.0
    d = contraction_factor([1.0, 0.5], quantize_midpoint([1.0, 0.5], 2))
    assert math.isclose(d, 1 - 0.5 / math.sqrt(1.25), rel_tol=1e-15)
    x = np.array([0.3, -2.0, 7.0])
    assert contraction_factor(x, Quantizer()(x)) == 1.0
    with pytest.raises(UndefinedDeltaError):
        contraction_factor([0.0, 0.0], quantize_midpoint([0.0, 0.0], 2))


def test_bit_width_validation():
    for bad in (1, 0, -3, 33, 2.5, True):
        with pytest.raises(ConfigError):
            quantize_midpoint([1.0], bad)


@given(vectors, bits)
def test_matches_nearest_point_oracle(x, k):
    assert quantize_midpoint(x, k).codes.tolist() == nearest_code_oracle(x, k)


@given(vectors, bits)
def test_error_bound_and_magnitude(x, k):
    q = quantize_midpoint(x, k)
    v = dequantize(q)
    scale = np.max(np.abs(x))
    assert q.scale == scale
    assert np.all(np.abs(v) <= scale)
    assert np.all(np.abs(x - v) <= scale / (2 * half_levels(k)) + 1e-12)


@given(vectors, bits)
def test_idempotent_and_odd(x, k):
    q = quantize_midpoint(x, k)
    v = dequantize(q)
    assert np.array_equal(dequantize(quantize_midpoint(v, k)), v)
    assert np.array_equal(dequantize(quantize_midpoint(-x, k)), -v)


@given(vectors)
def test_ternary_decomposition(x):
    q = quantize_ternary(x)
    assert q.scale == np.max(np.abs(x))
    assert set(np.unique(grid_levels(2)[q.codes])) <= {-1.0, 0.0, 1.0}
    assert np.array_equal(dequantize(quantize_ternary(-x)), -dequantize(q))


@given(st.integers(1, 64), st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_worst_case_contraction(d, k, seed):
    bound = math.sqrt(d) / (2 * half_levels(k))
    if bound >= 1:
        return
    x = np.random.default_rng(seed).standard_normal(d)
    assert contraction_factor(x, quantize_midpoint(x, k)) >= 1 - bound - 1e-12


def test_quantizer_parse_and_bits():
    assert Quantizer.parse("fp").is_identity
    assert Quantizer.parse("ternary").k == 2
    assert Quantizer.parse(3).k == 3
    assert Quantizer.parse(" 8 ").label() == "8"
    with pytest.raises(ConfigError):
        Quantizer.parse("three")
    assert Quantizer.parse("fp").message_bits(10) == 640
    assert Quantizer.parse(3).message_bits(10_000) == 30136


def test_identity_is_exact_copy():
    x = np.array([0.1, -3.0, 1e-300])
    q = Quantizer()
    out = q(x)
    assert np.array_equal(out, x) and out is not x


def test_quantized_tensor_equality_is_bitwise():
    a = QuantizedTensor(1.0, 3, [1, 2])
    assert a == QuantizedTensor(1.0, 3, [1, 2])
    assert a != QuantizedTensor(1.0, 3, [1, 3])
    assert QuantizedTensor(0.0, 2, [1]) != QuantizedTensor(-0.0, 2, [1])
    assert hash(a) == hash(QuantizedTensor(1.0, 3, np.array([1, 2])))
