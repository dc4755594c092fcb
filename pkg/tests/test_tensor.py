import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qadam.errors import DomainError, ShapeError
from qadam.tensor import as_tensor, dot, elementwise, fixed_sum, norm

# squares of tiny values underflow; keep them out of the norm comparisons
finite = st.floats(-1e6, 1e6, allow_nan=False).map(lambda v: 0.0 if abs(v) < 1e-100 else v)
vectors = arrays(np.float64, st.integers(0, 40), elements=finite)


def test_as_tensor_is_read_only_copy():
    src = np.array([1.0, 2.0])
    t = as_tensor(src)
    src[0] = 5.0
    assert t[0] == 1.0
    with pytest.raises(ValueError):
        t[0] = 3.0


@pytest.mark.parametrize("bad", [[1.0, np.nan], [np.inf], [-np.inf, 0.0]])
def test_as_tensor_rejects_non_finite(bad):
    with pytest.raises(DomainError):
        as_tensor(bad)


def test_elementwise_ops():
    a, b = [1.0, 4.0], [2.0, 2.0]
    assert elementwise("add", a, b).tolist() == [3.0, 6.0]
    assert elementwise("sub", a, b).tolist() == [-1.0, 2.0]
    assert elementwise("mul", a, b).tolist() == [2.0, 8.0]
    assert elementwise("div", a, b).tolist() == [0.5, 2.0]
    assert elementwise("square", a).tolist() == [1.0, 16.0]
    assert elementwise("sqrt", a).tolist() == [1.0, 2.0]
    assert elementwise("scale", a, 0.5).tolist() == [0.5, 2.0]


def test_elementwise_errors():
    with pytest.raises(ShapeError):
        elementwise("add", [1.0, 2.0], [1.0])
    with pytest.raises(DomainError):
        elementwise("div", [1.0], [0.0])
    with pytest.raises(DomainError):
        elementwise("sqrt", [0.0])
    with pytest.raises(ValueError):
        elementwise("pow", [1.0], [2.0])


def test_norms_small_cases():
    x = [3.0, -4.0]
    assert norm(x) == 5.0
    assert norm(x, "l1") == 7.0
    assert norm(x, "linf") == 4.0
    assert norm([]) == 0.0
    assert dot([1.0, 2.0], [3.0, 4.0]) == 11.0


def test_fixed_sum_is_left_to_right():
    # pairwise and sequential summation disagree on this input
    vals = np.array([1e16, 1.0, -1e16, 1.0] * 3)
    expected = 0.0
    for v in vals:
        expected += v
    assert fixed_sum(vals) == expected


@given(vectors)
def test_norm_matches_reference(x):
    assert math.isclose(norm(x), math.sqrt(math.fsum(x * x)), rel_tol=1e-12, abs_tol=1e-300)
    assert norm(x, "linf") <= norm(x) * (1 + 1e-12) + 1e-300
    assert norm(x) <= norm(x, "l1") * (1 + 1e-12) + 1e-300


@given(vectors)
def test_norm_is_deterministic(x):
    assert norm(x) == norm(x.copy())
