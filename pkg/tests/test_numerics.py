import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cmgn.errors import DegenerateInputError, ShapeError
from cmgn.numerics import (
    COS_MAX,
    COS_MIN,
    cosine_batch,
    l2_normalize,
    normalize_columns,
    stable_log_softmax,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
nonzero_vectors = arrays(np.float64, st.integers(2, 8), elements=finite).filter(
    lambda v: np.linalg.norm(v) > 1e-6
)


def test_normalize_pythagorean():
    np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], rtol=0, atol=1e-15)


def test_normalize_unit_vector_unchanged():
    np.testing.assert_array_equal(l2_normalize([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])


def test_normalize_zero_vector_rejected():
    with pytest.raises(DegenerateInputError):
        l2_normalize([0.0, 0.0])


@given(nonzero_vectors)
def test_normalize_unit_norm_and_idempotent(v):
    u = l2_normalize(v)
    assert abs(np.linalg.norm(u) - 1.0) < 1e-12
    np.testing.assert_allclose(l2_normalize(u), u, rtol=0, atol=1e-12)


def test_cosine_batch_clamps_self_and_antipodal():
    w = normalize_columns(np.array([[1.0, 0.0], [0.0, 1.0]]))
    x = np.array([[1.0, 0.0], [-1.0, 0.0]])
    c = cosine_batch(x, w)
    assert c[0, 0] == COS_MAX == 1 - 1e-7
    assert c[1, 0] == COS_MIN == -1 + 1e-7
    assert c[0, 1] == 0.0


def test_cosine_batch_shape_mismatch():
    with pytest.raises(ShapeError):
        cosine_batch(np.ones((2, 3)), np.ones((4, 5)))


@given(arrays(np.float64, (3, 4), elements=st.floats(-10, 10)), st.floats(0.01, 100))
def test_cosine_batch_scale_invariant(raw, scale):
    if np.any(np.linalg.norm(raw, axis=1) < 1e-3):
        return
    rng = np.random.default_rng(0)
    w = normalize_columns(rng.standard_normal((4, 5)))
    a = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    b = scale * raw
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    np.testing.assert_allclose(cosine_batch(a, w), cosine_batch(b, w), rtol=0, atol=1e-12)


def test_log_softmax_symmetric():
    np.testing.assert_allclose(stable_log_softmax([0.0, 0.0]), [-math.log(2)] * 2, rtol=0, atol=1e-15)


def test_log_softmax_large_logit_no_overflow():
    out = stable_log_softmax([1000.0, 0.0])
    assert np.all(np.isfinite(out))
    assert abs(out[0]) < 1e-300
    assert abs(out[1] + 1000.0) < 1e-12


def test_log_softmax_matches_direct_formula(rng):
    x = rng.uniform(-3, 3, size=5)
    direct = np.log(np.exp(x) / np.sum(np.exp(x)))
    np.testing.assert_allclose(stable_log_softmax(x), direct, rtol=0, atol=1e-14)


def test_log_softmax_rejects_nonfinite():
    with pytest.raises(ValueError):
        stable_log_softmax([0.0, np.nan])


@given(arrays(np.float64, st.integers(1, 10), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_log_softmax_shift_invariant(x, c):
    out = stable_log_softmax(x)
    assert abs(np.sum(np.exp(out)) - 1.0) < 1e-12
    np.testing.assert_allclose(stable_log_softmax(x + c), out, rtol=0, atol=1e-12)
