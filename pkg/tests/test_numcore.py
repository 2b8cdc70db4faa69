import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from demn.errors import DegenerateVectorError, OracleError, ShapeError, TrainingDivergenceError
from demn.numcore import (
    ParamGroup, dot, finite_diff_grad, l2_normalize, mat_vec_left, relative_error, sgd_step, softmax, tanh_map,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def vectors(min_size=1, max_size=12):
    return st.integers(min_size, max_size).flatmap(lambda n: arrays(np.float64, n, elements=finite))


def test_dot_examples():
    assert dot([1, 0], [0, 1]) == 0
    assert dot([1, 2], [3, 4]) == 11
    u = l2_normalize([0.3, -1.2, 2.0])
    assert dot(u, u) == pytest.approx(1.0, abs=1e-12)


def test_dot_length_mismatch():
    with pytest.raises(ShapeError):
        dot([1, 2], [1, 2, 3])


def test_mat_vec_left_examples(rng):
    v = rng.normal(size=4)
    np.testing.assert_array_equal(mat_vec_left(v, np.eye(4)), v)
    np.testing.assert_array_equal(mat_vec_left([1, 1], [[1, 0], [0, 2]]), [1, 2])


def test_mat_vec_left_matches_double_loop(rng):
    for _ in range(20):
        r, c = rng.integers(1, 7, size=2)
        v, M = rng.normal(size=r), rng.normal(size=(r, c))
        expected = [sum(v[i] * M[i, j] for i in range(r)) for j in range(c)]
        np.testing.assert_allclose(mat_vec_left(v, M), expected, rtol=1e-12, atol=1e-12)


def test_mat_vec_left_shape_error():
    with pytest.raises(ShapeError):
        mat_vec_left([1, 2, 3], np.eye(2))


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize([3, 4]), [0.6, 0.8], atol=1e-15)
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(l2_normalize(u), u)
    with pytest.raises(DegenerateVectorError):
        l2_normalize([0, 0])
    with pytest.raises(DegenerateVectorError):
        l2_normalize([1e-13, 0])


@given(vectors())
def test_l2_normalize_properties(v):
    if np.linalg.norm(v) <= 1e-12:
        with pytest.raises(DegenerateVectorError):
            l2_normalize(v)
        return
    u = l2_normalize(v)
    assert abs(np.linalg.norm(u) - 1) < 1e-9
    np.testing.assert_allclose(l2_normalize(u), u, atol=1e-12)
    assert dot(u, u) == pytest.approx(1.0, abs=1e-12)


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0, 0, 0]), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(softmax([math.log(2), 0, 0]), [0.5, 0.25, 0.25], atol=1e-15)
    with pytest.raises(ShapeError):
        softmax([])


def test_softmax_large_logits_match_extended_precision():
    got = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(got))
    with mpmath.workdps(50):
        e = [mpmath.exp(mpmath.mpf(x)) for x in (1000, 0)]
        ref = [float(x / sum(e)) for x in e]
    np.testing.assert_allclose(got, ref, rtol=1e-15, atol=1e-300)


def test_softmax_matches_mpmath_on_random_scores(rng):
    for _ in range(20):
        s = rng.normal(scale=20, size=int(rng.integers(1, 9)))
        with mpmath.workdps(40):
            e = [mpmath.exp(mpmath.mpf(float(x))) for x in s]
            ref = [float(x / sum(e)) for x in e]
        np.testing.assert_allclose(softmax(s), ref, rtol=1e-13, atol=1e-300)


@given(vectors(), st.floats(-100, 100))
def test_softmax_simplex_and_shift_invariance(s, shift):
    p = softmax(s)
    assert p.min() >= 0
    assert abs(p.sum() - 1) <= 1e-12
    np.testing.assert_allclose(softmax(s + shift), p, atol=1e-12)


def test_tanh_map_examples():
    assert tanh_map([0.0])[0] == 0.0
    assert tanh_map([30.0])[0] == pytest.approx(1.0)
    assert 1 - tanh_map([5.0])[0] < 1e-4


def test_tanh_matches_high_precision(rng):
    v = rng.normal(scale=3, size=200)
    with mpmath.workdps(40):
        ref = np.array([float(mpmath.tanh(mpmath.mpf(float(x)))) for x in v])
    np.testing.assert_allclose(tanh_map(v), ref, rtol=1e-12, atol=1e-15)


@given(vectors())
def test_tanh_range(v):
    t = tanh_map(v)
    assert np.all(np.abs(t) <= 1)


def test_sgd_step_examples():
    p = ParamGroup("w", np.array([1.0]))
    p.gradient[...] = 0.5
    sgd_step([p], 0.1)
    assert p.value[0] == pytest.approx(0.95)
    assert p.gradient[0] == 0.0
    sgd_step([p], 0.1)  # zero gradient is a fixed point
    assert p.value[0] == pytest.approx(0.95)


def test_sgd_two_steps_equal_summed_displacement(rng):
    g = rng.normal(size=5)
    a = ParamGroup("a", np.zeros(5))
    b = ParamGroup("b", np.zeros(5))
    for _ in range(2):
        a.gradient[...] = g
        sgd_step([a], 0.1)
    b.gradient[...] = 2 * g
    sgd_step([b], 0.1)
    np.testing.assert_allclose(a.value, b.value, atol=1e-15)


def test_sgd_divergence_leaves_values_untouched():
    a = ParamGroup("a", np.ones(2))
    b = ParamGroup("b", np.ones(2))
    a.gradient[...] = 1.0
    b.gradient[0] = np.nan
    with pytest.raises(TrainingDivergenceError):
        sgd_step([a, b], 0.1)
    np.testing.assert_array_equal(a.value, [1, 1])
    with pytest.raises(ValueError):
        sgd_step([a], 0.0)


def test_param_group_shape_check():
    with pytest.raises(ShapeError):
        ParamGroup("w", np.zeros(3), np.zeros(2))


def test_finite_diff_examples():
    theta = np.array([3.0])
    (g,) = finite_diff_grad(lambda: float(theta[0] ** 2), [theta], 1e-5)
    assert g[0] == pytest.approx(6.0, abs=1e-6)
    theta2 = np.array([1.0, 2.0])
    (g,) = finite_diff_grad(lambda: 4.2, [theta2], 1e-5)
    np.testing.assert_array_equal(g, [0, 0])
    np.testing.assert_array_equal(theta2, [1.0, 2.0])


def test_finite_diff_restores_parameters_bit_exactly(rng):
    w = rng.normal(size=(3, 4))
    before = w.copy()
    finite_diff_grad(lambda: float(np.sin(w).sum()), [w], 1e-5)
    np.testing.assert_array_equal(w, before)


def test_finite_diff_errors():
    w = np.array([1.0])
    with pytest.raises(ValueError):
        finite_diff_grad(lambda: 0.0, [w], 1e-3)
    with pytest.raises(OracleError):
        finite_diff_grad(lambda: float("nan"), [w], 1e-5)


def test_relative_error():
    assert relative_error([1, 2], [1, 2]) == 0
    assert relative_error([0, 0], [0, 0]) == 0
    assert relative_error([1, 0], [-1, 0]) == pytest.approx(1.0)


@settings(max_examples=25)
@given(vectors(2, 6))
def test_operations_are_pure(v):
    if np.linalg.norm(v) <= 1e-12:
        return
    np.testing.assert_array_equal(softmax(v), softmax(v.copy()))
    np.testing.assert_array_equal(l2_normalize(v), l2_normalize(v.copy()))
