import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hkidqg.core import (
    ConfigError, Diagram, LinearMap, ShapeError, TextConstraint, cosine_sim, gaussian_init,
    make_rng, matmul, softmax_axis,
)

from conftest import naive_matmul

finite = st.floats(-50, 50, allow_nan=False)


def test_matmul_identity_and_hand_case():
    m = np.array([[1.5, -2.0], [0.25, 4.0]])
    np.testing.assert_array_equal(matmul(np.eye(2), m), m)
    np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[1], [1]]), [[3], [7]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a.tolist(), b.tolist()), atol=1e-12, rtol=0)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=50)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4, 2), elements=finite),
       arrays(np.float64, (2, 5), elements=finite))
def test_matmul_associative(a, b, c):
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    scale = max(1.0, np.abs(left).max())
    np.testing.assert_allclose(left, right, atol=1e-9 * scale * 1e3, rtol=1e-9)


def test_softmax_examples():
    np.testing.assert_array_equal(softmax_axis([[0.0, 0.0]]), [[0.5, 0.5]])
    out = softmax_axis([[1000.0, 0.0]])
    assert np.all(np.isfinite(out))
    assert out[0, 0] == pytest.approx(1.0) and out[0, 1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_matches_high_precision():
    mpmath.mp.dps = 50
    exps = [mpmath.e ** x for x in (1, 2, 3)]
    expected = [float(e / sum(exps)) for e in exps]
    np.testing.assert_allclose(softmax_axis([[1.0, 2.0, 3.0]])[0], expected, atol=1e-12, rtol=0)
    np.testing.assert_allclose(softmax_axis([[1.0], [2.0], [3.0]], "cols")[:, 0], expected, atol=1e-12, rtol=0)


@settings(max_examples=100)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite),
       st.sampled_from(["rows", "cols"]))
def test_softmax_sums_to_one(m, axis):
    out = softmax_axis(m, axis)
    sums = out.sum(axis=1 if axis == "rows" else 0)
    np.testing.assert_allclose(sums, 1.0, atol=1e-6)
    assert np.all(out > 0)


def test_cosine_examples():
    assert cosine_sim([1, 0], [1, 0]) == 1.0
    assert cosine_sim([1, 0], [0, 1]) == 0.0
    assert cosine_sim([1, 2, 3], [4, 5, 6]) == pytest.approx(32 / (math.sqrt(14) * math.sqrt(77)), abs=1e-15)
    assert cosine_sim([0, 0], [1, 2]) == 0.0
    with pytest.raises(ShapeError):
        cosine_sim([1, 2], [1, 2, 3])


@settings(max_examples=100)
@given(arrays(np.float64, 4, elements=st.floats(-10, 10)), arrays(np.float64, 4, elements=st.floats(-10, 10)),
       st.floats(0.01, 100))
def test_cosine_symmetric_and_scale_invariant(u, v, alpha):
    if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
        return
    assert cosine_sim(u, v) == cosine_sim(v, u)
    assert cosine_sim(alpha * u, v) == pytest.approx(cosine_sim(u, v), abs=1e-12)
    assert -1.0 <= cosine_sim(u, v) <= 1.0


def test_gaussian_init_moments_and_determinism():
    draws = gaussian_init((1000, 1000), make_rng(3))
    assert abs(draws.mean()) < 3 * 0.02 / 1e3
    assert abs(draws.std() - 0.02) < 1e-4
    np.testing.assert_array_equal(gaussian_init((4, 5), make_rng(9)), gaussian_init((4, 5), make_rng(9)))
    with pytest.raises(ConfigError):
        gaussian_init((0, 3), make_rng(0))


def test_kernels_are_pure(rng):
    a = rng.normal(size=(4, 4))
    assert matmul(a, a).tobytes() == matmul(a, a).tobytes()
    assert softmax_axis(a, "cols").tobytes() == softmax_axis(a, "cols").tobytes()


def test_domain_type_invariants():
    with pytest.raises(ShapeError):
        Diagram("x", np.zeros((0, 4, 3), dtype=np.uint8))
    with pytest.raises(ShapeError):
        Diagram("x", np.zeros((4, 4), dtype=np.uint8))
    d = Diagram("x", np.zeros((2, 3, 3), dtype=np.uint8))
    assert (d.height, d.width) == (2, 3)
    with pytest.raises(ConfigError):
        TextConstraint("  ", "concept")
    with pytest.raises(ValueError):
        LinearMap("W_h", [[np.nan]])
    lm = LinearMap("W_h", np.ones((3, 2)))
    assert (lm.in_dim, lm.out_dim) == (3, 2)
