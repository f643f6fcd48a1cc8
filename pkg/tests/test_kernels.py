"""Both kernel backends against each other and against independent oracles."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lipsort import _backend, _reference

from conftest import _kernels

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_backend_flag_is_known():
    assert _backend.BACKEND in ("compiled", "python")


@pytest.mark.parametrize("k", [2, 3, 4, 6])
def test_groupsort_matches_stable_argsort(kernels, rng, k):
    z = rng.integers(-3, 4, (7, 12)).astype(float)  # plenty of ties
    out, perm = kernels.groupsort(z, k)
    for i in range(7):
        for s in range(0, 12, k):
            order = np.argsort(z[i, s:s + k], kind="stable") + s
            np.testing.assert_array_equal(perm[i, s:s + k], order)
    np.testing.assert_array_equal(out, np.take_along_axis(z, perm, axis=1))


def test_jacobi_matches_lapack(kernels, rng):
    for shape in [(1, 1), (5, 5), (8, 3), (3, 8), (7, 7), (40, 33)]:
        a = rng.standard_normal(shape)
        np.testing.assert_allclose(
            kernels.jacobi_singular_values(a), np.linalg.svd(a, compute_uv=False), atol=1e-12
        )


def test_jacobi_rank_deficient(kernels):
    a = np.outer([1.0, 2.0, 2.0], [3.0, 4.0])
    np.testing.assert_allclose(kernels.jacobi_singular_values(a), [15.0, 0.0], atol=1e-12)


def test_projection_inside_ball_is_identity(kernels):
    w = np.array([[0.2, -0.3], [0.0, 0.0]])
    np.testing.assert_array_equal(kernels.project_rows_l1(w), w)


def _bisection_projection(y, radius=1.0):
    # independent oracle: find tau with sum(max(|y| - tau, 0)) = radius by bisection
    lo, hi = 0.0, float(np.abs(y).max())
    for _ in range(200):
        tau = 0.5 * (lo + hi)
        if np.maximum(np.abs(y) - tau, 0).sum() > radius:
            lo = tau
        else:
            hi = tau
    return np.sign(y) * np.maximum(np.abs(y) - 0.5 * (lo + hi), 0)


def test_projection_matches_bisection(kernels, rng):
    w = 3 * rng.standard_normal((50, 9))
    np.testing.assert_allclose(
        kernels.project_rows_l1(w), np.array([_bisection_projection(r) for r in w]), atol=1e-12
    )


@pytest.mark.skipif(_kernels is None, reason="compiled extension not built")
@settings(max_examples=60, deadline=None)
@given(st.sampled_from([2, 3, 4]), st.integers(1, 4), st.data())
def test_backends_agree_groupsort(k, groups, data):
    z = data.draw(arrays(np.float64, (data.draw(st.integers(1, 5)), k * groups), elements=finite))
    a, pa = _reference.groupsort(z, k)
    b, pb = _kernels.groupsort(z, k)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(pa, pb)


@pytest.mark.skipif(_kernels is None, reason="compiled extension not built")
@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 10)), elements=finite))
def test_backends_agree_projection(w):
    np.testing.assert_allclose(_reference.project_rows_l1(w), _kernels.project_rows_l1(w),
                               rtol=0, atol=1e-12 * max(1.0, np.abs(w).max()))


@pytest.mark.skipif(_kernels is None, reason="compiled extension not built")
@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_backends_agree_jacobi(a):
    scale = max(1.0, np.abs(a).max())
    np.testing.assert_allclose(_reference.jacobi_singular_values(a),
                               _kernels.jacobi_singular_values(a), atol=1e-10 * scale)


def test_pure_env_selects_fallback():
    import subprocess
    import sys
    out = subprocess.run(
        [sys.executable, "-c", "import lipsort._backend as b; print(b.BACKEND)"],
        env={"LIPSORT_PURE": "1", "PATH": ""}, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("row", [
    [1.0, 1.0, 1.0, 1.0],
    [5.0],
    [0.0, 0.0, 3.0],
    [-2.0, 2.0, -2.0, 0.0],
    [1e-300, 4.0, 1e8],
    [0.25, 0.25, 0.25, 0.25 + 1e-15],
    [3.0, 2.0, 1.0, 0.5, 0.25, 0.125],
    [0.125, 0.25, 0.5, 1.0, 2.0, 3.0],
])
def test_projection_edge_rows_agree(kernels, row):
    got = kernels.project_rows_l1(np.array([row]))
    want = _reference.project_rows_l1(np.array([row]))
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-15)
    if np.abs(row).sum() > 1:
        assert np.abs(got).sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1), st.sampled_from([0.1, 1.0, 7.0]))
def test_projection_with_repeated_values(n, seed, radius):
    rows = np.random.default_rng(seed).choice([-2.0, -0.5, 0.0, 0.5, 1.0, 3.0], size=(4, n))
    want = np.array([_bisection_projection(r, radius) for r in rows])
    for backend in filter(None, (_reference, _kernels)):
        np.testing.assert_allclose(backend.project_rows_l1(rows, radius), want, atol=1e-11)
