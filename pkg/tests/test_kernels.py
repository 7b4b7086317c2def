import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lamegap import kernels

cython_only = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")


def _random_tris(seed, n=200):
    rng = np.random.default_rng(seed)
    nodes = rng.uniform(-1, 1, (3 * n, 2))
    tris = np.arange(3 * n, dtype=np.int64).reshape(n, 3)
    return nodes, tris


@cython_only
@given(st.integers(0, 10**6))
@settings(max_examples=20, deadline=None)
def test_element_gradients_agree(seed):
    nodes, tris = _random_tris(seed)
    a = kernels.element_gradients(nodes, tris, impl="cython")
    b = kernels.element_gradients(nodes, tris, impl="python")
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-13, atol=1e-13)


@cython_only
@given(st.integers(0, 10**6), st.floats(-0.5, 5), st.floats(0.1, 5))
@settings(max_examples=20, deadline=None)
def test_stiffness_agree(seed, lam, mu):
    nodes, tris = _random_tris(seed, 50)
    b, c, area = kernels.element_gradients(nodes, tris)
    ka = kernels.cst_stiffness(b, c, area, lam, mu, impl="cython")
    kb = kernels.cst_stiffness(b, c, area, lam, mu, impl="python")
    assert np.allclose(ka, kb, rtol=1e-12, atol=1e-12)


@cython_only
@given(st.integers(0, 10**6))
@settings(max_examples=10, deadline=None)
def test_size_field_agree(seed):
    rng = np.random.default_rng(seed)
    samples = rng.uniform(-2, 2, (300, 2))
    sizes = rng.uniform(0.01, 0.5, 300)
    pts = rng.uniform(-3, 3, (500, 2))
    a = kernels.size_field(pts, samples, sizes, 0.25, 0.4, impl="cython")
    b = kernels.size_field(pts, samples, sizes, 0.25, 0.4, impl="python")
    assert np.allclose(a, b, rtol=1e-14)


def test_stiffness_kernel_rigid_modes():
    nodes = np.array([[0.0, 0.0], [1.0, 0.1], [0.2, 0.9]])
    tris = np.array([[0, 1, 2]], dtype=np.int64)
    b, c, area = kernels.element_gradients(nodes, tris)
    K = kernels.cst_stiffness(b, c, area, 1.0, 1.0)[0]
    assert np.array_equal(K, K.T)
    for alpha in range(3):
        r = np.array([[1, 0], [0, 1], [0, 0]][alpha] if alpha < 2 else [0, 0], dtype=float)
        if alpha < 2:
            z = np.tile(r, 3)
        else:
            z = np.stack([nodes[:, 1], -nodes[:, 0]], -1).ravel()
        assert np.abs(K @ z).max() < 1e-13
    ev = np.linalg.eigvalsh(K)
    assert np.sum(np.abs(ev) < 1e-12) == 3 and ev.min() > -1e-12


def test_size_field_lipschitz():
    rng = np.random.default_rng(0)
    samples = rng.uniform(-1, 1, (50, 2))
    sizes = rng.uniform(0.01, 0.1, 50)
    pts = rng.uniform(-2, 2, (400, 2))
    h = kernels.size_field(pts, samples, sizes, 0.25, 0.3)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    assert np.all(np.abs(h[:, None] - h[None]) <= 0.25 * d + 1e-12)
    assert h.max() <= 0.3
