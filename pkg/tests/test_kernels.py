import numpy as np
import pytest

from signgan import _kernels

from oracles import line_pixels_exact

pytestmark = pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba unavailable")


def _line_set(impl, r0, c0, r1, c1, size=40):
    out = np.zeros((size, size), dtype=np.float32)
    impl(out, r0, c0, r1, c1, 1.0)
    return {tuple(p) for p in np.argwhere(out > 0)}


def test_line_matches_exact_oracle_both_paths():
    rng = np.random.default_rng(0)
    for _ in range(500):
        r0, c0, r1, c1 = (int(v) for v in rng.integers(0, 40, size=4))
        want = line_pixels_exact(r0, c0, r1, c1)
        assert _line_set(_kernels.NUMBA_KERNELS["line"], r0, c0, r1, c1) == want
        assert _line_set(_kernels.NUMPY_KERNELS["line"], r0, c0, r1, c1) == want


def test_line_is_symmetric_in_endpoints_off_ties():
    # swapping endpoints never changes the raster when no ties occur
    assert _line_set(_kernels.NUMBA_KERNELS["line"], 1, 1, 4, 9) == _line_set(
        _kernels.NUMBA_KERNELS["line"], 4, 9, 1, 1
    )


def test_capsule_and_polygon_paths_agree():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = np.zeros((32, 32, 3), dtype=np.uint8)
        b = np.zeros_like(a)
        r0, c0, r1, c1 = rng.uniform(-4, 36, size=4)
        rad = rng.uniform(0.3, 4)
        color = rng.integers(0, 256, size=3).astype(np.uint8)
        _kernels.NUMBA_KERNELS["capsule"](a, r0, c0, r1, c1, rad, color)
        _kernels.NUMPY_KERNELS["capsule"](b, r0, c0, r1, c1, rad, color)
        np.testing.assert_array_equal(a, b)

        verts = rng.uniform(0, 32, size=(3, 2))
        a[:] = 0
        b[:] = 0
        _kernels.NUMBA_KERNELS["convex_polygon"](a, verts, color)
        _kernels.NUMPY_KERNELS["convex_polygon"](b, verts, color)
        np.testing.assert_array_equal(a, b)


def test_laplacian_variance_paths_agree():
    g = np.random.default_rng(2).uniform(0, 255, size=(60, 60))
    assert _kernels.NUMBA_KERNELS["laplacian_variance"](g) == pytest.approx(
        _kernels.NUMPY_KERNELS["laplacian_variance"](g), rel=1e-12
    )
    assert _kernels.NUMPY_KERNELS["laplacian_variance"](np.full((10, 10), 7.0)) == 0.0


def test_env_flag_selects_numpy(monkeypatch):
    import importlib

    monkeypatch.setenv("SIGNGAN_DISABLE_NUMBA", "1")
    mod = importlib.reload(_kernels)
    try:
        assert mod.USE_NUMBA is False
    finally:
        monkeypatch.delenv("SIGNGAN_DISABLE_NUMBA")
        importlib.reload(_kernels)
