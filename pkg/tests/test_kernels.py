"""Cross-backend agreement: every numba kernel must match its pure-numpy
twin. Selection kernels (no transcendentals) agree exactly; the rest to a
few ulps."""

import numpy as np
import pytest

from cephgeo._kernels import NUMPY_KERNELS, numba_kernels_or_none

NUMBA = numba_kernels_or_none()

pytestmark = pytest.mark.skipif(NUMBA is None, reason="numba unavailable")


def random_polyline(rng, n):
    steps = rng.uniform(0.2, 2.0, size=(n - 1, 2)) * rng.choice([-1.0, 1.0], size=(n - 1, 2))
    return np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])


class TestDpMask:
    def test_exact_agreement(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            pts = random_polyline(rng, int(rng.integers(4, 200)))
            xs = np.ascontiguousarray(pts[:, 0])
            ys = np.ascontiguousarray(pts[:, 1])
            eps = float(rng.uniform(0.1, 5.0))
            a = NUMBA["dp_keep_mask"](xs, ys, eps)
            b = NUMPY_KERNELS["dp_keep_mask"](xs, ys, eps)
            assert np.array_equal(a, b)


class TestGaussianFill:
    def test_near_exact_agreement(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            h, w = int(rng.integers(8, 80)), int(rng.integers(8, 80))
            cx, cy = rng.uniform(-5, w + 5), rng.uniform(-5, h + 5)
            sigma = float(rng.uniform(1, 25))
            a = NUMBA["gaussian_fill"](np.empty((h, w)), cx, cy, sigma)
            b = NUMPY_KERNELS["gaussian_fill"](np.empty((h, w)), cx, cy, sigma)
            np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-300)


class TestResampleMeans:
    def test_agreement(self):
        rng = np.random.default_rng(2)
        values = rng.uniform(0, 10, size=137)
        idx = rng.integers(0, 137, size=(500, 137))
        a = NUMBA["resample_means"](values, idx)
        b = NUMPY_KERNELS["resample_means"](values, idx)
        np.testing.assert_allclose(a, b, rtol=1e-13)


class TestSignflip:
    def test_agreement(self):
        rng = np.random.default_rng(3)
        diffs = rng.normal(0, 1, size=151)
        signs = rng.choice([-1.0, 1.0], size=(1000, 151))
        a = NUMBA["signflip_mean_abs"](diffs, signs)
        b = NUMPY_KERNELS["signflip_mean_abs"](diffs, signs)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


class TestWeightedSpread:
    def test_agreement(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            win = rng.uniform(0, 1, size=(int(rng.integers(5, 60)), int(rng.integers(5, 60))))
            cx = rng.uniform(0, win.shape[1])
            cy = rng.uniform(0, win.shape[0])
            floor = float(rng.uniform(0, 0.3))
            a = NUMBA["weighted_spread"](win, cx, cy, floor)
            b = NUMPY_KERNELS["weighted_spread"](win, cx, cy, floor)
            assert a[0] == pytest.approx(b[0], rel=1e-12)
            assert a[1] == pytest.approx(b[1], rel=1e-12)


class TestEnvFlag:
    def test_pure_numpy_env_selects_numpy(self):
        import subprocess
        import sys

        code = (
            "import cephgeo._kernels as k; print(k.KERNEL_BACKEND)"
        )
        out = subprocess.run(
            [sys.executable, "-c", code],
            capture_output=True, text=True,
            env={"PATH": "/usr/bin:/bin", "CEPHGEO_PURE_NUMPY": "1"},
        )
        assert out.stdout.strip() == "numpy"

    def test_default_prefers_numba(self):
        import subprocess
        import sys

        out = subprocess.run(
            [sys.executable, "-c", "import cephgeo._kernels as k; print(k.KERNEL_BACKEND)"],
            capture_output=True, text=True,
            env={"PATH": "/usr/bin:/bin"},
        )
        assert out.stdout.strip() == "numba"
