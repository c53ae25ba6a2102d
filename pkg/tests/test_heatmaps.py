import math

import numpy as np
import pytest

from cephgeo.errors import AllZeroMap, ShapeMismatch, ValidationError
from cephgeo.heatmaps import (
    Heatmap,
    classify_confidence,
    decode,
    effective_sigma,
    ensemble_average,
    map_metrics,
)
from cephgeo.model import Landmark
from cephgeo.priors import gaussian_map


def sampled_gaussian(cx, cy, sigma, size=256, name="Sella"):
    return Heatmap(gaussian_map((cx, cy), sigma, size, size), name)


class TestDecode:
    def test_single_positive_pixel(self):
        g = np.zeros((16, 16))
        g[5, 9] = 2.5
        x, y, peak = decode(Heatmap(g))
        assert (x, y) == (9.0, 5.0)
        assert peak == 2.5

    def test_border_peak_falls_back_to_integer(self):
        g = np.zeros((16, 16))
        g[0, 3] = 1.0
        g[0, 4] = 0.9
        x, y, _ = decode(Heatmap(g))
        assert (x, y) == (3.0, 0.0)

    def test_subpixel_gaussian_recovery(self):
        h = sampled_gaussian(100.37, 58.62, 4.0)
        x, y, _ = decode(h)
        assert math.hypot(x - 100.37, y - 58.62) < 0.05

    def test_many_random_centers(self):
        rng = np.random.default_rng(77)
        for _ in range(50):
            cx = float(rng.uniform(5, 120))
            cy = float(rng.uniform(5, 120))
            sigma = float(rng.uniform(2.5, 20))
            x, y, _ = decode(sampled_gaussian(cx, cy, sigma, size=128))
            assert math.hypot(x - cx, y - cy) < 0.05

    def test_scale_invariance(self):
        h = sampled_gaussian(40.2, 33.7, 6.0, size=96)
        x0, y0, p0 = decode(h)
        for c in (0.25, 3.0, 1e4):
            x, y, p = decode(Heatmap(h.grid * c))
            assert x == pytest.approx(x0, abs=1e-9)
            assert y == pytest.approx(y0, abs=1e-9)
            assert p == pytest.approx(p0 * c, rel=1e-12)

    def test_all_zero_raises(self):
        with pytest.raises(AllZeroMap):
            decode(Heatmap(np.zeros((8, 8))))

    def test_negative_values_rejected(self):
        g = np.zeros((8, 8))
        g[2, 2] = -1.0
        with pytest.raises(ValidationError):
            Heatmap(g)

    def test_offset_clamped(self):
        # a flat-ish ridge can push the Taylor step far; offset stays in [-1, 1]
        g = np.full((12, 12), 1e-9)
        g[5, 5] = 1.0
        g[5, 6] = 0.999999
        x, y, _ = decode(Heatmap(g))
        assert abs(x - 5.0) <= 1.0 and abs(y - 5.0) <= 1.0


class TestEnsemble:
    def test_single_map_identity(self):
        h = sampled_gaussian(30, 30, 5, size=64)
        avg = ensemble_average([h])
        assert np.array_equal(avg.grid, h.grid)

    def test_self_average_identity(self):
        h = sampled_gaussian(30, 30, 5, size=64)
        avg = ensemble_average([h, h])
        assert np.allclose(avg.grid, h.grid, atol=1e-15)

    def test_translated_pair_decodes_between(self):
        h1 = sampled_gaussian(40.0, 40.0, 5, size=96)
        h2 = sampled_gaussian(44.0, 40.0, 5, size=96)
        x, y, _ = decode(ensemble_average([h1, h2]))
        assert 40.0 < x < 44.0
        assert y == pytest.approx(40.0, abs=0.05)

    def test_permutation_invariant(self):
        maps = [sampled_gaussian(30 + i, 40 - i, 4 + i, size=64) for i in range(3)]
        a = ensemble_average(maps)
        b = ensemble_average(maps[::-1])
        assert np.array_equal(a.grid, b.grid)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ensemble_average([sampled_gaussian(5, 5, 2, 32), sampled_gaussian(5, 5, 2, 64)])

    def test_landmark_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ensemble_average([
                sampled_gaussian(5, 5, 2, 32, name="Sella"),
                sampled_gaussian(5, 5, 2, 32, name="Nasion"),
            ])


class TestEffectiveSigma:
    def test_sampled_gaussian_within_ten_percent(self):
        h = sampled_gaussian(128.0, 128.0, 4.0)
        measured = effective_sigma(h)
        assert abs(measured - 4.0) / 4.0 < 0.10

    def test_single_pixel_spike_zero(self):
        g = np.zeros((32, 32))
        g[10, 10] = 1.0
        assert effective_sigma(Heatmap(g)) == 0.0

    def test_strictly_monotone_in_sigma(self):
        narrow = effective_sigma(sampled_gaussian(128, 128, 2.0))
        broad = effective_sigma(sampled_gaussian(128, 128, 8.0))
        assert narrow < broad


class TestClassifyConfidence:
    def test_below_four_high(self):
        assert classify_confidence(3.9) == "High"

    def test_boundary_four_medium(self):
        assert classify_confidence(4.0) == "Medium"

    def test_boundary_eight_low(self):
        assert classify_confidence(8.0) == "Low"

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            classify_confidence(-0.1)


class TestMapMetrics:
    def test_uniform_entropy_sixteen_bits(self):
        act = np.ones((256, 256))
        gt = Landmark("Sella", 128.0, 128.0)
        m = map_metrics(act, gt, np.ones((256, 256), dtype=bool))
        assert m["entropy_bits"] == 16.0
        assert m["in_roi_ratio"] == 1.0
        assert m["off_zone_ratio"] == 0.0

    def test_delta_at_gt(self):
        act = np.zeros((64, 64))
        act[20, 30] = 5.0
        gt = Landmark("Sella", 30.0, 20.0)
        m = map_metrics(act, gt, np.ones((64, 64), dtype=bool))
        assert m["peak_to_gt_px"] == 0.0
        assert m["entropy_bits"] == 0.0

    def test_mass_split_roi(self):
        act = np.zeros((10, 10))
        act[0, 0] = 3.0
        act[9, 9] = 1.0
        mask = np.zeros((10, 10), dtype=bool)
        mask[0, 0] = True
        m = map_metrics(act, Landmark("Sella", 0.0, 0.0), mask)
        assert m["in_roi_ratio"] == pytest.approx(0.75, abs=1e-12)
        assert m["in_roi_ratio"] + m["off_zone_ratio"] == 1.0

    def test_all_zero_rejected(self):
        with pytest.raises(AllZeroMap):
            map_metrics(np.zeros((8, 8)), Landmark("Sella", 1.0, 1.0), np.ones((8, 8), dtype=bool))

    def test_mask_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            map_metrics(np.ones((8, 8)), Landmark("Sella", 1.0, 1.0), np.ones((4, 4), dtype=bool))

    def test_entropy_maximal_only_for_uniform(self):
        act = np.ones((32, 32))
        act[5, 5] = 4.0
        gt = Landmark("Sella", 5.0, 5.0)
        m = map_metrics(act, gt, np.ones((32, 32), dtype=bool))
        assert m["entropy_bits"] < 10.0  # log2(1024) = 10 is the uniform max
