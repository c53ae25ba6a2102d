import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rotate_translate
from cephgeo.errors import DegenerateChord, DegenerateTriple, ParseError, ValidationError
from cephgeo.geometry import (
    Contour,
    ToleranceTable,
    arc_length,
    chord_deviation,
    cumulative_arc_lengths,
    discrete_curvature,
    load_contours,
    save_contours,
    simplify,
    simplify_indices,
)

TOL = ToleranceTable()


def random_polyline(rng, n, scale=100.0):
    """Random polyline with distinct consecutive vertices."""
    steps = rng.uniform(0.5, 3.0, size=(n - 1, 2)) * rng.choice([-1.0, 1.0], size=(n - 1, 2))
    pts = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)]) * scale / n
    return pts


class TestArcLength:
    def test_three_four_five(self):
        c = Contour(np.array([[0.0, 0.0], [3.0, 4.0]]), "symphysis")
        assert arc_length(c) == 5.0

    def test_unit_square_open(self):
        c = Contour(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float), "symphysis")
        assert arc_length(c) == 3.0

    def test_matches_bruteforce_sum(self):
        rng = np.random.default_rng(11)
        pts = random_polyline(rng, 100)
        c = Contour(pts, "cranial_base")
        # independent oracle: per-segment hypot summed in pure Python
        expected = math.fsum(
            math.hypot(pts[i + 1, 0] - pts[i, 0], pts[i + 1, 1] - pts[i, 1])
            for i in range(len(pts) - 1)
        )
        assert arc_length(c) == pytest.approx(expected, abs=1e-9)

    def test_cumulative_monotone(self):
        rng = np.random.default_rng(3)
        c = Contour(random_polyline(rng, 40), "soft_tissue")
        s = cumulative_arc_lengths(c)
        assert s[0] == 0.0
        assert np.all(np.diff(s) > 0)


class TestChordDeviation:
    def test_isoceles_apex(self):
        c = Contour(np.array([[0.0, 0.0], [5.0, 7.0], [10.0, 0.0]]), "symphysis")
        assert chord_deviation(c, 1) == pytest.approx(7.0, abs=1e-12)

    def test_on_chord(self):
        c = Contour(np.array([[0.0, 0.0], [4.0, 4.0], [10.0, 10.0]]), "symphysis")
        assert chord_deviation(c, 1) == pytest.approx(0.0, abs=1e-12)

    def test_semicircle_mid_vertex(self):
        # 64 segments so the apex itself is the middle vertex
        r = 37.5
        theta = np.linspace(0.0, np.pi, 65)
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        c = Contour(pts, "cranial_vault")
        assert chord_deviation(c, 32) == pytest.approx(r, abs=1e-6)

    def test_degenerate_chord(self):
        c = Contour(np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0 + 0.0]]), "symphysis")
        with pytest.raises(DegenerateChord):
            chord_deviation(c, 1)

    def test_interior_index_required(self):
        c = Contour(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]), "symphysis")
        with pytest.raises(ValueError):
            chord_deviation(c, 0)


class TestDiscreteCurvature:
    def test_collinear_zero(self):
        c = Contour(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), "symphysis")
        assert discrete_curvature(c, 1) == 0.0

    def test_circle_radius_ten(self):
        theta = [0.3, 1.1, 2.0]
        pts = np.array([[10 * math.cos(t), 10 * math.sin(t)] for t in theta])
        c = Contour(pts, "mandibular_border")
        assert discrete_curvature(c, 1) == pytest.approx(0.1, abs=1e-9)

    def test_rigid_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            pts = rng.uniform(-50, 50, size=(3, 2))
            if np.allclose(pts[0], pts[1]) or np.allclose(pts[1], pts[2]):
                continue
            k0 = discrete_curvature(Contour(pts, "symphysis"), 1)
            moved = rotate_translate(pts, rng.uniform(0, 2 * math.pi), *rng.uniform(-100, 100, 2))
            k1 = discrete_curvature(Contour(moved, "symphysis"), 1)
            assert k1 == pytest.approx(k0, rel=1e-9, abs=1e-12)

    def test_inverse_scaling(self):
        pts = np.array([[0.0, 0.0], [3.0, 4.0], [7.0, 1.0]])
        k = discrete_curvature(Contour(pts, "symphysis"), 1)
        ks = discrete_curvature(Contour(pts * 4.0, "symphysis"), 1)
        assert ks == pytest.approx(k / 4.0, rel=1e-12)

    def test_degenerate_triple(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(DegenerateTriple):
            discrete_curvature(Contour(pts, "symphysis"), 1)


def removed_vertex_deviations(original, kept_idx):
    """Brute-force oracle: distance of each removed vertex to its enclosing
    simplified segment."""
    out = []
    for a, b in zip(kept_idx[:-1], kept_idx[1:]):
        p0, p1 = original[a], original[b]
        seg = p1 - p0
        seg2 = float(seg @ seg)
        for j in range(a + 1, b):
            rel = original[j] - p0
            t = min(1.0, max(0.0, float(rel @ seg) / seg2)) if seg2 > 0 else 0.0
            out.append(float(np.hypot(*(original[j] - (p0 + t * seg)))))
    return out


class TestSimplify:
    def test_collinear_collapses(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
        c = Contour(pts, "cranial_vault")
        s = simplify(c, TOL, spacing=1.0)
        assert len(s) == 2
        assert np.array_equal(s.vertices, pts[[0, 4]])

    def test_apex_above_tolerance_retained(self):
        pts = np.array([[0.0, 0.0], [5.0, 10.0], [10.0, 0.0]])
        c = Contour(pts, "symphysis")
        s = simplify(c, ToleranceTable({"symphysis": 1.0}), spacing=1.0)  # eps = 1 px
        assert len(s) == 3

    def test_deviation_bound_bruteforce(self):
        rng = np.random.default_rng(42)
        for trial in range(30):
            pts = random_polyline(rng, rng.integers(10, 120))
            c = Contour(pts, "mandibular_border")
            spacing = float(rng.uniform(0.05, 0.3))
            eps = TOL.px("mandibular_border", spacing)
            kept = simplify_indices(c, TOL, spacing)
            devs = removed_vertex_deviations(pts, kept)
            assert all(d <= eps + 1e-9 for d in devs), f"trial {trial}"

    def test_idempotent(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            c = Contour(random_polyline(rng, 60), "palatal_plane")
            once = simplify(c, TOL, 0.1)
            twice = simplify(once, TOL, 0.1)
            assert np.array_equal(once.vertices, twice.vertices)

    def test_arc_length_never_grows(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            c = Contour(random_polyline(rng, 80), "cranial_base")
            s = simplify(c, TOL, 0.2)
            assert arc_length(s) <= arc_length(c) + 1e-9

    def test_output_subsequence(self):
        rng = np.random.default_rng(21)
        c = Contour(random_polyline(rng, 70), "soft_tissue")
        kept = simplify_indices(c, TOL, 0.15)
        assert np.all(np.diff(kept) > 0)
        assert kept[0] == 0 and kept[-1] == len(c) - 1

    def test_closed_contour(self):
        theta = np.linspace(0, 2 * np.pi, 50, endpoint=False)
        pts = np.column_stack([30 * np.cos(theta), 20 * np.sin(theta)])
        c = Contour(pts, "cranial_vault", closed=True)
        s = simplify(c, TOL, 0.5)
        assert s.closed
        assert 3 <= len(s) <= len(c)
        # kept vertices are a subsequence containing vertex 0
        kept = simplify_indices(c, TOL, 0.5)
        assert kept[0] == 0
        again = simplify(s, TOL, 0.5)
        assert np.array_equal(s.vertices, again.vertices)

    @given(st.integers(min_value=0, max_value=10_000), st.floats(min_value=0.05, max_value=0.5))
    @settings(max_examples=40, deadline=None)
    def test_property_subsequence_and_bound(self, seed, spacing):
        rng = np.random.default_rng(seed)
        pts = random_polyline(rng, int(rng.integers(5, 50)))
        c = Contour(pts, "symphysis")
        kept = simplify_indices(c, TOL, spacing)
        eps = TOL.px("symphysis", spacing)
        assert kept[0] == 0 and kept[-1] == len(pts) - 1
        devs = removed_vertex_deviations(pts, kept)
        assert all(d <= eps + 1e-9 for d in devs)


class TestContourValidation:
    def test_too_few_vertices(self):
        with pytest.raises(ValidationError):
            Contour(np.array([[0.0, 0.0]]), "symphysis")

    def test_consecutive_duplicates(self):
        with pytest.raises(ValidationError):
            Contour(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]), "symphysis")

    def test_vertices_read_only(self):
        c = Contour(np.array([[0.0, 0.0], [1.0, 1.0]]), "symphysis")
        with pytest.raises(ValueError):
            c.vertices[0, 0] = 5.0


class TestContourIO:
    def test_round_trip_dir(self, tmp_path):
        rng = np.random.default_rng(2)
        contours = {
            "imgA": [Contour(random_polyline(rng, 12), "symphysis"),
                     Contour(random_polyline(rng, 9), "cranial_base", closed=False)],
            "imgB": [Contour(random_polyline(rng, 7), "soft_tissue")],
        }
        save_contours(contours, tmp_path)
        loaded = load_contours(tmp_path)
        assert set(loaded) == {"imgA", "imgB"}
        assert loaded["imgA"][0].contour_class == "symphysis"
        assert np.allclose(loaded["imgA"][1].vertices, contours["imgA"][1].vertices)

    def test_reversed_flag(self, tmp_path):
        doc = [{"class": "cranial_base", "closed": False, "reversed": True,
                "vertices": [[0, 0], [1, 0], [2, 1]]}]
        f = tmp_path / "img.json"
        f.write_text(__import__("json").dumps(doc))
        loaded = load_contours(tmp_path)
        assert np.array_equal(loaded["img"][0].vertices, np.array([[2.0, 1.0], [1.0, 0.0], [0.0, 0.0]]))

    def test_unknown_class_rejected(self, tmp_path):
        f = tmp_path / "img.json"
        f.write_text('[{"class": "femur", "vertices": [[0,0],[1,1]]}]')
        with pytest.raises(ValidationError):
            load_contours(tmp_path)

    def test_malformed_rejected(self, tmp_path):
        f = tmp_path / "img.json"
        f.write_text("not json")
        with pytest.raises(ParseError):
            load_contours(tmp_path)
