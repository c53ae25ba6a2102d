import math

import numpy as np
import pytest

from conftest import rotate_translate
from cephgeo.anchors import (
    AnchorRule,
    DEFAULT_RULES,
    RuleCatalog,
    contours_by_class,
    extract_all,
    extract_anchor,
    extract_anchor_detail,
)
from cephgeo.errors import EmptyWindow, ValidationError
from cephgeo.geometry import Contour, ToleranceTable, cumulative_arc_lengths, simplify

TOL = ToleranceTable()


def bump_contour(p, q, apex_frac, height, n=80, cls="symphysis"):
    """Polyline p->q with a single smooth perpendicular bump peaking at
    apex_frac (the apex is an exact vertex)."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    k = int(round(apex_frac * (n - 1)))
    t = np.linspace(0.0, 1.0, n)
    t[k] = apex_frac  # place a vertex exactly at the apex
    chord = q - p
    normal = np.array([-chord[1], chord[0]]) / np.hypot(*chord)
    offsets = height * np.exp(-(((t - apex_frac) / 0.12) ** 2))
    pts = p[None, :] + t[:, None] * chord[None, :] + offsets[:, None] * normal[None, :]
    return Contour(pts, cls), k


class TestEndpointRule:
    def test_last_vertex_returned(self):
        pts = np.array([[0.0, 100.0], [20.0, 40.0], [60.0, 10.0], [120.0, 0.0]])
        c = Contour(pts, "cranial_base")
        rule = AnchorRule("Nasion", "cranial_base", "endpoint")
        lm = extract_anchor(c, rule, TOL, spacing=0.1)
        assert (lm.x, lm.y) == (120.0, 0.0)
        assert lm.name == "Nasion" and lm.visible

    def test_endpoint_survives_simplification(self):
        rng = np.random.default_rng(8)
        steps = rng.uniform(0.5, 2.0, size=(60, 2))
        pts = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
        c = Contour(pts, "palatal_plane")
        rule = AnchorRule("ANS", "palatal_plane", "endpoint")
        lm = extract_anchor(c, rule, TOL, spacing=0.2)
        assert (lm.x, lm.y) == tuple(pts[-1])


class TestChordDeviationRule:
    def test_single_apex_selected(self):
        c, apex_idx = bump_contour((0, 0), (200, 30), apex_frac=0.4, height=25.0)
        rule = AnchorRule("Pogonion", "symphysis", "max_chord_deviation", (0.10, 0.65))
        detail = extract_anchor_detail(c, rule, TOL, spacing=0.1)
        # brute-force oracle over ALL original vertices
        chord = c.vertices[-1] - c.vertices[0]
        rel = c.vertices - c.vertices[0]
        h = np.abs(rel[:, 0] * chord[1] - rel[:, 1] * chord[0]) / np.hypot(*chord)
        assert detail.original_index == int(np.argmax(h)) == apex_idx
        assert detail.landmark.x == pytest.approx(c.vertices[apex_idx, 0])

    def test_selection_respects_window(self):
        # tall bump outside the window must lose to a smaller one inside
        p, q = np.array([0.0, 0.0]), np.array([300.0, 0.0])
        t = np.linspace(0, 1, 120)
        big = 40 * np.exp(-(((t - 0.85) / 0.05) ** 2))
        small = 18 * np.exp(-(((t - 0.35) / 0.05) ** 2))
        pts = np.column_stack([t * 300.0, big + small])
        c = Contour(pts, "symphysis")
        rule = AnchorRule("Pogonion", "symphysis", "max_chord_deviation", (0.10, 0.65))
        detail = extract_anchor_detail(c, rule, TOL, spacing=0.1)
        simplified = c.vertices[detail.kept_indices]
        s = cumulative_arc_lengths(Contour(simplified, "symphysis"))
        frac = s[detail.simplified_index] / s[-1]
        assert 0.10 <= frac <= 0.65
        assert abs(pts[np.argmax(small), 0] - detail.landmark.x) < 15.0

    def test_empty_window(self):
        c = Contour(np.array([[0.0, 0.0], [100.0, 0.001], [200.0, 0.0]]), "symphysis")
        # collinear-ish: simplifies to the two endpoints at fractions 0 and 1
        rule = AnchorRule("Pogonion", "symphysis", "max_chord_deviation", (0.10, 0.65))
        with pytest.raises(EmptyWindow):
            extract_anchor(c, rule, TOL, spacing=1.0)


class TestCurvatureRule:
    def test_corner_found(self):
        # L-shaped path with a rounded-but-sharp corner at 40% arc
        down = np.column_stack([np.zeros(40), np.linspace(0, 200, 40)])
        across = np.column_stack([np.linspace(0, 300, 60)[1:], np.full(59, 200.0)])
        pts = np.vstack([down, across])
        c = Contour(pts, "mandibular_border")
        rule = AnchorRule("Gonion", "mandibular_border", "max_curvature", (0.15, 0.50))
        lm = extract_anchor(c, rule, TOL, spacing=0.1)
        assert math.hypot(lm.x - 0.0, lm.y - 200.0) < 1e-9

    def test_window_excludes_out_of_range_corner(self):
        # sharp corner at ~17% arc, gently curved tail: the out-of-window
        # corner (far higher curvature) must not be selected
        down = np.column_stack([np.zeros(40), np.linspace(0, 60, 40)])
        tx = np.linspace(0, 300, 80)[1:]
        across = np.column_stack([tx, 60.0 + 25.0 * np.sin(np.pi * tx / 300.0)])
        pts = np.vstack([down, across])
        c = Contour(pts, "mandibular_border")
        rule = AnchorRule("Gonion", "mandibular_border", "max_curvature", (0.30, 0.60))
        detail = extract_anchor_detail(c, rule, TOL, spacing=0.1)
        simplified = c.vertices[detail.kept_indices]
        s = cumulative_arc_lengths(Contour(simplified, "mandibular_border"))
        frac = s[detail.simplified_index] / s[-1]
        assert 0.30 <= frac <= 0.60
        assert detail.landmark.y > 60.0  # on the curved tail, not the corner

    def test_empty_window_when_nothing_inside(self):
        down = np.column_stack([np.zeros(40), np.linspace(0, 60, 40)])
        across = np.column_stack([np.linspace(0, 300, 80)[1:], np.full(79, 60.0)])
        pts = np.vstack([down, across])  # only interior vertex is at ~17% arc
        c = Contour(pts, "mandibular_border")
        rule = AnchorRule("Gonion", "mandibular_border", "max_curvature", (0.30, 0.60))
        with pytest.raises(EmptyWindow):
            extract_anchor(c, rule, TOL, spacing=0.1)


class TestEquivariance:
    def test_rigid_transform_same_vertex(self):
        rng = np.random.default_rng(17)
        rule = AnchorRule("Pogonion", "symphysis", "max_chord_deviation", (0.10, 0.65))
        for _ in range(20):
            c, _ = bump_contour(
                rng.uniform(-50, 50, 2), rng.uniform(150, 400, 2),
                apex_frac=float(rng.uniform(0.2, 0.6)), height=float(rng.uniform(15, 40)),
            )
            base = extract_anchor_detail(c, rule, TOL, spacing=0.1)
            angle = float(rng.uniform(0, 2 * math.pi))
            tx, ty = rng.uniform(-200, 200, 2)
            moved = Contour(rotate_translate(c.vertices, angle, tx, ty), "symphysis")
            got = extract_anchor_detail(moved, rule, TOL, spacing=0.1)
            assert got.original_index == base.original_index

    def test_resolution_invariance(self):
        # uniform scaling with matching spacing keeps the selection (eps in mm)
        c, apex = bump_contour((0, 0), (200, 0), 0.4, 22.0)
        rule = AnchorRule("Pogonion", "symphysis", "max_chord_deviation", (0.10, 0.65))
        d1 = extract_anchor_detail(c, rule, TOL, spacing=0.1)
        scaled = Contour(c.vertices * 4.0, "symphysis")
        d2 = extract_anchor_detail(scaled, rule, TOL, spacing=0.1 / 4.0)
        assert d1.original_index == d2.original_index

    def test_selected_vertex_on_original_contour(self):
        c, _ = bump_contour((0, 0), (180, 40), 0.5, 20.0)
        rule = AnchorRule("Pogonion", "symphysis", "max_chord_deviation", (0.10, 0.65))
        detail = extract_anchor_detail(c, rule, TOL, spacing=0.1)
        assert np.any(np.all(c.vertices == [detail.landmark.x, detail.landmark.y], axis=1))


class TestExtractAll:
    def _full_set(self, toy_contours_dir):
        from cephgeo.geometry import load_contours

        return load_contours(toy_contours_dir)["toy_001"]

    def test_all_present_seven_visible(self, toy_contours_dir):
        by_class, errs = contours_by_class(self._full_set(toy_contours_dir))
        assert not errs
        lms, errors = extract_all(by_class, RuleCatalog(), TOL, spacing=0.1)
        assert not errors
        assert len(lms) == 7
        assert all(lm.visible for lm in lms)

    def test_missing_symphysis_partial(self, toy_contours_dir):
        by_class, _ = contours_by_class(self._full_set(toy_contours_dir))
        del by_class["symphysis"]
        lms, errors = extract_all(by_class, RuleCatalog(), TOL, spacing=0.1)
        by_name = {lm.name: lm for lm in lms}
        assert not by_name["Menton"].visible
        assert not by_name["Pogonion"].visible
        assert by_name["Sella"].visible and by_name["Nasion"].visible
        assert not errors

    def test_class_mismatch_rejected(self):
        c = Contour(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]), "soft_tissue")
        rule = AnchorRule("Menton", "symphysis", "endpoint")
        with pytest.raises(ValidationError):
            extract_anchor(c, rule, TOL, spacing=0.1)

    def test_duplicate_class_reported(self):
        c1 = Contour(np.array([[0.0, 0.0], [1.0, 1.0]]), "symphysis")
        c2 = Contour(np.array([[5.0, 5.0], [6.0, 6.0]]), "symphysis")
        by_class, errs = contours_by_class([c1, c2])
        assert len(errs) == 1
        assert by_class["symphysis"] is c1


class TestCatalog:
    def test_default_has_seven_rules(self):
        catalog = RuleCatalog()
        assert len(catalog) == 7
        assert {r.target for r in catalog} == {
            "Sella", "Nasion", "ANS", "Menton", "Pogonion", "Gonion", "Pronasale",
        }

    def test_duplicate_targets_rejected(self):
        with pytest.raises(ValidationError):
            RuleCatalog(list(DEFAULT_RULES) + [AnchorRule("Sella", "cranial_base", "endpoint")])

    def test_window_validation(self):
        with pytest.raises(ValidationError):
            AnchorRule("Sella", "cranial_base", "max_chord_deviation", (0.7, 0.2))
        with pytest.raises(ValidationError):
            AnchorRule("Sella", "cranial_base", "max_chord_deviation", None)
