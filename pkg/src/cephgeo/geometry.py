"""Polyline primitives: arc length, adaptive simplification, chord
deviation, and discrete (circumscribed-circle) curvature.

Simplification tolerances are stored in millimetres per contour class and
converted to pixels through the per-image spacing, so the same table works
across resolutions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import _kernels
from .errors import DegenerateChord, DegenerateTriple, ParseError, ValidationError

CONTOUR_CLASSES = (
    "symphysis",
    "incisor_axis",
    "mandibular_border",
    "palatal_plane",
    "cranial_base",
    "cranial_vault",
    "soft_tissue",
)

# mm tolerances per contour class; classes not listed fall back to DEFAULT.
# 0.5 mm where subtle concavities define landmarks, 1.0 mm for
# curvature-critical borders, 2.0 mm where only coarse shape matters.
DEFAULT_TOLERANCES_MM = {
    "symphysis": 0.5,
    "incisor_axis": 0.5,
    "mandibular_border": 1.0,
    "palatal_plane": 1.0,
    "cranial_vault": 2.0,
}
DEFAULT_TOLERANCE_MM = 1.0


class ToleranceTable:
    """Contour-class -> simplification tolerance in mm."""

    def __init__(self, overrides: Optional[Dict[str, float]] = None, default: float = DEFAULT_TOLERANCE_MM):
        table = dict(DEFAULT_TOLERANCES_MM)
        if overrides:
            table.update(overrides)
        for cls, eps in table.items():
            if eps <= 0:
                raise ValidationError(f"tolerance for {cls!r} must be > 0, got {eps}")
        if default <= 0:
            raise ValidationError(f"default tolerance must be > 0, got {default}")
        self._table = table
        self._default = default

    def mm(self, contour_class: str) -> float:
        return self._table.get(contour_class, self._default)

    def px(self, contour_class: str, spacing: float) -> float:
        if spacing <= 0:
            raise ValidationError(f"pixel spacing must be > 0, got {spacing}")
        return self.mm(contour_class) / spacing


@dataclass(frozen=True, eq=False)
class Contour:
    """Ordered polyline tagged with an anatomical class.

    ``vertices`` is an (n, 2) float64 array in pixel coordinates. Closed
    contours do not repeat the first vertex; the closing edge is implicit.
    """

    vertices: np.ndarray
    contour_class: str
    closed: bool = False

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValidationError(f"contour vertices must be (n, 2), got {v.shape}")
        if v.shape[0] < 2:
            raise ValidationError("contour needs at least 2 vertices")
        if np.any(np.all(v[1:] == v[:-1], axis=1)):
            raise ValidationError("consecutive contour vertices must be distinct")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return self.vertices.shape[0]

    def reversed(self) -> "Contour":
        return replace(self, vertices=self.vertices[::-1].copy())


def cumulative_arc_lengths(c: Contour) -> np.ndarray:
    """Cumulative arc length at each vertex, s_0 = 0."""
    seg = np.sqrt(np.sum(np.diff(c.vertices, axis=0) ** 2, axis=1))
    return np.concatenate(([0.0], np.cumsum(seg)))


def arc_length(c: Contour) -> float:
    return float(cumulative_arc_lengths(c)[-1])


def chord_deviation(c: Contour, i: int) -> float:
    """Perpendicular distance from vertex i to the line through the
    first and last vertices."""
    n = len(c)
    if n < 3:
        raise ValidationError("chord deviation needs at least 3 vertices")
    if not (0 < i < n - 1):
        raise ValueError(f"vertex index must be interior, got {i} of {n}")
    a = c.vertices[0]
    b = c.vertices[-1]
    chord = b - a
    norm = float(np.hypot(chord[0], chord[1]))
    if norm == 0.0:
        raise DegenerateChord("first and last vertices coincide")
    p = c.vertices[i] - a
    return abs(float(p[0] * chord[1] - p[1] * chord[0])) / norm


def discrete_curvature(c: Contour, i: int) -> float:
    """Curvature of the circle through vertices i-1, i, i+1.

    Uses the circumscribed-circle construction kappa = 4A / (|a||b||c|),
    which is orientation-free and returns 0 for collinear triples.
    """
    n = len(c)
    if not (0 < i < n - 1):
        raise ValueError(f"vertex index must be interior, got {i} of {n}")
    p0, p1, p2 = c.vertices[i - 1], c.vertices[i], c.vertices[i + 1]
    e01 = p1 - p0
    e12 = p2 - p1
    e02 = p2 - p0
    l01 = float(np.hypot(e01[0], e01[1]))
    l12 = float(np.hypot(e12[0], e12[1]))
    l02 = float(np.hypot(e02[0], e02[1]))
    if l01 == 0.0 or l12 == 0.0 or l02 == 0.0:
        raise DegenerateTriple(f"coincident vertices around index {i}")
    area2 = abs(float(e01[0] * e02[1] - e01[1] * e02[0]))  # 2 * triangle area
    return 2.0 * area2 / (l01 * l12 * l02)


def _dp_mask(vertices: np.ndarray, eps_px: float) -> np.ndarray:
    xs = np.ascontiguousarray(vertices[:, 0])
    ys = np.ascontiguousarray(vertices[:, 1])
    return _kernels.dp_keep_mask(xs, ys, eps_px)


def simplify_indices(c: Contour, tol: ToleranceTable, spacing: float) -> np.ndarray:
    """Original-vertex indices kept by Douglas-Peucker at the class tolerance.

    Endpoints are always kept. Closed contours are split at the vertex
    farthest from vertex 0 and each arc is simplified independently.
    """
    eps_px = tol.px(c.contour_class, spacing)
    v = c.vertices
    n = v.shape[0]
    if not c.closed:
        keep = _dp_mask(v, eps_px)
        return np.nonzero(keep)[0]
    d2 = np.sum((v - v[0]) ** 2, axis=1)
    k = int(np.argmax(d2))
    if k == 0:
        raise ValidationError("degenerate closed contour")
    keep = np.zeros(n, dtype=bool)
    keep[: k + 1] |= _dp_mask(v[: k + 1], eps_px)
    ring = np.vstack([v[k:], v[:1]])
    keep[k:] |= _dp_mask(ring, eps_px)[:-1]
    keep[0] = True
    return np.nonzero(keep)[0]


def simplify(c: Contour, tol: ToleranceTable, spacing: float) -> Contour:
    """Douglas-Peucker simplification; output vertices are a subsequence
    of the input with endpoints preserved."""
    idx = simplify_indices(c, tol, spacing)
    return replace(c, vertices=c.vertices[idx].copy())


# ---------------------------------------------------------------------------
# contour file I/O
# ---------------------------------------------------------------------------

def _contour_from_dict(d: dict) -> Contour:
    try:
        cls = str(d["class"])
        verts = d["vertices"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed contour object: {exc}") from exc
    if cls not in CONTOUR_CLASSES:
        raise ValidationError(f"unknown contour class {cls!r}")
    contour = Contour(
        vertices=np.asarray(verts, dtype=np.float64),
        contour_class=cls,
        closed=bool(d.get("closed", False)),
    )
    if d.get("reversed", False):
        contour = contour.reversed()
    return contour


def contour_to_dict(c: Contour) -> dict:
    return {
        "class": c.contour_class,
        "closed": c.closed,
        "vertices": [[float(x), float(y)] for x, y in c.vertices],
    }


def load_contours(path) -> Dict[str, List[Contour]]:
    """Load contours keyed by image id.

    Accepts either a directory of ``<image_id>.json`` files (each a JSON
    list of contour objects) or a single JSON file mapping image id to a
    list of contour objects. Contour objects may carry ``"reversed": true``
    when the stored vertex order is opposite to the rule traversal order.
    """
    p = Path(path)
    out: Dict[str, List[Contour]] = {}
    if p.is_dir():
        for f in sorted(p.glob("*.json")):
            doc = _read_json(f)
            if not isinstance(doc, list):
                raise ParseError(f"{f}: expected a JSON list of contours")
            out[f.stem] = [_contour_from_dict(d) for d in doc]
        return out
    doc = _read_json(p)
    if not isinstance(doc, dict):
        raise ParseError(f"{p}: expected a JSON object keyed by image id")
    for image_id, lst in doc.items():
        out[str(image_id)] = [_contour_from_dict(d) for d in lst]
    return out


def save_contours(contours: Dict[str, List[Contour]], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for image_id in sorted(contours):
        doc = [contour_to_dict(c) for c in contours[image_id]]
        (out / f"{image_id}.json").write_text(json.dumps(doc, indent=2))


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc
