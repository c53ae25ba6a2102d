"""Topology-based anchor extraction from anatomical contours.

Each anchor landmark is located by a purely geometric rule applied to a
simplified contour: the last endpoint, the vertex of maximum perpendicular
deviation from the end-to-end chord, or the vertex of maximum discrete
curvature — the latter two restricted to a window of cumulative arc-length
fractions. Rules operate on contour topology only, so extraction is
invariant to image orientation and resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import CephGeoError, DegenerateChord, EmptyWindow, ValidationError
from .geometry import Contour, ToleranceTable, cumulative_arc_lengths, simplify_indices
from .model import Landmark

RULE_KINDS = ("endpoint", "max_chord_deviation", "max_curvature")


@dataclass(frozen=True)
class AnchorRule:
    target: str
    contour_class: str
    rule: str
    arc_window: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.rule not in RULE_KINDS:
            raise ValidationError(f"unknown rule kind {self.rule!r}")
        if self.rule != "endpoint":
            if self.arc_window is None:
                raise ValidationError(f"rule {self.rule!r} requires an arc window")
            lo, hi = self.arc_window
            if not (0.0 <= lo < hi <= 1.0):
                raise ValidationError(f"invalid arc window {self.arc_window}")


# One rule per anchor landmark. Traversal order of the supplied contour
# must match the rule (e.g. the cranial base runs Basion -> Sella -> Nasion
# so Nasion is the *last* endpoint); a "reversed" flag in the contour file
# flips stored order when needed. Pronasale is located upstream on the
# soft-tissue profile; here it is the endpoint of the provided nasal
# sub-contour.
DEFAULT_RULES = (
    AnchorRule("Sella", "cranial_base", "max_chord_deviation", (0.20, 0.60)),
    AnchorRule("Nasion", "cranial_base", "endpoint"),
    AnchorRule("ANS", "palatal_plane", "endpoint"),
    AnchorRule("Menton", "symphysis", "endpoint"),
    AnchorRule("Pogonion", "symphysis", "max_chord_deviation", (0.10, 0.65)),
    AnchorRule("Gonion", "mandibular_border", "max_curvature", (0.15, 0.50)),
    AnchorRule("Pronasale", "soft_tissue", "endpoint"),
)


class RuleCatalog:
    """Anchor rule set with exactly one rule per target landmark."""

    def __init__(self, rules=DEFAULT_RULES):
        targets = [r.target for r in rules]
        if len(set(targets)) != len(targets):
            raise ValidationError("duplicate anchor rule targets")
        self.rules = tuple(rules)

    def __iter__(self):
        return iter(self.rules)

    def __len__(self):
        return len(self.rules)


@dataclass(frozen=True)
class AnchorResult:
    landmark: Landmark
    original_index: int
    simplified_index: int
    kept_indices: np.ndarray


def _chord_deviations(v: np.ndarray) -> np.ndarray:
    a = v[0]
    b = v[-1]
    chord = b - a
    norm = float(np.hypot(chord[0], chord[1]))
    if norm == 0.0:
        raise DegenerateChord("simplified contour endpoints coincide")
    rel = v - a
    return np.abs(rel[:, 0] * chord[1] - rel[:, 1] * chord[0]) / norm


def _curvatures(v: np.ndarray) -> np.ndarray:
    """Menger curvature at each interior vertex; endpoints get -inf so
    they never win an argmax."""
    p0, p1, p2 = v[:-2], v[1:-1], v[2:]
    e01 = p1 - p0
    e12 = p2 - p1
    e02 = p2 - p0
    l01 = np.hypot(e01[:, 0], e01[:, 1])
    l12 = np.hypot(e12[:, 0], e12[:, 1])
    l02 = np.hypot(e02[:, 0], e02[:, 1])
    area2 = np.abs(e01[:, 0] * e02[:, 1] - e01[:, 1] * e02[:, 0])
    denom = l01 * l12 * l02
    # consecutive-distinct invariant keeps l01/l12 > 0; l02 == 0 means the
    # triple folds back on itself exactly — treat as flat rather than fail
    kappa = np.where(denom > 0.0, 2.0 * area2 / np.where(denom > 0.0, denom, 1.0), 0.0)
    out = np.full(v.shape[0], -np.inf)
    out[1:-1] = kappa
    return out


def extract_anchor_detail(
    c: Contour, rule: AnchorRule, tol: ToleranceTable, spacing: float
) -> AnchorResult:
    if c.contour_class != rule.contour_class:
        raise ValidationError(
            f"rule {rule.target} expects class {rule.contour_class!r}, got {c.contour_class!r}"
        )
    kept = simplify_indices(c, tol, spacing)
    v = c.vertices[kept]

    if rule.rule == "endpoint":
        sel = v.shape[0] - 1
    else:
        s = cumulative_arc_lengths(Contour(v, c.contour_class, closed=False))
        total = s[-1]
        frac = s / total if total > 0 else s
        lo, hi = rule.arc_window
        in_window = (frac >= lo) & (frac <= hi)
        if rule.rule == "max_chord_deviation":
            score = _chord_deviations(v)
        else:
            score = _curvatures(v)
            in_window &= np.isfinite(score)
        if not np.any(in_window):
            raise EmptyWindow(
                f"{rule.target}: no simplified vertex in arc window [{lo}, {hi}]"
            )
        masked = np.where(in_window, score, -np.inf)
        sel = int(np.argmax(masked))  # ties -> smallest index

    x, y = v[sel]
    landmark = Landmark(name=rule.target, x=float(x), y=float(y), visible=True)
    return AnchorResult(
        landmark=landmark,
        original_index=int(kept[sel]),
        simplified_index=sel,
        kept_indices=kept,
    )


def extract_anchor(c: Contour, rule: AnchorRule, tol: ToleranceTable, spacing: float) -> Landmark:
    return extract_anchor_detail(c, rule, tol, spacing).landmark


def extract_all(
    contours_by_class: Dict[str, Contour],
    catalog: RuleCatalog,
    tol: ToleranceTable,
    spacing: float,
) -> Tuple[List[Landmark], List[str]]:
    """Apply every catalog rule whose contour class is present.

    Absent contours yield not-visible landmarks; per-anchor failures are
    collected into the returned error list instead of aborting the image.
    """
    landmarks: List[Landmark] = []
    errors: List[str] = []
    for rule in catalog:
        contour = contours_by_class.get(rule.contour_class)
        if contour is None:
            landmarks.append(Landmark(name=rule.target, x=None, y=None, visible=False))
            continue
        try:
            landmarks.append(extract_anchor(contour, rule, tol, spacing))
        except CephGeoError as exc:
            errors.append(f"{rule.target}: {exc}")
            landmarks.append(Landmark(name=rule.target, x=None, y=None, visible=False))
    return landmarks, errors


def contours_by_class(contours: List[Contour]) -> Tuple[Dict[str, Contour], List[str]]:
    """Key a contour list by class; duplicates keep the first and are
    reported as errors."""
    out: Dict[str, Contour] = {}
    errors: List[str] = []
    for c in contours:
        if c.contour_class in out:
            errors.append(f"duplicate contour class {c.contour_class!r}; keeping first")
            continue
        out[c.contour_class] = c
    return out, errors
