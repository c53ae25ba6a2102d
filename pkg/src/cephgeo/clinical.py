"""Cephalometric angle measurement and skeletal classification.

Angle conventions (image coordinates, origin top-left, y down, patient
facing right unless ``facing="left"``):

* SNB: unsigned angle at Nasion between the rays to Sella and B-point.
* ANB: magnitude of the angle at Nasion between the rays to A-point and
  B-point, signed positive when A-point lies on the anterior side of the
  N-B line (cross-product test, flipped by ``facing``).
* FMA: acute angle between the Frankfort line (Porion-Orbitale) and the
  mandibular line (Gonion-Menton).
* IMPA: angle between the posterior mandibular-plane direction
  (Gonion - Menton) and the incisor axis (L1_tip - L1_root), in [0, 180];
  90 = upright, above 90 = proclined. ``impa_supplement`` reports 180 - IMPA
  for sites using the opposite side convention.
* GoGn-SN: acute angle between the Gonion-Gnathion and Sella-Nasion lines.

Cutoffs sit inside the middle class (lo <= angle <= hi -> Class I /
normodivergent), so classifications are reproducible at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateMarginals,
    DegenerateVertex,
    LengthMismatch,
    UnavailableMeasurement,
    ValidationError,
)
from .model import Landmark
from .stats import cohens_kappa

SAGITTAL_ORDER = ("III", "I", "II")  # ordered by increasing ANB
VERTICAL_ORDER = ("hypodivergent", "normodivergent", "hyperdivergent")

VERTICAL_CUTOFFS = (29.0, 36.0)
BOUNDARY_BAND_DEG = 2.0

REQUIRED_LANDMARKS = {
    "snb": ("Sella", "Nasion", "B_point"),
    "anb": ("A_point", "Nasion", "B_point"),
    "fma": ("Porion", "Orbitale", "Gonion", "Menton"),
    "impa": ("L1_tip", "L1_root", "Gonion", "Menton"),
    "gogn_sn": ("Gonion", "Gnathion", "Sella", "Nasion"),
}


@dataclass(frozen=True)
class ThresholdScheme:
    name: str
    sagittal: Tuple[float, float]
    vertical: Tuple[float, float] = VERTICAL_CUTOFFS

    def __post_init__(self):
        if self.sagittal[0] >= self.sagittal[1] or self.vertical[0] >= self.vertical[1]:
            raise ValidationError(f"cutoffs must be increasing in scheme {self.name!r}")


THRESHOLD_SCHEMES = {
    "steiner": ThresholdScheme("steiner", (0.0, 4.0)),
    "ricketts": ThresholdScheme("ricketts", (2.0, 5.0)),
    "convention_1_4": ThresholdScheme("convention_1_4", (1.0, 4.0)),
}


@dataclass(frozen=True)
class MeasurementSet:
    anb: Optional[float] = None
    snb: Optional[float] = None
    fma: Optional[float] = None
    impa: Optional[float] = None
    gogn_sn: Optional[float] = None

    def available(self, name: str) -> bool:
        return getattr(self, name) is not None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("anb", "snb", "fma", "impa", "gogn_sn")}


@dataclass(frozen=True)
class Classification:
    sagittal: str
    vertical: str
    near_sagittal_lo: bool
    near_sagittal_hi: bool
    near_vertical_lo: bool
    near_vertical_hi: bool


def angle_at(vertex, a, b) -> float:
    """Unsigned angle at ``vertex`` between the rays to a and b, degrees."""
    vx, vy = float(vertex[0]), float(vertex[1])
    u = (float(a[0]) - vx, float(a[1]) - vy)
    w = (float(b[0]) - vx, float(b[1]) - vy)
    if (u[0] == 0.0 and u[1] == 0.0) or (w[0] == 0.0 and w[1] == 0.0):
        raise DegenerateVertex("ray endpoint coincides with the vertex")
    cross = u[0] * w[1] - u[1] * w[0]
    dot = u[0] * w[0] + u[1] * w[1]
    return math.degrees(math.atan2(abs(cross), dot))


def _line_angle(p, q, r, s) -> float:
    """Acute angle between undirected lines pq and rs, degrees in [0, 90]."""
    u = (float(q[0]) - float(p[0]), float(q[1]) - float(p[1]))
    w = (float(s[0]) - float(r[0]), float(s[1]) - float(r[1]))
    if (u[0] == 0.0 and u[1] == 0.0) or (w[0] == 0.0 and w[1] == 0.0):
        raise DegenerateVertex("degenerate line")
    cross = abs(u[0] * w[1] - u[1] * w[0])
    dot = abs(u[0] * w[0] + u[1] * w[1])
    return math.degrees(math.atan2(cross, dot))


def _vector_angle(u, w) -> float:
    """Angle between direction vectors, degrees in [0, 180]."""
    cross = abs(u[0] * w[1] - u[1] * w[0])
    dot = u[0] * w[0] + u[1] * w[1]
    return math.degrees(math.atan2(cross, dot))


def _xy(lms: Dict[str, Landmark], name: str):
    lm = lms.get(name)
    if lm is None or not lm.visible or lm.x is None or lm.y is None:
        return None
    return (lm.x, lm.y)


def measure(
    landmarks: Dict[str, Landmark],
    facing: str = "right",
    impa_supplement: bool = False,
) -> MeasurementSet:
    """Compute the five angles; a measurement missing any required landmark
    is left unavailable while the others are still computed."""
    if facing not in ("right", "left"):
        raise ValidationError(f"facing must be 'right' or 'left', got {facing!r}")
    pts = {m: [_xy(landmarks, n) for n in names] for m, names in REQUIRED_LANDMARKS.items()}
    values: Dict[str, Optional[float]] = {}

    def have(m):
        return all(p is not None for p in pts[m])

    values["snb"] = None
    if have("snb"):
        s, n, b = pts["snb"]
        values["snb"] = angle_at(n, s, b)

    values["anb"] = None
    if have("anb"):
        a, n, b = pts["anb"]
        mag = angle_at(n, a, b)
        nb = (b[0] - n[0], b[1] - n[1])
        na = (a[0] - n[0], a[1] - n[1])
        cross = nb[0] * na[1] - nb[1] * na[0]
        anterior = cross < 0 if facing == "right" else cross > 0
        values["anb"] = mag if anterior else -mag

    values["fma"] = None
    if have("fma"):
        po, orb, go, me = pts["fma"]
        values["fma"] = _line_angle(po, orb, go, me)

    values["impa"] = None
    if have("impa"):
        tip, root, go, me = pts["impa"]
        mand = (go[0] - me[0], go[1] - me[1])
        axis = (tip[0] - root[0], tip[1] - root[1])
        if (mand[0] == 0.0 and mand[1] == 0.0) or (axis[0] == 0.0 and axis[1] == 0.0):
            raise DegenerateVertex("degenerate IMPA construction")
        impa = _vector_angle(mand, axis)
        values["impa"] = 180.0 - impa if impa_supplement else impa

    values["gogn_sn"] = None
    if have("gogn_sn"):
        go, gn, s, n = pts["gogn_sn"]
        values["gogn_sn"] = _line_angle(go, gn, s, n)

    return MeasurementSet(**values)


def classify_sagittal(anb: float, scheme: ThresholdScheme) -> str:
    lo, hi = scheme.sagittal
    if anb < lo:
        return "III"
    if anb > hi:
        return "II"
    return "I"


def classify_vertical(gogn_sn: float, scheme: ThresholdScheme = THRESHOLD_SCHEMES["steiner"]) -> str:
    lo, hi = scheme.vertical
    if gogn_sn < lo:
        return "hypodivergent"
    if gogn_sn > hi:
        return "hyperdivergent"
    return "normodivergent"


def classify(m: MeasurementSet, scheme: ThresholdScheme) -> Classification:
    if m.anb is None:
        raise UnavailableMeasurement("ANB unavailable")
    if m.gogn_sn is None:
        raise UnavailableMeasurement("GoGn-SN unavailable")
    lo, hi = scheme.sagittal
    vlo, vhi = scheme.vertical
    return Classification(
        sagittal=classify_sagittal(m.anb, scheme),
        vertical=classify_vertical(m.gogn_sn, scheme),
        near_sagittal_lo=abs(m.anb - lo) <= BOUNDARY_BAND_DEG,
        near_sagittal_hi=abs(m.anb - hi) <= BOUNDARY_BAND_DEG,
        near_vertical_lo=abs(m.gogn_sn - vlo) <= BOUNDARY_BAND_DEG,
        near_vertical_hi=abs(m.gogn_sn - vhi) <= BOUNDARY_BAND_DEG,
    )


def agreement_report(
    pred: Sequence[str],
    gt: Sequence[str],
    order: Sequence[str] = SAGITTAL_ORDER,
) -> dict:
    """Confusion matrix (rows = ground truth), Cohen's kappa, whether all
    disagreements are between adjacent classes, and the count of two-step
    reversals (e.g. II <-> III)."""
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gt)} ground-truth labels")
    index = {label: i for i, label in enumerate(order)}
    k = len(order)
    confusion = np.zeros((k, k), dtype=np.int64)
    for p, g in zip(pred, gt):
        try:
            confusion[index[g], index[p]] += 1
        except KeyError as exc:
            raise ValidationError(f"label {exc} not in category order {order}") from None
    reversals = 0
    adjacent_only = True
    off_diagonal = 0
    for i in range(k):
        for j in range(k):
            if confusion[i, j] and i != j:
                off_diagonal += int(confusion[i, j])
                if abs(i - j) >= 2:
                    adjacent_only = False
                    reversals += int(confusion[i, j])
    try:
        kappa = cohens_kappa(confusion) if len(pred) else None
    except DegenerateMarginals:
        if off_diagonal == 0:
            kappa = 1.0  # perfect agreement on a single category
        else:
            raise
    return {
        "order": list(order),
        "confusion": confusion.tolist(),
        "kappa": kappa,
        "adjacent_only": adjacent_only,
        "reversals": reversals,
    }
