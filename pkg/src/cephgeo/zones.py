"""Anatomical zone model: fractional bounding boxes with fixed landmark
membership and containment calibration.

Zones are axis-aligned boxes in normalized image coordinates. Which zone
scores a landmark is fixed by the membership table below, never by
position; boxes may overlap spatially.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .errors import EmptyZone, ParseError, ValidationError
from .model import CANONICAL_LANDMARKS, ImageRecord, Landmark, Manifest

ZONE_MEMBERS = {
    "cranial_base": ("Sella", "Nasion", "Basion"),
    "midface": ("ANS", "U1_tip", "A_point", "U1_root", "Orbitale", "PNS"),
    "mandible": ("Gnathion", "Menton", "Pogonion", "L1_tip", "L1_root", "Gonion", "B_point", "Pm"),
    "posterior": ("Articulare", "Condylion", "Porion"),
    "soft_tissue": ("Subnasale", "LowerLip", "Pronasale", "UpperLip", "SoftPogonion"),
}

ZONE_OF = {name: zone for zone, members in ZONE_MEMBERS.items() for name in members}
assert set(ZONE_OF) == set(CANONICAL_LANDMARKS)


@dataclass(frozen=True)
class ZoneSpec:
    zone: str
    box: Tuple[float, float, float, float]  # (x0, y0, x1, y1) in [0, 1]
    landmarks: Tuple[str, ...]

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
            raise ValidationError(f"invalid zone box {self.box} for {self.zone!r}")


def contains(z: ZoneSpec, lm: Landmark, record: ImageRecord) -> bool:
    """Closed-box containment of the landmark's normalized position."""
    x, y = lm.require_xy()
    u = x / record.width
    v = y / record.height
    x0, y0, x1, y1 = z.box
    return (x0 <= u <= x1) and (y0 <= v <= y1)


def calibrate(manifest: Manifest, margin: float = 0.02) -> List[ZoneSpec]:
    """Tight per-zone boxes over the manifest, padded by ``margin`` per side
    and clipped to [0, 1]; by construction 100% containment on the input."""
    if margin <= 0:
        raise ValidationError("calibration margin must be > 0")
    specs = []
    for zone, members in ZONE_MEMBERS.items():
        us, vs = [], []
        for rec in manifest.records:
            for lm in rec.landmarks:
                if lm.name in members and lm.visible and lm.x is not None:
                    us.append(lm.x / rec.width)
                    vs.append(lm.y / rec.height)
        if not us:
            raise EmptyZone(f"zone {zone!r} has no visible member landmark in the manifest")
        box = (
            max(0.0, min(us) - margin),
            max(0.0, min(vs) - margin),
            min(1.0, max(us) + margin),
            min(1.0, max(vs) + margin),
        )
        specs.append(ZoneSpec(zone=zone, box=box, landmarks=tuple(members)))
    return specs


def containment_report(manifest: Manifest, specs: List[ZoneSpec]) -> dict:
    """Containment rate plus a per-violation listing."""
    by_zone = {s.zone: s for s in specs}
    checked = 0
    violations = []
    for rec in manifest.records:
        for lm in rec.landmarks:
            if not lm.visible or lm.x is None:
                continue
            spec = by_zone.get(ZONE_OF[lm.name])
            if spec is None:
                continue
            checked += 1
            if not contains(spec, lm, rec):
                violations.append({"image_id": rec.id, "landmark": lm.name, "zone": spec.zone})
    rate = 1.0 if checked == 0 else (checked - len(violations)) / checked
    return {"checked": checked, "violations": violations, "containment_rate": rate}


def rasterize(z: ZoneSpec, height: int, width: int) -> np.ndarray:
    """Binary mask: pixel included iff its normalized center is in the box."""
    u = (np.arange(width, dtype=np.float64) + 0.5) / width
    v = (np.arange(height, dtype=np.float64) + 0.5) / height
    x0, y0, x1, y1 = z.box
    cols = (u >= x0) & (u <= x1)
    rows = (v >= y0) & (v <= y1)
    return rows[:, None] & cols[None, :]


def save_zone_specs(specs: List[ZoneSpec], path) -> None:
    doc = [
        {"zone": s.zone, "box": list(s.box), "landmarks": list(s.landmarks)}
        for s in specs
    ]
    Path(path).write_text(json.dumps(doc, indent=2))


def load_zone_specs(path) -> List[ZoneSpec]:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read zones file {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise ParseError(f"{p}: expected a JSON list of zone specs")
    specs = []
    for d in doc:
        try:
            specs.append(
                ZoneSpec(
                    zone=str(d["zone"]),
                    box=tuple(float(b) for b in d["box"]),
                    landmarks=tuple(str(n) for n in d["landmarks"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{p}: malformed zone spec {d!r}: {exc}") from exc
    return specs
