"""Canonical landmark registry, manifest ingestion, and unit handling.

All downstream geometry works in image pixel coordinates (origin top-left,
x rightward, y downward). Physical distances are derived per image through
``pixel_spacing`` (mm per pixel, isotropic); there is deliberately no
default spacing — records missing it are rejected so that mm-denominated
metrics stay honest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from .errors import ParseError, UnknownLandmarkName, ValidationError

# The 25 canonical landmark names. Order matters: prior stacks and CGT
# tensors index channels in exactly this order.
CANONICAL_LANDMARKS = (
    "Gnathion",
    "ANS",
    "Subnasale",
    "Sella",
    "Menton",
    "Pogonion",
    "L1_tip",
    "LowerLip",
    "Pronasale",
    "UpperLip",
    "U1_tip",
    "L1_root",
    "SoftPogonion",
    "A_point",
    "U1_root",
    "Articulare",
    "Gonion",
    "B_point",
    "Nasion",
    "Orbitale",
    "Condylion",
    "Pm",
    "Porion",
    "Basion",
    "PNS",
)

LANDMARK_INDEX = {name: i for i, name in enumerate(CANONICAL_LANDMARKS)}

VALID_SPLITS = ("train", "val", "test")


def _norm_key(raw: str) -> str:
    return raw.strip().rstrip(".").replace("-", "_").replace(" ", "_").lower()


# Built-in alias table. Keys are normalised via _norm_key; values are
# canonical names. Extensible at runtime through resolve_name(extra=...)
# or the CLI --aliases file, so new datasets need no code change.
_BUILTIN_ALIASES = {
    # cross-dataset abbreviations
    "u1": "U1_tip",
    "l1": "L1_tip",
    "cd": "Condylion",
    "co": "Condylion",
    "go": "Gonion",
    "me": "Menton",
    "gn": "Gnathion",
    "pog": "Pogonion",
    "pg": "Pogonion",
    "a": "A_point",
    "b": "B_point",
    "s": "Sella",
    "n": "Nasion",
    "na": "Nasion",
    "or": "Orbitale",
    "po": "Porion",
    "ar": "Articulare",
    "ba": "Basion",
    # soft tissue shorthands
    "pn": "Pronasale",
    "prn": "Pronasale",
    "sn": "Subnasale",
    "ul": "UpperLip",
    "ll": "LowerLip",
    "pog'": "SoftPogonion",
    "soft_pog": "SoftPogonion",
    "soft_pogonion": "SoftPogonion",
    # descriptive long forms
    "upper_incisor_tip": "U1_tip",
    "lower_incisor_tip": "L1_tip",
    "upper_incisor_root": "U1_root",
    "lower_incisor_root": "L1_root",
    "upper_lip": "UpperLip",
    "lower_lip": "LowerLip",
    "a_pt": "A_point",
    "b_pt": "B_point",
}


def _build_alias_map(extra: Optional[dict] = None) -> dict:
    table = {_norm_key(name): name for name in CANONICAL_LANDMARKS}
    table.update(_BUILTIN_ALIASES)
    if extra:
        for alias, target in extra.items():
            canon = resolve_name(target) if target not in CANONICAL_LANDMARKS else target
            table[_norm_key(alias)] = canon
    return table


_ALIAS_MAP = _build_alias_map()


def resolve_name(raw: str, extra: Optional[dict] = None) -> str:
    """Resolve a raw annotation label to its canonical landmark name.

    Matching is case-insensitive and tolerant of space/hyphen/underscore
    variants. ``extra`` maps additional aliases to canonical names (or to
    other resolvable aliases). Raises UnknownLandmarkName when nothing
    matches.
    """
    if not isinstance(raw, str) or not raw.strip():
        raise UnknownLandmarkName(f"empty landmark name: {raw!r}")
    table = _build_alias_map(extra) if extra else _ALIAS_MAP
    key = _norm_key(raw)
    try:
        return table[key]
    except KeyError:
        raise UnknownLandmarkName(f"no alias matches {raw!r}") from None


def to_mm(distance_px: float, spacing: float) -> float:
    """Convert a pixel distance to millimetres (spacing in mm/px, > 0)."""
    if spacing <= 0:
        raise ValidationError(f"pixel spacing must be > 0, got {spacing}")
    return distance_px * spacing


@dataclass(frozen=True)
class Landmark:
    """A named 2D point in image pixels; invisible points may omit coords."""

    name: str
    x: Optional[float]
    y: Optional[float]
    visible: bool = True

    def require_xy(self) -> tuple:
        if not self.visible or self.x is None or self.y is None:
            raise ValidationError(f"landmark {self.name} has no usable coordinates")
        return (self.x, self.y)


@dataclass(frozen=True)
class ImageRecord:
    id: str
    width: int
    height: int
    pixel_spacing: float
    split: str = "test"
    source: str = ""
    landmarks: tuple = field(default_factory=tuple)

    def landmark_map(self) -> dict:
        return {lm.name: lm for lm in self.landmarks}


@dataclass(frozen=True)
class Manifest:
    seed: int
    records: tuple

    def by_split(self, split: str) -> tuple:
        return tuple(r for r in self.records if r.split == split)

    def record(self, image_id: str) -> ImageRecord:
        for r in self.records:
            if r.id == image_id:
                return r
        raise KeyError(image_id)


def _validate_record(rec: ImageRecord) -> None:
    rid = rec.id
    if rec.pixel_spacing is None or not (rec.pixel_spacing > 0):
        raise ValidationError(f"record {rid}: pixel_spacing must be > 0")
    if rec.width <= 0 or rec.height <= 0:
        raise ValidationError(f"record {rid}: non-positive image dimensions")
    if rec.split not in VALID_SPLITS:
        raise ValidationError(f"record {rid}: split {rec.split!r} not in {VALID_SPLITS}")
    seen = set()
    for lm in rec.landmarks:
        if lm.name not in LANDMARK_INDEX:
            raise ValidationError(f"record {rid}: unknown landmark {lm.name!r}")
        if lm.name in seen:
            raise ValidationError(f"record {rid}: duplicate landmark {lm.name!r}")
        seen.add(lm.name)
        if lm.visible:
            if lm.x is None or lm.y is None or not (math.isfinite(lm.x) and math.isfinite(lm.y)):
                raise ValidationError(f"record {rid}: visible landmark {lm.name} lacks finite coordinates")
            if lm.x < 0 or lm.y < 0:
                raise ValidationError(f"record {rid}: visible landmark {lm.name} has negative coordinates")


def validate_manifest(manifest: Manifest) -> None:
    ids = set()
    for rec in manifest.records:
        if rec.id in ids:
            raise ValidationError(f"duplicate record id {rec.id!r}")
        ids.add(rec.id)
        _validate_record(rec)


def _landmark_from_dict(d: dict, aliases: Optional[dict]) -> Landmark:
    try:
        name = resolve_name(str(d["name"]), extra=aliases)
    except KeyError:
        raise ParseError(f"landmark entry missing 'name': {d!r}") from None
    x = d.get("x")
    y = d.get("y")
    return Landmark(
        name=name,
        x=None if x is None else float(x),
        y=None if y is None else float(y),
        visible=bool(d.get("visible", True)),
    )


def manifest_from_dict(doc: dict, aliases: Optional[dict] = None) -> Manifest:
    try:
        seed = int(doc["seed"])
        raw_records = doc["records"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"manifest missing top-level seed/records: {exc}") from exc
    records = []
    for rd in raw_records:
        try:
            rec = ImageRecord(
                id=str(rd["id"]),
                width=int(rd["width"]),
                height=int(rd["height"]),
                pixel_spacing=float(rd["pixel_spacing"]),
                split=str(rd.get("split", "test")),
                source=str(rd.get("source", "")),
                landmarks=tuple(_landmark_from_dict(ld, aliases) for ld in rd.get("landmarks", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed record {rd.get('id', '?')!r}: {exc}") from exc
        records.append(rec)
    manifest = Manifest(seed=seed, records=tuple(records))
    validate_manifest(manifest)
    return manifest


def load_manifest(path, aliases: Optional[dict] = None) -> Manifest:
    """Load and validate a manifest JSON file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read manifest {p}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest {p} is not valid JSON: {exc}") from exc
    return manifest_from_dict(doc, aliases)


def manifest_to_dict(manifest: Manifest) -> dict:
    return {
        "seed": manifest.seed,
        "records": [
            {
                "id": r.id,
                "width": r.width,
                "height": r.height,
                "pixel_spacing": r.pixel_spacing,
                "split": r.split,
                "source": r.source,
                "landmarks": [
                    {"name": lm.name, "x": lm.x, "y": lm.y, "visible": lm.visible}
                    for lm in r.landmarks
                ],
            }
            for r in manifest.records
        ],
    }


def save_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(json.dumps(manifest_to_dict(manifest), indent=2, sort_keys=True))


def import_isbi_annotations(
    annotation_paths: Iterable,
    names: list,
    width: int,
    height: int,
    pixel_spacing: float,
    split: str = "test",
    source: str = "isbi",
    seed: int = 0,
    aliases: Optional[dict] = None,
) -> Manifest:
    """Build a Manifest from ISBI-style plain-text annotation files.

    Each file holds one ``x,y`` pair per line; the landmark order is given
    by ``names`` (raw labels, resolved through the alias table). Lines
    beyond ``len(names)`` are ignored (ISBI files append extra metadata).
    """
    canonical = [resolve_name(n, extra=aliases) for n in names]
    records = []
    for path in sorted(Path(p) for p in annotation_paths):
        lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
        if len(lines) < len(canonical):
            raise ParseError(f"{path}: expected at least {len(canonical)} coordinate lines, found {len(lines)}")
        landmarks = []
        for name, line in zip(canonical, lines):
            parts = line.split(",")
            if len(parts) < 2:
                raise ParseError(f"{path}: malformed coordinate line {line!r}")
            try:
                x, y = float(parts[0]), float(parts[1])
            except ValueError as exc:
                raise ParseError(f"{path}: malformed coordinate line {line!r}") from exc
            landmarks.append(Landmark(name=name, x=x, y=y, visible=True))
        records.append(
            ImageRecord(
                id=path.stem,
                width=width,
                height=height,
                pixel_spacing=pixel_spacing,
                split=split,
                source=source,
                landmarks=tuple(landmarks),
            )
        )
    manifest = Manifest(seed=seed, records=tuple(records))
    validate_manifest(manifest)
    return manifest


def rescale_landmark(lm: Landmark, record: ImageRecord, out_w: int, out_h: int) -> Landmark:
    """Map a landmark from image coordinates into an out_w x out_h grid."""
    if not lm.visible or lm.x is None or lm.y is None:
        return lm
    return replace(lm, x=lm.x * (out_w / record.width), y=lm.y * (out_h / record.height))
