#!/usr/bin/env python3
"""Regenerate the bundled toy dataset under data/toy/.

Three synthetic lateral-view records with all 25 landmarks and seven
anatomically-shaped contours per image, built so that every anchor rule
provably selects the intended landmark (asserted below before writing).
Deterministic: same seed, same bytes.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from cephgeo import anchors, geometry  # noqa: E402
from cephgeo.model import CANONICAL_LANDMARKS  # noqa: E402

SEED = 20240715

# normalized (u, v) base layout for a right-facing lateral view
BASE = {
    "Sella": (0.42, 0.35),
    "Nasion": (0.62, 0.32),
    "Basion": (0.38, 0.52),
    "Orbitale": (0.63, 0.42),
    "Porion": (0.36, 0.44),
    "Condylion": (0.425, 0.42),
    "Articulare": (0.42, 0.50),
    "ANS": (0.72, 0.55),
    "PNS": (0.52, 0.56),
    "A_point": (0.71, 0.604),
    "U1_root": (0.70, 0.63),
    "U1_tip": (0.72, 0.70),
    "L1_tip": (0.71, 0.72),
    "L1_root": (0.68, 0.80),
    "B_point": (0.70, 0.79),
    "Pm": (0.705, 0.825),
    "Pogonion": (0.72, 0.86),
    "Gnathion": (0.69, 0.89),
    "Menton": (0.66, 0.90),
    "Gonion": (0.45, 0.70),
    "Pronasale": (0.80, 0.52),
    "Subnasale": (0.78, 0.58),
    "UpperLip": (0.79, 0.64),
    "LowerLip": (0.78, 0.72),
    "SoftPogonion": (0.76, 0.87),
}

IMAGES = [
    {"id": "toy_001", "width": 800, "height": 1000, "pixel_spacing": 0.10, "split": "train"},
    {"id": "toy_002", "width": 760, "height": 950, "pixel_spacing": 0.11, "split": "train"},
    {"id": "toy_003", "width": 840, "height": 1050, "pixel_spacing": 0.095, "split": "test"},
]


def leg(p, q, bow, n):
    """Smooth polyline from p to q with a sinusoidal perpendicular bow."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    t = np.linspace(0.0, 1.0, n)
    chord = q - p
    normal = np.array([-chord[1], chord[0]])
    normal /= np.hypot(*normal)
    return p[None, :] + t[:, None] * chord[None, :] + (bow * np.sin(np.pi * t))[:, None] * normal[None, :]


def chain(*segments):
    pts = [segments[0]]
    for seg in segments[1:]:
        pts.append(seg[1:])  # drop duplicated joint vertex
    return np.vstack(pts)


def build_contours(lm):
    """Seven contours consistent with the anchor rule catalog."""
    scale = np.hypot(lm["Nasion"][0] - lm["Basion"][0], lm["Nasion"][1] - lm["Basion"][1])
    b = scale / 30.0  # gentle bow amplitude
    profile_top = (lm["Nasion"][0] + 0.3 * scale, lm["Nasion"][1] - 0.1 * scale)
    return {
        "cranial_base": chain(
            leg(lm["Basion"], lm["Sella"], 1.2 * b, 30),
            leg(lm["Sella"], lm["Nasion"], -b, 30),
        ),
        "palatal_plane": leg(lm["PNS"], lm["ANS"], 0.6 * b, 25),
        "symphysis": chain(
            leg(lm["B_point"], lm["Pogonion"], 0.8 * b, 20),
            leg(lm["Pogonion"], lm["Gnathion"], 0.4 * b, 15),
            leg(lm["Gnathion"], lm["Menton"], 0.3 * b, 12),
        ),
        "mandibular_border": chain(
            leg(lm["Condylion"], lm["Articulare"], 0.4 * b, 12),
            leg(lm["Articulare"], lm["Gonion"], 0.8 * b, 25),
            leg(lm["Gonion"], lm["Menton"], -0.8 * b, 25),
            leg(lm["Menton"], lm["Gnathion"], 0.2 * b, 8),
            leg(lm["Gnathion"], lm["Pogonion"], 0.2 * b, 8),
            leg(lm["Pogonion"], lm["B_point"], 0.3 * b, 10),
        ),
        "soft_tissue": chain(
            leg(profile_top, (lm["Pronasale"][0] - 0.2 * scale, lm["Pronasale"][1] - 0.25 * scale), 0.5 * b, 15),
            leg((lm["Pronasale"][0] - 0.2 * scale, lm["Pronasale"][1] - 0.25 * scale), lm["Pronasale"], 0.4 * b, 15),
        ),
        "incisor_axis": leg(lm["L1_root"], lm["L1_tip"], 0.15 * b, 8),
        "cranial_vault": leg(
            (lm["Basion"][0] - 0.2 * scale, lm["Sella"][1] - 0.5 * scale),
            (lm["Nasion"][0] + 0.1 * scale, lm["Nasion"][1] - 0.4 * scale),
            -2.5 * b,
            40,
        ),
    }


def main() -> int:
    rng = np.random.default_rng(SEED)
    out_dir = ROOT / "data" / "toy"
    contours_dir = out_dir / "contours"
    contours_dir.mkdir(parents=True, exist_ok=True)

    tol = geometry.ToleranceTable()
    catalog = anchors.RuleCatalog()
    records = []
    for meta in IMAGES:
        w, h = meta["width"], meta["height"]
        lm_px = {}
        for name, (u, v) in BASE.items():
            ju, jv = rng.uniform(-0.006, 0.006, size=2)
            lm_px[name] = (round((u + ju) * w, 2), round((v + jv) * h, 2))

        raw = build_contours(lm_px)
        contours = {
            cls: geometry.Contour(np.round(pts, 2), cls) for cls, pts in raw.items()
        }

        # prove the rule catalog lands on the intended landmarks
        extracted, errors = anchors.extract_all(contours, catalog, tol, meta["pixel_spacing"])
        assert not errors, errors
        for anchor in extracted:
            gx, gy = lm_px[anchor.name]
            d = np.hypot(anchor.x - gx, anchor.y - gy)
            assert d < 2.0, f"{meta['id']}: {anchor.name} off by {d:.2f}px"

        records.append(
            {
                "id": meta["id"],
                "width": w,
                "height": h,
                "pixel_spacing": meta["pixel_spacing"],
                "split": meta["split"],
                "source": "toy",
                "landmarks": [
                    {"name": name, "x": lm_px[name][0], "y": lm_px[name][1], "visible": True}
                    for name in CANONICAL_LANDMARKS
                ],
            }
        )
        doc = [geometry.contour_to_dict(c) for c in contours.values()]
        (contours_dir / f"{meta['id']}.json").write_text(json.dumps(doc, indent=2) + "\n")

    manifest = {"seed": SEED, "records": records}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(records)} records -> {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
