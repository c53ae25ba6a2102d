"""Confidence-weighted Gaussian attention priors.

Each landmark gets one channel holding exp(-((x-cx)^2 + (y-cy)^2) /
(2 sigma^2)) evaluated at integer pixel centers; sub-pixel centers are
preserved. Channel breadth is set by a three-tier sigma system: high
(5-7 px) for unambiguous anchors, medium (8-13 px), low (18-22 px) for
the hardest targets. Four stack generators cover the prior-content
conditions used when probing what a downstream detector actually needs:
ground-truth derived, all-zero, population-mean (identical for every
image), and seeded random centers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import _kernels
from .errors import MissingPopulationStats, ValidationError
from .model import CANONICAL_LANDMARKS, ImageRecord, Landmark, Manifest

DEFAULT_RESOLUTION = 256

TIER_RANGES = {"high": (5.0, 7.0), "medium": (8.0, 13.0), "low": (18.0, 22.0)}

HIGH_TIER = ("Sella", "Nasion", "Menton", "ANS", "Pronasale")
LOW_TIER = ("Porion", "PNS", "B_point", "Basion", "Condylion")

# Sigmas reported for individual channels; every other landmark takes the
# midpoint of its tier range. Not a published table — config-overridable.
NAMED_SIGMAS = {"ANS": 7.0, "Gonion": 12.0, "B_point": 20.0, "PNS": 22.0}

PRIOR_VARIANTS = ("gt_derived", "zero", "population_mean", "random")


def _default_tier(name: str) -> str:
    if name in HIGH_TIER:
        return "high"
    if name in LOW_TIER:
        return "low"
    return "medium"


class SigmaTable:
    """Per-landmark sigma assignment constrained to its tier range."""

    def __init__(self, overrides: Optional[Dict[str, float]] = None):
        self._tier: Dict[str, str] = {}
        self._sigma: Dict[str, float] = {}
        for name in CANONICAL_LANDMARKS:
            tier = _default_tier(name)
            lo, hi = TIER_RANGES[tier]
            sigma = NAMED_SIGMAS.get(name, (lo + hi) / 2.0)
            self._tier[name] = tier
            self._sigma[name] = sigma
        if overrides:
            for name, sigma in overrides.items():
                if name not in self._sigma:
                    raise ValidationError(f"unknown landmark {name!r} in sigma overrides")
                sigma = float(sigma)
                tier = self._containing_tier(sigma)
                if tier is None:
                    raise ValidationError(
                        f"sigma {sigma} for {name} falls outside every tier range"
                    )
                self._tier[name] = tier
                self._sigma[name] = sigma

    @staticmethod
    def _containing_tier(sigma: float) -> Optional[str]:
        for tier, (lo, hi) in TIER_RANGES.items():
            if lo <= sigma <= hi:
                return tier
        return None

    def sigma(self, name: str) -> float:
        return self._sigma[name]

    def tier(self, name: str) -> str:
        return self._tier[name]

    def as_dict(self) -> Dict[str, float]:
        return dict(self._sigma)


@dataclass(frozen=True)
class PriorCondition:
    variant: str
    seed: Optional[int] = None
    population: Optional[Dict[str, Tuple[float, float]]] = field(default=None)

    def __post_init__(self):
        if self.variant not in PRIOR_VARIANTS:
            raise ValidationError(f"unknown prior condition {self.variant!r}")
        if self.variant == "random" and self.seed is None:
            raise ValidationError("random prior condition requires a seed")


def gaussian_map(center: Tuple[float, float], sigma: float, height: int, width: int) -> np.ndarray:
    """One Gaussian attention channel; the center may be sub-pixel and may
    lie outside the grid (the map is then a truncated tail)."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    if height < 1 or width < 1:
        raise ValidationError(f"bad map size {height}x{width}")
    out = np.empty((height, width), dtype=np.float64)
    _kernels.gaussian_fill(out, float(center[0]), float(center[1]), float(sigma))
    return out


def build_stack(
    landmarks: List[Landmark],
    sigmas: SigmaTable,
    height: int = DEFAULT_RESOLUTION,
    width: int = DEFAULT_RESOLUTION,
) -> np.ndarray:
    """(25, H, W) stack in canonical channel order.

    Landmark coordinates must already be expressed in the stack's
    resolution (see model.rescale_landmark). Not-visible landmarks produce
    all-zero channels; input list order is irrelevant.
    """
    stack = np.zeros((len(CANONICAL_LANDMARKS), height, width), dtype=np.float64)
    by_name = {lm.name: lm for lm in landmarks}
    for k, name in enumerate(CANONICAL_LANDMARKS):
        lm = by_name.get(name)
        if lm is None or not lm.visible or lm.x is None or lm.y is None:
            continue
        _kernels.gaussian_fill(stack[k], float(lm.x), float(lm.y), sigmas.sigma(name))
    return stack


def population_stats(manifest: Manifest, split: str = "train") -> Tuple[Dict[str, Tuple[float, float]], List[str]]:
    """Per-landmark mean normalized position over the given split.

    Averages (x/width, y/height) over records where the landmark is
    visible. Landmarks visible nowhere are returned in the missing list
    (their prior channels stay zero).
    """
    records = manifest.by_split(split)
    if not records:
        raise ValidationError(f"manifest has no records in split {split!r}")
    sums = {name: [0.0, 0.0, 0] for name in CANONICAL_LANDMARKS}
    for rec in records:
        for lm in rec.landmarks:
            if lm.visible and lm.x is not None and lm.y is not None:
                acc = sums[lm.name]
                acc[0] += lm.x / rec.width
                acc[1] += lm.y / rec.height
                acc[2] += 1
    stats: Dict[str, Tuple[float, float]] = {}
    missing: List[str] = []
    for name in CANONICAL_LANDMARKS:
        sx, sy, n = sums[name]
        if n == 0:
            missing.append(name)
        else:
            stats[name] = (sx / n, sy / n)
    return stats, missing


def _random_center(seed: int, image_id: str, landmark_index: int, height: int, width: int) -> Tuple[float, float]:
    # counter-based generator keyed by (seed, image id, landmark) so parallel
    # generation is order-independent and bit-reproducible
    digest = hashlib.sha256(f"{seed}|{image_id}|{landmark_index}".encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    rng = np.random.Generator(np.random.Philox(key=key))
    x = rng.uniform(0.0, width - 1.0)
    y = rng.uniform(0.0, height - 1.0)
    return x, y


def make_condition_stack(
    cond: PriorCondition,
    record: ImageRecord,
    sigmas: SigmaTable,
    height: int = DEFAULT_RESOLUTION,
    width: int = DEFAULT_RESOLUTION,
) -> np.ndarray:
    """Prior stack for one image under the requested condition."""
    if cond.variant == "zero":
        return np.zeros((len(CANONICAL_LANDMARKS), height, width), dtype=np.float64)

    if cond.variant == "gt_derived":
        placed = [
            Landmark(lm.name, lm.x * (width / record.width), lm.y * (height / record.height), True)
            for lm in record.landmarks
            if lm.visible and lm.x is not None and lm.y is not None
        ]
        return build_stack(placed, sigmas, height, width)

    if cond.variant == "population_mean":
        if not cond.population:
            raise MissingPopulationStats("population_mean condition needs population statistics")
        placed = [
            Landmark(name, u * width, v * height, True)
            for name, (u, v) in cond.population.items()
        ]
        return build_stack(placed, sigmas, height, width)

    # random: per-image uniform in-bounds centers with the same sigma tiers
    placed = []
    for k, name in enumerate(CANONICAL_LANDMARKS):
        x, y = _random_center(cond.seed, record.id, k, height, width)
        placed.append(Landmark(name, x, y, True))
    return build_stack(placed, sigmas, height, width)
