"""Heatmap peak decoding, ensemble averaging, spread-based confidence
tiers, and activation-map quality metrics.

Decoding refines the integer argmax with a second-order Taylor step on the
log-map (gradient/Hessian from central finite differences), which recovers
sub-pixel peaks exactly for Gaussian-shaped activations. Ensembles are
averaged pixelwise *before* decoding so the peak shape stays Gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import _kernels
from .errors import AllZeroMap, ShapeMismatch, ValidationError
from .model import Landmark
from .priors import TIER_RANGES

LOG_FLOOR = 1e-10

# hat-sigma thresholds (px) separating High / Medium / Low confidence
TIER_THRESHOLDS = (4.0, 8.0)

# spread window: 3 x the broadest prior tier sigma
DEFAULT_SPREAD_RADIUS = 3.0 * max(hi for _, hi in TIER_RANGES.values())
DEFAULT_NOISE_FLOOR = 0.05


@dataclass(frozen=True)
class Heatmap:
    grid: np.ndarray
    landmark: str = ""
    scale: float = 1.0  # heatmap px per image px

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 2:
            raise ValidationError(f"heatmap grid must be 2D, got shape {g.shape}")
        if np.any(g < 0):
            raise ValidationError("heatmap values must be non-negative")
        object.__setattr__(self, "grid", g)


def decode(h: Heatmap) -> Tuple[float, float, float]:
    """Sub-pixel peak location and peak value.

    Integer argmax (first occurrence on ties), then offset =
    -Hessian^-1 . gradient of the log-map, clamped to [-1, 1] per axis.
    Falls back to the integer peak when the argmax touches the border or
    the Hessian is not negative definite.
    """
    g = h.grid
    flat = int(np.argmax(g))
    height, width = g.shape
    py, px = divmod(flat, width)
    peak = float(g[py, px])
    if peak <= 0.0:
        raise AllZeroMap("cannot decode an all-zero heatmap")
    if not (1 <= px <= width - 2 and 1 <= py <= height - 2):
        return float(px), float(py), peak

    lg = np.log(np.maximum(g[py - 1 : py + 2, px - 1 : px + 2], LOG_FLOOR))
    dx = 0.5 * (lg[1, 2] - lg[1, 0])
    dy = 0.5 * (lg[2, 1] - lg[0, 1])
    dxx = lg[1, 2] - 2.0 * lg[1, 1] + lg[1, 0]
    dyy = lg[2, 1] - 2.0 * lg[1, 1] + lg[0, 1]
    dxy = 0.25 * (lg[2, 2] - lg[2, 0] - lg[0, 2] + lg[0, 0])

    det = dxx * dyy - dxy * dxy
    if not (dxx < 0.0 and det > 0.0):  # needs a negative-definite Hessian
        return float(px), float(py), peak
    ox = -(dyy * dx - dxy * dy) / det
    oy = -(dxx * dy - dxy * dx) / det
    ox = min(1.0, max(-1.0, ox))
    oy = min(1.0, max(-1.0, oy))
    return px + ox, py + oy, peak


def ensemble_average(maps: List[Heatmap]) -> Heatmap:
    """Pixelwise arithmetic mean of same-landmark heatmaps."""
    if not maps:
        raise ValidationError("ensemble of zero heatmaps")
    first = maps[0]
    for m in maps[1:]:
        if m.grid.shape != first.grid.shape:
            raise ShapeMismatch(f"heatmap shapes differ: {m.grid.shape} vs {first.grid.shape}")
        if m.landmark != first.landmark:
            raise ShapeMismatch(f"heatmap landmarks differ: {m.landmark!r} vs {first.landmark!r}")
    stacked = np.stack([m.grid for m in maps])
    # per-pixel sort canonicalises the summation order, so the mean is
    # exactly permutation-invariant in the inputs
    stacked.sort(axis=0)
    mean = stacked.sum(axis=0) / len(maps)
    return Heatmap(grid=mean, landmark=first.landmark, scale=first.scale)


def effective_sigma(
    h: Heatmap,
    window_radius: float = DEFAULT_SPREAD_RADIUS,
    noise_floor: float = DEFAULT_NOISE_FLOOR,
) -> float:
    """Per-axis spatial spread of the activation peak, in px.

    Activation-weighted second moment about the decoded peak, restricted to
    a window around it with values below ``noise_floor`` of the peak zeroed,
    halved (radial -> per-axis) and square-rooted so that a sampled Gaussian
    of parameter sigma measures close to sigma (truncation biases it a few
    percent low).
    """
    cx, cy, peak = decode(h)
    g = h.grid
    height, width = g.shape
    r = int(math.ceil(window_radius))
    x0 = max(0, int(math.floor(cx)) - r)
    x1 = min(width, int(math.floor(cx)) + r + 1)
    y0 = max(0, int(math.floor(cy)) - r)
    y1 = min(height, int(math.floor(cy)) + r + 1)
    win = np.ascontiguousarray(g[y0:y1, x0:x1])
    wsum, wr2 = _kernels.weighted_spread(win, cx - x0, cy - y0, noise_floor * peak)
    if wsum <= 0.0:
        return 0.0
    return math.sqrt(wr2 / (2.0 * wsum))


def classify_confidence(sigma_hat: float) -> str:
    """Tier for a measured heatmap spread: High (<4 px), Medium (4-8),
    Low (>=8)."""
    if sigma_hat < 0:
        raise ValidationError(f"sigma_hat must be >= 0, got {sigma_hat}")
    lo, hi = TIER_THRESHOLDS
    if sigma_hat < lo:
        return "High"
    if sigma_hat < hi:
        return "Medium"
    return "Low"


def map_metrics(act: np.ndarray, gt: Landmark, zone_mask: np.ndarray) -> dict:
    """Activation-map quality metrics against a ground-truth landmark.

    Returns peak-to-GT distance (px), Shannon entropy (bits) of the map
    normalised to unit mass, the fraction of mass inside the zone mask,
    and its complement. ``gt`` must be expressed in map coordinates.
    """
    a = np.asarray(act, dtype=np.float64)
    if a.ndim != 2:
        raise ValidationError(f"activation map must be 2D, got {a.shape}")
    if np.any(a < 0):
        raise ValidationError("activation map must be non-negative")
    mask = np.asarray(zone_mask)
    if mask.shape != a.shape:
        raise ShapeMismatch(f"zone mask {mask.shape} vs activation {a.shape}")
    total = float(a.sum())
    if total <= 0.0:
        raise AllZeroMap("activation map has no mass")

    gx, gy = gt.require_xy()
    py, px = np.unravel_index(int(np.argmax(a)), a.shape)
    peak_to_gt = math.hypot(px - gx, py - gy)

    p = a / total
    nz = p[p > 0]
    entropy_bits = float(-(nz * np.log2(nz)).sum())
    in_roi = float(p[mask.astype(bool)].sum())
    return {
        "peak_to_gt_px": peak_to_gt,
        "entropy_bits": entropy_bits,
        "in_roi_ratio": in_roi,
        "off_zone_ratio": 1.0 - in_roi,
    }
