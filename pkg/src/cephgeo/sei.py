"""Spatial Entropy Index: a composite score of how spatially distributed
a landmark configuration is.

Three components over normalized positions in the unit square: Shannon
entropy of N x N grid-cell occupancy (normalized by its maximum), mean
pairwise distance divided by the unit-square diagonal, and the number of
complete-linkage clusters at diameter threshold r capped at Z_max. The
composite is their product, so it is high only when points are evenly
spread, far apart, and span many distinct groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import EmptyPointSet, TooFewPoints, ValidationError
from .model import Manifest

DEFAULT_GRID = 8
DEFAULT_RADIUS = 0.15
DEFAULT_ZMAX = 10


@dataclass(frozen=True)
class SeiReport:
    n_landmarks: int
    grid_entropy_bits: float
    normalized_entropy: float
    pairwise_distance: float
    cluster_count: int
    cluster_ratio: float
    sei: float
    grid: int
    radius: float
    zmax: int

    def to_dict(self) -> dict:
        return asdict(self)


def _check_points(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError(f"points must be (n, 2), got {pts.shape}")
    if np.any(pts < 0.0) or np.any(pts > 1.0):
        raise ValidationError("points must lie in the unit square")
    return pts


def grid_entropy(points, n: int = DEFAULT_GRID) -> Tuple[float, float]:
    """(H_grid bits, H_norm) of grid-cell occupancy.

    Points exactly on the upper boundary bin into the last cell so all
    mass stays inside the grid.
    """
    pts = _check_points(points)
    if pts.shape[0] == 0:
        raise EmptyPointSet("grid entropy of an empty point set")
    if n < 1:
        raise ValidationError(f"grid size must be >= 1, got {n}")
    cols = np.minimum((pts[:, 0] * n).astype(np.int64), n - 1)
    rows = np.minimum((pts[:, 1] * n).astype(np.int64), n - 1)
    counts = np.bincount(rows * n + cols, minlength=n * n).astype(np.float64)
    p = counts[counts > 0] / pts.shape[0]
    h = float(-(p * np.log2(p)).sum())
    hmax = math.log2(n * n) if n > 1 else 1.0
    return h, h / hmax


def pairwise_distance(points) -> float:
    """Mean distance over unordered pairs, divided by the diagonal sqrt(2)."""
    pts = _check_points(points)
    m = pts.shape[0]
    if m < 2:
        raise TooFewPoints("pairwise distance needs at least 2 points")
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.sqrt((diff ** 2).sum(axis=2))
    iu = np.triu_indices(m, k=1)
    # sorted summation makes the mean exactly permutation-invariant
    return float(np.sort(d[iu]).mean() / math.sqrt(2.0))


def zone_count(points, radius: float = DEFAULT_RADIUS) -> int:
    """Clusters under complete-linkage agglomeration with diameter cap.

    Merging continues while some pair of clusters has max inter-point
    distance <= radius, i.e. while a merge keeps every cluster diameter
    within the threshold (boundary inclusive).
    """
    pts = _check_points(points)
    m = pts.shape[0]
    if m == 0:
        raise EmptyPointSet("zone count of an empty point set")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    clusters: List[List[int]] = [[i] for i in range(m)]
    while len(clusters) > 1:
        best = math.inf
        pair = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                link = max(dist[a, b] for a in clusters[i] for b in clusters[j])
                if link < best:
                    best = link
                    pair = (i, j)
        if best > radius:
            break
        i, j = pair
        clusters[i].extend(clusters[j])
        del clusters[j]
    return len(clusters)


def compose(normalized_entropy: float, pairwise: float, clusters: int, zmax: int = DEFAULT_ZMAX) -> float:
    """SEI = H_norm x D_pair x min(Z / Z_max, 1)."""
    return normalized_entropy * pairwise * min(clusters / zmax, 1.0)


def sei(
    points,
    grid: int = DEFAULT_GRID,
    radius: float = DEFAULT_RADIUS,
    zmax: int = DEFAULT_ZMAX,
) -> SeiReport:
    pts = _check_points(points)
    if pts.shape[0] < 2:
        raise TooFewPoints("SEI needs at least 2 points")
    h, h_norm = grid_entropy(pts, grid)
    d_pair = pairwise_distance(pts)
    z = zone_count(pts, radius)
    return SeiReport(
        n_landmarks=pts.shape[0],
        grid_entropy_bits=h,
        normalized_entropy=h_norm,
        pairwise_distance=d_pair,
        cluster_count=z,
        cluster_ratio=min(z / zmax, 1.0),
        sei=compose(h_norm, d_pair, z, zmax),
        grid=grid,
        radius=radius,
        zmax=zmax,
    )


def mean_landmark_positions(manifest: Manifest, split: str = None) -> np.ndarray:
    """Per-landmark mean normalized positions across a manifest.

    The usual SEI input: one point per landmark that is visible somewhere,
    each the visibility-aware mean of (x/width, y/height).
    """
    records = manifest.records if split is None else manifest.by_split(split)
    sums: Dict[str, list] = {}
    for rec in records:
        for lm in rec.landmarks:
            if lm.visible and lm.x is not None:
                acc = sums.setdefault(lm.name, [0.0, 0.0, 0])
                acc[0] += lm.x / rec.width
                acc[1] += lm.y / rec.height
                acc[2] += 1
    if not sums:
        raise EmptyPointSet("manifest has no visible landmarks")
    pts = [(acc[0] / acc[2], acc[1] / acc[2]) for _, acc in sorted(sums.items())]
    return np.clip(np.asarray(pts, dtype=np.float64), 0.0, 1.0)


def coverage_fraction(points, sigma: float, grid: int = 256) -> float:
    """Fraction of the unit square within ``sigma`` of any point.

    Secondary statistic (union of sigma-radius disks, estimated on a
    ``grid`` x ``grid`` lattice of cell centers). The dilation radius is
    caller-supplied, so values are not comparable across conventions.
    """
    pts = _check_points(points)
    if sigma <= 0:
        raise ValidationError(f"coverage sigma must be > 0, got {sigma}")
    c = (np.arange(grid, dtype=np.float64) + 0.5) / grid
    gx, gy = np.meshgrid(c, c)
    covered = np.zeros((grid, grid), dtype=bool)
    for x, y in pts:
        covered |= (gx - x) ** 2 + (gy - y) ** 2 <= sigma * sigma
    return float(covered.mean())
