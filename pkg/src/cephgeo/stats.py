"""Evaluation metrics (MRE, SDR) and statistical tests.

Conventions pinned here so downstream numbers are auditable: SDR counts an
error exactly on the threshold as a success; the bootstrap CI is the
percentile interval of the resampled mean; the permutation test sign-flips
per-patient differences, uses |mean difference| as the statistic, and
applies add-one smoothing in Monte-Carlo mode (it switches to exhaustive
enumeration when 2^n <= P, where the p-value is exact and unsmoothed);
every randomized procedure is bit-reproducible given its seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr, stdtr

from . import _kernels
from .errors import (
    AllZeroDifferences,
    DegenerateMarginals,
    EmptyGroup,
    LengthMismatch,
    ParseError,
    TooFewValues,
    ValidationError,
    ZeroVariance,
)


@dataclass(frozen=True)
class ErrorRow:
    image_id: str
    landmark: str
    error_mm: float
    visible: bool = True
    source: str = ""


class ErrorTable:
    """Radial errors per (image, landmark), visibility-masked."""

    def __init__(self, rows: Iterable[ErrorRow]):
        self.rows: Tuple[ErrorRow, ...] = tuple(rows)
        for r in self.rows:
            if r.visible and r.error_mm < 0:
                raise ValidationError(f"negative error for {r.image_id}/{r.landmark}")

    def visible_rows(self) -> List[ErrorRow]:
        return [r for r in self.rows if r.visible]

    def errors(self) -> np.ndarray:
        return np.asarray([r.error_mm for r in self.visible_rows()], dtype=np.float64)

    def group_errors(self, key: str) -> Dict[str, np.ndarray]:
        if key not in ("landmark", "source", "image_id"):
            raise ValidationError(f"unknown grouping key {key!r}")
        groups: Dict[str, list] = {}
        for r in self.visible_rows():
            groups.setdefault(getattr(r, key), []).append(r.error_mm)
        return {k: np.asarray(v, dtype=np.float64) for k, v in sorted(groups.items())}

    def __len__(self):
        return len(self.rows)


def load_error_table(path) -> ErrorTable:
    p = Path(path)
    rows = []
    try:
        with open(p, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"image_id", "landmark", "error_mm"} <= set(reader.fieldnames):
                raise ParseError(f"{p}: expected columns image_id,landmark,error_mm[,visible][,source]")
            for rec in reader:
                rows.append(
                    ErrorRow(
                        image_id=rec["image_id"],
                        landmark=rec["landmark"],
                        error_mm=float(rec["error_mm"]),
                        visible=str(rec.get("visible", "true")).strip().lower() in ("1", "true", "yes"),
                        source=rec.get("source", "") or "",
                    )
                )
    except OSError as exc:
        raise ParseError(f"cannot read {p}: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"{p}: bad numeric value: {exc}") from exc
    return ErrorTable(rows)


def save_error_table(table: ErrorTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "landmark", "error_mm", "visible", "source"])
        for r in table.rows:
            writer.writerow([r.image_id, r.landmark, repr(r.error_mm), str(r.visible).lower(), r.source])


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    detail: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def mre(table: ErrorTable) -> float:
    """Mean radial error over all visible rows."""
    e = table.errors()
    if e.size == 0:
        raise EmptyGroup("no visible errors")
    return float(e.mean())


def mre_by(table: ErrorTable, key: str = "landmark") -> Dict[str, float]:
    groups = table.group_errors(key)
    if not groups:
        raise EmptyGroup("no visible errors")
    return {k: float(v.mean()) for k, v in groups.items()}


def sdr(table: ErrorTable, threshold: float) -> float:
    """Fraction of visible errors <= threshold (boundary counts as success)."""
    e = table.errors()
    if e.size == 0:
        raise EmptyGroup("no visible errors")
    return float((e <= threshold).mean())


def sdr_by(table: ErrorTable, threshold: float, key: str = "landmark") -> Dict[str, float]:
    groups = table.group_errors(key)
    if not groups:
        raise EmptyGroup("no visible errors")
    return {k: float((v <= threshold).mean()) for k, v in groups.items()}


def bootstrap_ci(
    values: Sequence[float],
    resamples: int = 10000,
    level: float = 0.95,
    seed: int = 0,
    chunk: int = 512,
) -> Tuple[float, float]:
    """Percentile bootstrap CI of the mean, deterministic per seed."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise TooFewValues("bootstrap needs at least 2 values")
    if resamples < 100:
        raise ValidationError(f"resamples must be >= 100, got {resamples}")
    if not (0.0 < level < 1.0):
        raise ValidationError(f"level must be in (0, 1), got {level}")
    rng = np.random.Generator(np.random.PCG64(seed))
    means = np.empty(resamples, dtype=np.float64)
    done = 0
    while done < resamples:
        b = min(chunk, resamples - done)
        idx = rng.integers(0, v.size, size=(b, v.size), dtype=np.int64)
        means[done : done + b] = _kernels.resample_means(v, idx)
        done += b
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# paired tests
# ---------------------------------------------------------------------------

def _paired_diffs(a, b) -> np.ndarray:
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.ndim != 1:
        raise LengthMismatch(f"paired vectors must match: {av.shape} vs {bv.shape}")
    return av - bv


def paired_t(a, b) -> TestResult:
    """Classic paired t-test, two-sided, df = n - 1."""
    d = _paired_diffs(a, b)
    n = d.size
    if n < 2:
        raise TooFewValues("paired t needs n >= 2")
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise ZeroVariance("all paired differences are identical")
    t = float(d.mean() / (sd / math.sqrt(n)))
    p = 2.0 * float(stdtr(n - 1, -abs(t)))
    return TestResult(statistic=t, p_value=p, method="paired_t",
                      detail={"n": n, "df": n - 1, "mean_difference": float(d.mean()), "sided": 2})


def permutation_test(a, b, permutations: int = 10000, seed: int = 0, chunk: int = 1024) -> TestResult:
    """Sign-flip permutation test on per-patient differences.

    Statistic: |mean difference|. Exhaustive when 2^n <= permutations
    (exact p); otherwise Monte-Carlo with add-one smoothing so p is never 0.
    """
    d = _paired_diffs(a, b)
    n = d.size
    if n == 0:
        raise TooFewValues("permutation test needs n >= 1")
    observed = float(_kernels.signflip_mean_abs(d, np.ones((1, n)))[0])

    if n <= 62 and (1 << n) <= permutations:
        total = 1 << n
        bits = (np.arange(total, dtype=np.uint64)[:, None] >> np.arange(n, dtype=np.uint64)[None, :]) & 1
        signs = bits.astype(np.float64) * 2.0 - 1.0
        stats_all = _kernels.signflip_mean_abs(d, signs)
        p = float((stats_all >= observed).sum()) / total
        return TestResult(statistic=observed, p_value=p, method="permutation_exhaustive",
                          detail={"n": n, "permutations": total, "sided": 2})

    rng = np.random.Generator(np.random.PCG64(seed))
    count = 0
    done = 0
    while done < permutations:
        bsz = min(chunk, permutations - done)
        signs = rng.integers(0, 2, size=(bsz, n)).astype(np.float64) * 2.0 - 1.0
        stats_chunk = _kernels.signflip_mean_abs(d, signs)
        count += int((stats_chunk >= observed).sum())
        done += bsz
    p = (1.0 + count) / (permutations + 1.0)
    return TestResult(statistic=observed, p_value=p, method="permutation_monte_carlo",
                      detail={"n": n, "permutations": permutations, "seed": seed, "sided": 2})


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(a, b, exact_max_n: int = 25) -> TestResult:
    """Two-sided Wilcoxon signed-rank test.

    Zero differences are dropped and tied |d| get averaged ranks. The exact
    null distribution (dynamic programming over doubled ranks) is used for
    n <= 25; larger n uses the normal approximation with tie and continuity
    corrections.
    """
    d = _paired_diffs(a, b)
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        raise AllZeroDifferences("all paired differences are zero")
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= exact_max_n:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        total = int(doubled.sum())
        ways = np.zeros(total + 1, dtype=np.float64)
        ways[0] = 1.0
        for r in doubled:
            ways[r:] += ways[: total + 1 - r]
        denom = 2.0 ** n
        w2 = int(round(2.0 * w_plus))
        p_le = ways[: w2 + 1].sum() / denom
        p_ge = ways[w2:].sum() / denom
        p = min(1.0, 2.0 * min(p_le, p_ge))
        return TestResult(statistic=w_plus, p_value=p, method="wilcoxon_exact",
                          detail={"n": n, "sided": 2})

    mu = n * (n + 1) / 4.0
    tie_counts = np.unique(np.abs(d), return_counts=True)[1]
    tie_term = float(((tie_counts ** 3 - tie_counts).sum())) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if var <= 0:
        raise ZeroVariance("degenerate rank variance")
    delta = w_plus - mu
    cc = 0.5 * np.sign(delta)
    z = (delta - cc) / math.sqrt(var)
    p = min(1.0, 2.0 * float(ndtr(-abs(z))))
    return TestResult(statistic=w_plus, p_value=p, method="wilcoxon_normal",
                      detail={"n": n, "z": float(z), "sided": 2})


# ---------------------------------------------------------------------------
# agreement statistics
# ---------------------------------------------------------------------------

def cohens_kappa(confusion) -> float:
    """Cohen's kappa from a k x k contingency table of counts."""
    m = np.asarray(confusion, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"confusion matrix must be square, got {m.shape}")
    total = m.sum()
    if total <= 0:
        raise ValidationError("confusion matrix has no mass")
    p_o = np.trace(m) / total
    p_e = float((m.sum(axis=1) * m.sum(axis=0)).sum()) / (total * total)
    if p_e == 1.0:
        raise DegenerateMarginals("chance agreement is 1 (single populated category)")
    return float((p_o - p_e) / (1.0 - p_e))


def icc_a1(ratings) -> float:
    """ICC(A,1): two-way random effects, absolute agreement, single measure.

    (MS_R - MS_E) / (MS_R + (k-1) MS_E + (k/n)(MS_C - MS_E)). All-identical
    input returns 1.0 by convention.
    """
    x = np.asarray(ratings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValidationError(f"ratings must be (n >= 2, k >= 2), got {x.shape}")
    n, k = x.shape
    grand = x.mean()
    if np.all(x == x.flat[0]):
        return 1.0
    row_means = x.mean(axis=1)
    col_means = x.mean(axis=0)
    ms_r = k * ((row_means - grand) ** 2).sum() / (n - 1)
    ms_c = n * ((col_means - grand) ** 2).sum() / (k - 1)
    resid = x - row_means[:, None] - col_means[None, :] + grand
    ms_e = (resid ** 2).sum() / ((n - 1) * (k - 1))
    denom = ms_r + (k - 1) * ms_e + (k / n) * (ms_c - ms_e)
    if denom == 0.0:
        raise ZeroVariance("degenerate ICC denominator")
    return float((ms_r - ms_e) / denom)


def bias_mae(pred, gt) -> dict:
    """Signed bias, SD of differences, mean and median absolute error."""
    d = _paired_diffs(pred, gt)
    if d.size == 0:
        raise TooFewValues("bias_mae needs at least 1 pair")
    sd = float(d.std(ddof=1)) if d.size > 1 else 0.0
    return {
        "bias": float(d.mean()),
        "sd": sd,
        "mae": float(np.abs(d).mean()),
        "median_ae": float(np.median(np.abs(d))),
    }
