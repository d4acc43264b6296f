"""Depth evaluation metrics over all/interior/exterior regions.

Pixels with invalid (zero) ground truth never count. For the relative
error and the threshold accuracies the divisor must be usable, so pixels
whose prediction is <= 1e-6 m are additionally excluded there; the
exclusion count is first-class output so it cannot hide. Per-region sums
use math.fsum (exact compensated summation), which makes the results
independent of traversal order and platform-stable, and makes region
additivity hold exactly.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .imgeo import DepthMap, ObjectMask

__all__ = [
    "MetricsRow",
    "compute_metrics",
    "pool_rows",
    "select_samples",
    "write_metrics_csv",
    "read_metrics_csv",
    "CSV_HEADER",
]

REGIONS = ("all", "interior", "exterior")
CSV_HEADER = ["sample_id", "method", "region", "n_pixels", "n_excluded",
              "rms", "mae", "rel", "d1", "d2", "d3"]

_DIVISOR_FLOOR = 1e-6


@dataclass(frozen=True)
class MetricsRow:
    """Metrics for one region: errors in meters, deltas in percent."""

    region: str
    n_pixels: int
    n_excluded: int
    rms: float
    mae: float
    rel: float
    delta1: float
    delta2: float
    delta3: float


def _region_metrics(pred: np.ndarray, gt: np.ndarray, sel: np.ndarray,
                    region: str, rel_divisor: str) -> MetricsRow | None:
    n = int(np.count_nonzero(sel))
    if n == 0:
        return None
    p = pred[sel].astype(np.float64)
    g = gt[sel].astype(np.float64)
    diff = g - p
    sse = math.fsum((diff * diff).tolist())
    sae = math.fsum(np.abs(diff).tolist())

    usable = p > _DIVISOR_FLOOR
    n_excluded = int(n - np.count_nonzero(usable))
    pu, gu = p[usable], g[usable]
    n_inc = pu.size
    if n_inc:
        divisor = pu if rel_divisor == "prediction" else gu
        rel = math.fsum((np.abs(gu - pu) / divisor).tolist()) / n_inc
        ratio = np.maximum(gu / pu, pu / gu)
        d1 = 100.0 * int(np.count_nonzero(ratio < 1.25)) / n_inc
        d2 = 100.0 * int(np.count_nonzero(ratio < 1.25**2)) / n_inc
        d3 = 100.0 * int(np.count_nonzero(ratio < 1.25**3)) / n_inc
    else:
        rel = d1 = d2 = d3 = float("nan")
    return MetricsRow(
        region=region,
        n_pixels=n,
        n_excluded=n_excluded,
        rms=math.sqrt(sse / n),
        mae=sae / n,
        rel=rel,
        delta1=d1,
        delta2=d2,
        delta3=d3,
    )


def compute_metrics(pred: DepthMap, gt: DepthMap, mask: ObjectMask,
                    rel_divisor: str = "prediction") -> dict[str, MetricsRow | None]:
    """Rows for all/interior/exterior; a region with no valid pixel is None.

    rel_divisor selects what the relative error divides by: "prediction"
    (the printed formula) or "ground_truth" (the literature convention).
    """
    if rel_divisor not in ("prediction", "ground_truth"):
        raise InvalidInput(f"rel_divisor must be prediction|ground_truth, got {rel_divisor!r}")
    if pred.data.shape != gt.data.shape or mask.data.shape != gt.data.shape:
        raise InvalidInput(
            f"shape mismatch: pred {pred.data.shape}, gt {gt.data.shape}, "
            f"mask {mask.data.shape}"
        )
    valid = gt.data > 0
    rows = {}
    for region in REGIONS:
        if region == "all":
            sel = valid
        elif region == "interior":
            sel = valid & (mask.data == 0)
        else:
            sel = valid & (mask.data == 1)
        rows[region] = _region_metrics(pred.data, gt.data, sel, region, rel_divisor)
    return rows


def pool_rows(rows: list[MetricsRow]) -> MetricsRow:
    """Pool per-sample rows of one region into pixel-weighted totals."""
    rows = [r for r in rows if r is not None]
    if not rows:
        raise InvalidInput("nothing to pool")
    region = rows[0].region
    n = sum(r.n_pixels for r in rows)
    n_exc = sum(r.n_excluded for r in rows)
    sse = math.fsum(r.rms * r.rms * r.n_pixels for r in rows)
    sae = math.fsum(r.mae * r.n_pixels for r in rows)
    n_inc = n - n_exc
    if n_inc > 0:
        rel = math.fsum(r.rel * (r.n_pixels - r.n_excluded) for r in rows
                        if r.n_pixels > r.n_excluded) / n_inc
        d1 = math.fsum(r.delta1 * (r.n_pixels - r.n_excluded) for r in rows
                       if r.n_pixels > r.n_excluded) / n_inc
        d2 = math.fsum(r.delta2 * (r.n_pixels - r.n_excluded) for r in rows
                       if r.n_pixels > r.n_excluded) / n_inc
        d3 = math.fsum(r.delta3 * (r.n_pixels - r.n_excluded) for r in rows
                       if r.n_pixels > r.n_excluded) / n_inc
    else:
        rel = d1 = d2 = d3 = float("nan")
    return MetricsRow(region=region, n_pixels=n, n_excluded=n_exc,
                      rms=math.sqrt(sse / n), mae=sae / n, rel=rel,
                      delta1=d1, delta2=d2, delta3=d3)


def select_samples(records, min_delta: float = 0.25, mode: str = "mean") -> list:
    """Keep samples whose interior depth change is at least min_delta meters.

    mode selects how "per pixel" is aggregated over the silhouette: the
    mean change (default) or the minimum. Samples with an empty mask have
    no interior and are never kept.
    """
    if mode not in ("mean", "min"):
        raise InvalidInput(f"mode must be mean|min, got {mode!r}")
    kept = []
    for rec in records:
        inside = rec.mask.data == 0
        if not inside.any():
            continue
        change = np.abs(
            rec.depth_without.data.astype(np.float64)
            - rec.depth_with.data.astype(np.float64)
        )[inside]
        stat = change.mean() if mode == "mean" else change.min()
        if stat >= min_delta:
            kept.append(rec)
    return kept


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else format(v, ".10g")


def write_metrics_csv(entries, path):
    """entries: iterable of (sample_id, method, MetricsRow). Absent regions
    are simply not written."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for sample_id, method, row in entries:
            if row is None:
                continue
            writer.writerow([
                sample_id, method, row.region, row.n_pixels, row.n_excluded,
                _fmt(row.rms), _fmt(row.mae), _fmt(row.rel),
                _fmt(row.delta1), _fmt(row.delta2), _fmt(row.delta3),
            ])


def read_metrics_csv(path) -> list[tuple[str, str, MetricsRow]]:
    out = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != CSV_HEADER:
            raise InvalidInput(f"unexpected metrics CSV header: {header}")
        for rec in reader:
            sample_id, method, region = rec[0], rec[1], rec[2]
            row = MetricsRow(
                region=region, n_pixels=int(rec[3]), n_excluded=int(rec[4]),
                rms=float(rec[5]), mae=float(rec[6]), rel=float(rec[7]),
                delta1=float(rec[8]), delta2=float(rec[9]), delta3=float(rec[10]),
            )
            out.append((sample_id, method, row))
    return out
