"""Segmentation and saliency measures: Dice, IoU, weighted F, S, E and MAE.

All functions take a score map ``s`` in [0, 1] and a binary mask ``gt`` of
the same 2-D shape and return plain floats in [0, 1].
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

EPS = np.finfo(np.float64).eps
OVERLAP_EPS = 1e-8
FIELDS = ("dice", "iou", "fbw", "s", "me", "maxe", "mae")
CSV_HEADER = "image," + ",".join(FIELDS)


class EmptyMaskWarning(UserWarning):
    pass


def _prepare(s, gt):
    s = np.asarray(s, dtype=np.float64).squeeze()
    gt = np.asarray(gt).squeeze()
    if s.shape != gt.shape:
        raise ValueError(f"score map shape {s.shape} != ground truth shape {gt.shape}")
    if s.ndim != 2:
        raise ValueError(f"expected a single 2-D map, got shape {s.shape}")
    if s.size and (s.min() < 0 or s.max() > 1):
        raise ValueError("score map values must lie in [0, 1]")
    if not np.all((gt == 0) | (gt == 1)):
        raise ValueError("ground truth must be binary")
    return s, gt.astype(bool)


def dice(s, gt, threshold: float = 0.5) -> float:
    s, gt = _prepare(s, gt)
    p = s >= threshold
    inter = np.count_nonzero(p & gt)
    return (2 * inter + OVERLAP_EPS) / (np.count_nonzero(p) + np.count_nonzero(gt) + OVERLAP_EPS)


def iou(s, gt, threshold: float = 0.5) -> float:
    s, gt = _prepare(s, gt)
    p = s >= threshold
    return (np.count_nonzero(p & gt) + OVERLAP_EPS) / (np.count_nonzero(p | gt) + OVERLAP_EPS)


def mae(s, gt) -> float:
    s, gt = _prepare(s, gt)
    return float(np.abs(s - gt).mean())


# --------------------------------------------------------------- weighted F

def _circle_offsets(d2: int) -> list[tuple[int, int]]:
    """Integer (dy, dx) with dy^2 + dx^2 == d2, in row-major order."""
    out = []
    r = math.isqrt(d2)
    for dy in range(-r, r + 1):
        rem = d2 - dy * dy
        dx = math.isqrt(rem)
        if dx * dx == rem:
            out.extend([(dy, -dx), (dy, dx)] if dx else [(dy, 0)])
    return out


def nearest_foreground(gt: np.ndarray):
    """Euclidean distance to, and coordinates of, the nearest foreground pixel.

    Ties go to the candidate that comes first in row-major order, so the
    result does not depend on the distance-transform implementation.
    """
    h, w = gt.shape
    dist = ndimage.distance_transform_edt(~gt)
    d2 = np.rint(dist * dist).astype(np.int64)
    iy = np.full(gt.shape, -1, dtype=np.int64)
    ix = np.full(gt.shape, -1, dtype=np.int64)
    iy[gt], ix[gt] = np.nonzero(gt)
    for val in np.unique(d2[~gt]):
        ys, xs = np.nonzero(d2 == val)
        todo = np.ones(ys.size, dtype=bool)
        for dy, dx in _circle_offsets(int(val)):
            ty, tx = ys + dy, xs + dx
            ok = todo & (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
            ok[ok] = gt[ty[ok], tx[ok]]
            iy[ys[ok], xs[ok]] = ty[ok]
            ix[ys[ok], xs[ok]] = tx[ok]
            todo &= ~ok
            if not todo.any():
                break
    return dist, iy, ix


def gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = (size - 1) / 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    return k / k.sum()


def weighted_fmeasure(s, gt, beta2: float = 1.0) -> float:
    """Dependency- and position-weighted F-measure (empty mask scores 0)."""
    s, gt = _prepare(s, gt)
    if not gt.any():
        warnings.warn("weighted F-measure undefined for an empty mask; scored 0", EmptyMaskWarning)
        return 0.0
    err = np.abs(s - gt)
    dist, iy, ix = nearest_foreground(gt)
    bg = ~gt
    et = err.copy()
    et[bg] = err[iy[bg], ix[bg]]
    ea = ndimage.correlate(et, gaussian_kernel(), mode="constant", cval=0.0)
    min_e = err.copy()
    sel = gt & (ea < err)
    min_e[sel] = ea[sel]
    b = np.ones_like(err)
    b[bg] = 2.0 - np.exp(math.log(0.5) / 5.0 * dist[bg])
    ew = min_e * b
    tpw = gt.sum() - ew[gt].sum()
    fpw = ew[bg].sum()
    recall = 1.0 - ew[gt].mean()
    prec = tpw / (EPS + tpw + fpw)
    return float((1 + beta2) * recall * prec / (EPS + recall + beta2 * prec))


# ---------------------------------------------------------------- S-measure

def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sigma + EPS)


def _ssim(s: np.ndarray, gt: np.ndarray) -> float:
    n = s.size
    if n == 0:
        return 0.0
    g = gt.astype(np.float64)
    x, y = s.mean(), g.mean()
    denom = max(n - 1, 1)
    sx = ((s - x) ** 2).sum() / denom
    sy = ((g - y) ** 2).sum() / denom
    sxy = ((s - x) * (g - y)).sum() / denom
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + EPS)
    return 1.0 if b == 0 else 0.0


def centroid(gt: np.ndarray) -> tuple[int, int]:
    """Quadrant split point (x, y): rounded foreground centroid plus one."""
    h, w = gt.shape
    if not gt.any():
        return int(round(w / 2)) + 1, int(round(h / 2)) + 1
    ys, xs = np.nonzero(gt)
    return int(round(xs.mean())) + 1, int(round(ys.mean())) + 1


def s_measure(s, gt, alpha: float = 0.5) -> float:
    s, gt = _prepare(s, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - s.mean())
    if y == 1:
        return float(s.mean())
    fg = s * gt
    bg = (1.0 - s) * ~gt
    so = y * _object_score(fg[gt]) + (1 - y) * _object_score(bg[~gt])

    h, w = gt.shape
    cx, cy = centroid(gt)
    area = h * w
    w1 = cx * cy / area
    w2 = cy * (w - cx) / area
    w3 = (h - cy) * cx / area
    w4 = 1.0 - w1 - w2 - w3
    sr = (w1 * _ssim(s[:cy, :cx], gt[:cy, :cx]) + w2 * _ssim(s[:cy, cx:], gt[:cy, cx:])
          + w3 * _ssim(s[cy:, :cx], gt[cy:, :cx]) + w4 * _ssim(s[cy:, cx:], gt[cy:, cx:]))
    return float(max(0.0, alpha * so + (1 - alpha) * sr))


# ---------------------------------------------------------------- E-measure

THRESHOLDS = np.arange(256) / 255.0


def e_measure_curve(s, gt) -> np.ndarray:
    """Enhanced-alignment score at each of the 256 thresholds k/255."""
    s, gt = _prepare(s, gt)
    n = s.size
    fg_scores = np.sort(s[gt])
    bg_scores = np.sort(s[~gt])
    # pixels with s >= t, split by ground truth
    tp = fg_scores.size - np.searchsorted(fg_scores, THRESHOLDS, side="left")
    fp = bg_scores.size - np.searchsorted(bg_scores, THRESHOLDS, side="left")
    n_fg = fg_scores.size
    pred_fg = tp + fp
    if n_fg == 0:
        return (n - pred_fg) / n
    if n_fg == n:
        return pred_fg / n
    mp = pred_fg / n
    mg = n_fg / n
    total = np.zeros(THRESHOLDS.size)
    for pv, gv, count in ((1, 1, tp), (1, 0, fp), (0, 1, n_fg - tp), (0, 0, (n - n_fg) - fp)):
        dp, dg = pv - mp, gv - mg
        phi = 2 * dp * dg / (dp * dp + dg * dg + EPS)
        total += count * (1 + phi) ** 2 / 4
    return total / n


def e_measure(s, gt) -> tuple[float, float]:
    curve = e_measure_curve(s, gt)
    return float(curve.mean()), float(curve.max())


# ---------------------------------------------------------------- reporting

def score_pair(s, gt, threshold: float = 0.5) -> dict[str, float]:
    me, maxe = e_measure(s, gt)
    return {
        "dice": float(dice(s, gt, threshold)),
        "iou": float(iou(s, gt, threshold)),
        "fbw": weighted_fmeasure(s, gt),
        "s": s_measure(s, gt),
        "me": me,
        "maxe": maxe,
        "mae": mae(s, gt),
    }


@dataclass
class MetricReport:
    names: list[str]
    per_image: list[dict[str, float]]
    means: dict[str, float] = field(default_factory=dict)
    empty_gt: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.per_image)

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for name, row in zip(self.names, self.per_image):
            lines.append(",".join([name] + [f"{row[k]:.8f}" for k in FIELDS]))
        lines.append(",".join(["mean"] + [f"{self.means[k]:.8f}" for k in FIELDS]))
        return "\n".join(lines) + "\n"


def evaluate(scores, gts, names=None, threshold: float = 0.5) -> MetricReport:
    """Score every (prediction, mask) pair and average.

    Means use ``math.fsum`` so they are independent of image order.
    """
    scores, gts = list(scores), list(gts)
    if len(scores) != len(gts):
        raise ValueError(f"{len(scores)} predictions but {len(gts)} ground-truth masks")
    names = list(names) if names is not None else [f"{i:04d}" for i in range(len(scores))]
    rows, empty = [], []
    for name, s, g in zip(names, scores, gts):
        if not np.any(g):
            empty.append(name)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyMaskWarning)
            rows.append(score_pair(s, g, threshold))
    if empty:
        warnings.warn(f"{len(empty)} empty ground-truth masks; weighted F scored 0 for them",
                      EmptyMaskWarning)
    means = {k: math.fsum(r[k] for r in rows) / len(rows) for k in FIELDS} if rows else {}
    return MetricReport(names, rows, means, empty)
