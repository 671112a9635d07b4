"""Boundary-weighted BCE + IoU with deep supervision.

Weights follow the usual border-emphasis map: 1 + 5 * |boxmean31(G) - G|,
so pixels whose 31x31 neighbourhood is mixed count up to six times more.
Both losses are computed per image and averaged over the batch.
"""
from __future__ import annotations

import numpy as np

from . import functional as F
from . import tensor as T
from .tensor import Tensor, no_grad

WINDOW = 31
EMPHASIS = 5.0


def check_binary(g: np.ndarray) -> None:
    if not np.all((g == 0) | (g == 1)):
        raise ValueError("ground-truth mask must be strictly binary (values 0 or 1)")


def weight_map(gt: Tensor) -> Tensor:
    check_binary(gt.data)
    with no_grad():
        local = F.avg_pool(gt, WINDOW, stride=1, padding=WINDOW // 2)
    return Tensor(1.0 + EMPHASIS * np.abs(local.data - gt.data), dtype=gt.dtype)


def _check_shapes(logits: Tensor, gt: Tensor, w: Tensor) -> None:
    if logits.shape != gt.shape or w.shape != gt.shape:
        raise ValueError(f"loss shape mismatch: logits {logits.shape}, gt {gt.shape}, weights {w.shape}")


def wbce(logits: Tensor, gt: Tensor, w: Tensor) -> Tensor:
    """sum(w * bce) / sum(w) per image, mean over the batch."""
    _check_shapes(logits, gt, w)
    bce = T.softplus(logits) - logits * gt
    per_image = T.sum(w * bce, axis=(1, 2, 3)) / Tensor(w.data.sum(axis=(1, 2, 3)), dtype=w.dtype)
    return T.mean(per_image)


def wiou(logits: Tensor, gt: Tensor, w: Tensor) -> Tensor:
    _check_shapes(logits, gt, w)
    p = T.sigmoid(logits)
    inter = T.sum(w * p * gt, axis=(1, 2, 3))
    union = T.sum(w * (p + gt - p * gt), axis=(1, 2, 3))
    return T.mean(1.0 - (inter + 1.0) / (union + 1.0))


def supervised_loss(gt: Tensor, logits: Tensor, w: Tensor | None = None) -> Tensor:
    if w is None:
        w = weight_map(gt)
    return wiou(logits, gt, w) + wbce(logits, gt, w)


def total_loss(gt: Tensor, s3_up: Tensor, s4_up: Tensor) -> Tensor:
    """Main term on the refined map plus deep supervision at scales 3 and 4.

    The refined prediction is the scale-3 output, so it appears twice.
    """
    w = weight_map(gt)
    l3 = supervised_loss(gt, s3_up, w)
    return 2.0 * l3 + supervised_loss(gt, s4_up, w)
