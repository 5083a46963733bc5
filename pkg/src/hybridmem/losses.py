"""Forward-only training losses and the Hungarian assignment.

Nothing here computes gradients; the functions exist to evaluate the
objective on given predictions and to derive the score targets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeMismatch
from .selection import assign_gt_scores

PROB_EPS = 1e-7
DICE_SMOOTH = 1.0
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
HARD_RATIO = 0.15


@dataclass(frozen=True)
class LossWeights:
    dice: float = 5.0
    l1: float = 5.0
    focal: float = 2.0
    giou: float = 2.0
    ce: float = 1.0

    def __post_init__(self):
        for name in ("dice", "l1", "focal", "giou", "ce"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"invalid box {self}: need x1<=x2 and y1<=y2")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)


def _pair(pred, gt):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs target {g.shape}")
    return p, g


def _clamp(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def dice_loss(pred, gt) -> float:
    p, g = _pair(pred, gt)
    num = 2.0 * (p * g).sum() + DICE_SMOOTH
    den = p.sum() + g.sum() + DICE_SMOOTH
    return float(1.0 - num / den)


def focal_loss(pred, gt, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> float:
    """Mean sigmoid focal loss over elements of probability maps."""
    p, g = _pair(pred, gt)
    p = _clamp(p)
    p_t = np.where(g > 0.5, p, 1.0 - p)
    a_t = np.where(g > 0.5, alpha, 1.0 - alpha)
    return float(np.mean(-a_t * (1.0 - p_t) ** gamma * np.log(p_t)))


def pixel_ce(pred, gt) -> np.ndarray:
    p, g = _pair(pred, gt)
    p = _clamp(p)
    return -(g * np.log(p) + (1.0 - g) * np.log(1.0 - p))


def bootstrapped_ce(pred, gt, hard_ratio: float = HARD_RATIO) -> float:
    """Mean of the ``ceil(hard_ratio * n)`` largest per-pixel cross entropies."""
    if not 0 < hard_ratio <= 1:
        raise ValueError(f"hard_ratio must lie in (0, 1], got {hard_ratio}")
    ce = pixel_ce(pred, gt).reshape(-1)
    k = math.ceil(round(hard_ratio * ce.size, 9))
    if k == 0:
        return 0.0
    top = np.partition(ce, ce.size - k)[ce.size - k :]
    return float(top.mean())


def _as_box(b) -> Box:
    return b if isinstance(b, Box) else Box(*map(float, b))


def box_losses(pred, gt) -> tuple[float, float]:
    """``(L1, 1 - GIoU)`` for two xyxy boxes; zero-area overlap counts as IoU 0."""
    a, b = _as_box(pred), _as_box(gt)
    l1 = float(np.mean(np.abs(np.subtract(a.as_tuple(), b.as_tuple()))))
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    union = a.area + b.area - inter
    iou = inter / union if union > 0 else 0.0
    hull = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    slack = (hull - union) / hull if hull > 0 else 0.0
    return l1, float(1.0 - (iou - slack))


def hungarian_match(cost) -> list[int]:
    """Minimum-cost perfect assignment; ``result[row] = column``.

    Shortest augmenting path with row/column potentials, O(N^3).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ShapeMismatch(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite")
    n = c.shape[0]
    u = np.zeros(n + 1)  # row potentials (1-based, 0 is a sentinel)
    v = np.zeros(n + 1)  # column potentials
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[col] = matched row
    way = np.zeros(n + 1, dtype=np.int64)
    for row in range(1, n + 1):
        owner[0] = row
        col0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[col0] = True
            r = owner[col0]
            delta, col1 = np.inf, 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = c[r - 1, j - 1] - u[r] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = col0
                if minv[j] < delta:
                    delta, col1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            col0 = col1
            if owner[col0] == 0:
                break
        while col0:
            prev = way[col0]
            owner[col0] = owner[prev]
            col0 = prev
    match = [0] * n
    for j in range(1, n + 1):
        match[owner[j] - 1] = j - 1
    return match


def assignment_cost(cost, match: Sequence[int]) -> float:
    c = np.asarray(cost, dtype=np.float64)
    return float(sum(c[i, j] for i, j in enumerate(match)))


# ------------------------------------------------------------ composite losses


@dataclass
class QueryPrediction:
    """Predictions of one object query over a clip of T frames."""

    masks: np.ndarray  # (T, H, W) probabilities
    boxes: np.ndarray  # (T, 4) xyxy
    scores: np.ndarray  # (T,) in [0, 1]


@dataclass
class ReferTarget:
    masks: np.ndarray  # (T, H, W) binary
    boxes: np.ndarray  # (T, 4) xyxy


def mask_term(pred: QueryPrediction, gt: ReferTarget, w: LossWeights) -> float:
    per_frame = [
        w.dice * dice_loss(p, g) + w.focal * focal_loss(p, g)
        for p, g in zip(pred.masks, gt.masks)
    ]
    return float(np.mean(per_frame))


def box_term(pred: QueryPrediction, gt: ReferTarget, w: LossWeights) -> float:
    per_frame = []
    for p, g in zip(pred.boxes, gt.boxes):
        l1, giou = box_losses(p, g)
        per_frame.append(w.l1 * l1 + w.giou * giou)
    return float(np.mean(per_frame))


def score_term(pred: QueryPrediction, target: int, w: LossWeights) -> float:
    s = np.asarray(pred.scores, dtype=np.float64)
    return w.ce * focal_loss(s, np.full(s.shape, float(target)))


def refer_loss_terms(preds: Sequence[QueryPrediction], gt: ReferTarget, w: LossWeights = LossWeights()):
    """Per-query loss terms and the one-hot optimal-query indicator.

    The optimal query minimises its mask + box cost (the same weighted
    terms the loss applies to it).
    """
    if not preds:
        raise ValueError("at least one query prediction is required")
    for p in preds:
        if np.shape(p.masks) != np.shape(gt.masks) or np.shape(p.boxes) != np.shape(gt.boxes):
            raise ShapeMismatch("query prediction does not match target shapes")
    masks = [mask_term(p, gt, w) for p in preds]
    boxes = [box_term(p, gt, w) for p in preds]
    optimal = assign_gt_scores([m + b for m, b in zip(masks, boxes)])
    scores = [score_term(p, t, w) for p, t in zip(preds, optimal)]
    return {"mask": masks, "box": boxes, "score": scores, "optimal": optimal}


def refer_loss(preds: Sequence[QueryPrediction], gt: ReferTarget, w: LossWeights = LossWeights()) -> float:
    terms = refer_loss_terms(preds, gt, w)
    total = 0.0
    for s, m, b, opt in zip(terms["score"], terms["mask"], terms["box"], terms["optimal"]):
        total += s + opt * (m + b)
    return total


def propagation_loss(pred, gt, hard_ratio: float = HARD_RATIO) -> float:
    """Bootstrapped cross entropy plus dice, equally weighted, averaged over frames."""
    p, g = _pair(pred, gt)
    if p.ndim == 2:
        p, g = p[None], g[None]
    return float(np.mean([bootstrapped_ce(a, b, hard_ratio) + dice_loss(a, b) for a, b in zip(p, g)]))


def train_loss(preds, gt: ReferTarget, prop_pred, prop_gt, w: LossWeights = LossWeights()) -> float:
    return refer_loss(preds, gt, w) + propagation_loss(prop_pred, prop_gt)
