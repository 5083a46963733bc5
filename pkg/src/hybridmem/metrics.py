"""Segmentation metrics: J, F, J&F, mask consistency score, and A2D-style scores."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyInput, FrameMismatch, ShapeMismatch
from .memory import heaviside

MCS_THRESHOLDS = (0.1, 0.5, 0.9)
PRECISION_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)
MAP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
BOUNDARY_FRACTION = 0.008


@dataclass
class MaskSequence:
    video_id: str
    masks: list[np.ndarray]
    frame_indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.frame_indices:
            self.frame_indices = list(range(len(self.masks)))
        if len(self.frame_indices) != len(self.masks):
            raise FrameMismatch("one frame index per mask is required")
        shapes = {np.shape(m) for m in self.masks}
        if len(shapes) > 1:
            raise ShapeMismatch(f"masks of video {self.video_id!r} differ in size: {shapes}")

    def __len__(self):
        return len(self.masks)


def binarize(mask, threshold: float = 0.5) -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype == bool:
        return m
    return m > threshold


def _pair(pred, gt):
    p, g = binarize(pred), binarize(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
    return p, g


def jaccard(pred, gt) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    p, g = _pair(pred, gt)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def boundary_map(mask) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour (inside the image) of background."""
    m = binarize(mask)
    edge = np.zeros_like(m)
    edge[1:, :] |= m[1:, :] != m[:-1, :]
    edge[:-1, :] |= m[:-1, :] != m[1:, :]
    edge[:, 1:] |= m[:, 1:] != m[:, :-1]
    edge[:, :-1] |= m[:, :-1] != m[:, 1:]
    return edge & m


def default_tolerance(shape) -> int:
    return math.ceil(BOUNDARY_FRACTION * math.hypot(*shape))


def _matched(src: np.ndarray, dst: np.ndarray, radius: float) -> int:
    """How many ``src`` boundary pixels lie within ``radius`` of a ``dst`` boundary pixel."""
    if not src.any() or not dst.any():
        return 0
    dist = ndimage.distance_transform_edt(~dst)
    return int((dist[src] <= radius).sum())


def boundary_f(pred, gt, tolerance: float | None = None) -> float:
    """Boundary F-measure with a distance tolerance in pixels."""
    p, g = _pair(pred, gt)
    if tolerance is None:
        tolerance = default_tolerance(p.shape)
    bp, bg = boundary_map(p), boundary_map(g)
    n_p, n_g = int(bp.sum()), int(bg.sum())
    if n_p == 0 and n_g == 0:
        return 1.0
    precision = 1.0 if n_p == 0 else _matched(bp, bg, tolerance) / n_p
    recall = 1.0 if n_g == 0 else _matched(bg, bp, tolerance) / n_g
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class VideoScores:
    video_id: str
    j_frames: list[float]
    f_frames: list[float]

    @property
    def J(self) -> float:
        return float(np.mean(self.j_frames))

    @property
    def F(self) -> float:
        return float(np.mean(self.f_frames))

    @property
    def JF(self) -> float:
        return (self.J + self.F) / 2


def video_scores(pred: MaskSequence, gt: MaskSequence, tolerance: float | None = None) -> VideoScores:
    if len(pred) != len(gt) or list(pred.frame_indices) != list(gt.frame_indices):
        raise FrameMismatch(
            f"video {gt.video_id!r}: {len(pred)} predicted frames vs {len(gt)} ground-truth frames"
        )
    if len(gt) == 0:
        raise EmptyInput(f"video {gt.video_id!r} has no frames")
    js = [jaccard(p, g) for p, g in zip(pred.masks, gt.masks)]
    fs = [boundary_f(p, g, tolerance) for p, g in zip(pred.masks, gt.masks)]
    return VideoScores(gt.video_id, js, fs)


def video_metrics(pred: MaskSequence, gt: MaskSequence, tolerance: float | None = None):
    """Mean J, mean F and their average J&F over the frames of one video."""
    s = video_scores(pred, gt, tolerance)
    return s.J, s.F, s.JF


def mcs(jtable: Sequence[Sequence[float]], tau: float) -> float:
    """Fraction of videos whose every frame has J strictly above ``tau``."""
    if not 0 <= tau <= 1:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if len(jtable) == 0:
        raise EmptyInput("empty J table")
    total = 0
    for row in jtable:
        if len(row) == 0:
            raise EmptyInput("video without frames in J table")
        consistent = 1
        for j in row:
            consistent *= heaviside(j - tau)
        total += consistent
    return total / len(jtable)


@dataclass
class A2DScores:
    precision: dict[float, float]
    overall_iou: float
    mean_iou: float
    mAP: float


def _precision_at(ious: np.ndarray, k: float) -> float:
    return float(np.mean(ious > k))


def a2d_metrics(ious, intersections, unions) -> A2DScores:
    """P@K, overall IoU (sum I / sum U), mean IoU, and mAP over 0.50:0.05:0.95."""
    ious = np.asarray(ious, dtype=np.float64)
    inter = np.asarray(intersections, dtype=np.float64)
    union = np.asarray(unions, dtype=np.float64)
    if ious.size == 0:
        raise EmptyInput("no samples")
    if not (ious.shape == inter.shape == union.shape):
        raise ShapeMismatch("ious, intersections and unions must align")
    total_union = union.sum()
    return A2DScores(
        precision={k: _precision_at(ious, k) for k in PRECISION_THRESHOLDS},
        overall_iou=float(inter.sum() / total_union) if total_union > 0 else 1.0,
        mean_iou=float(ious.mean()),
        mAP=float(np.mean([_precision_at(ious, k) for k in MAP_THRESHOLDS])),
    )


def overlap_counts(pred, gt) -> tuple[int, int]:
    p, g = _pair(pred, gt)
    return int(np.logical_and(p, g).sum()), int(np.logical_or(p, g).sum())


@dataclass
class MetricsReport:
    videos: list[VideoScores]
    thresholds: tuple[float, ...] = MCS_THRESHOLDS
    a2d: A2DScores | None = None

    @property
    def J(self) -> float:
        return float(np.mean([v.J for v in self.videos]))

    @property
    def F(self) -> float:
        return float(np.mean([v.F for v in self.videos]))

    @property
    def JF(self) -> float:
        return (self.J + self.F) / 2

    def mcs(self) -> dict[float, float]:
        table = [v.j_frames for v in self.videos]
        return {t: mcs(table, t) for t in self.thresholds}

    def records(self) -> list[dict]:
        """One JSON-ready record per video plus a final aggregate record."""
        out = []
        for v in self.videos:
            out.append(
                {
                    "video": v.video_id,
                    "J": v.J,
                    "F": v.F,
                    "JF": v.JF,
                    "consistent": {f"{t:g}": heaviside(min(v.j_frames) - t) for t in self.thresholds},
                    "J_frames": v.j_frames,
                }
            )
        agg = {
            "video": None,
            "aggregate": True,
            "num_videos": len(self.videos),
            "J": self.J,
            "F": self.F,
            "JF": self.JF,
            "MCS": {f"{t:g}": s for t, s in self.mcs().items()},
        }
        if self.a2d is not None:
            agg["A2D"] = {
                "precision": {f"{k:g}": v for k, v in self.a2d.precision.items()},
                "oIoU": self.a2d.overall_iou,
                "mIoU": self.a2d.mean_iou,
                "mAP": self.a2d.mAP,
            }
        out.append(agg)
        return out


def evaluate(
    preds: Sequence[MaskSequence],
    gts: Sequence[MaskSequence],
    thresholds=MCS_THRESHOLDS,
    with_a2d: bool = False,
    tolerance: float | None = None,
) -> MetricsReport:
    """Score aligned lists of predicted and ground-truth videos."""
    if len(preds) != len(gts):
        raise FrameMismatch(f"{len(preds)} predicted videos vs {len(gts)} ground-truth videos")
    if not gts:
        raise EmptyInput("no videos to evaluate")
    videos = [video_scores(p, g, tolerance) for p, g in zip(preds, gts)]
    a2d = None
    if with_a2d:
        ious, inters, unions = [], [], []
        for p, g in zip(preds, gts):
            for pm, gm in zip(p.masks, g.masks):
                i, u = overlap_counts(pm, gm)
                ious.append(jaccard(pm, gm))
                inters.append(i)
                unions.append(u)
        a2d = a2d_metrics(ious, inters, unions)
    return MetricsReport(videos, tuple(thresholds), a2d)
