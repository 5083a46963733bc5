"""Score supervision targets, reference-frame selection and inter-frame collaboration."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyInput, EmptyReferenceSet, MissingReferenceMask, ShapeMismatch
from .fusion import (
    ConditionalKernel,
    ProjectionSet,
    SentenceFeature,
    WordFeatures,
    apply_conditional_kernel,
    decode_queries,
    make_queries,
    vl_fuse,
)
from .memory import (
    GRID,
    FeatureMap,
    MemoryWeights,
    build_memory,
    hybrid_propagate,
    upsample_nodes,
)
from .metrics import MaskSequence

DEFAULT_RATIO = 0.25
MODES = ("hybrid", "local", "none")


@dataclass
class ScoredFrame:
    index: int
    score: float
    kernel: ConditionalKernel | None = None
    mask: np.ndarray | None = None


@dataclass
class VideoBundle:
    video_id: str
    features: list[FeatureMap]
    frames: list[ScoredFrame]
    mask_shape: tuple[int, int] | None = None

    def __post_init__(self):
        if not self.features:
            raise EmptyInput(f"video {self.video_id!r} has no frames")
        if len(self.features) != len(self.frames):
            raise ShapeMismatch(
                f"{len(self.features)} feature maps but {len(self.frames)} scored frames"
            )
        idx = [f.index for f in self.frames]
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate frame indices in video {self.video_id!r}")

    @property
    def scores(self) -> list[float]:
        return [f.score for f in self.frames]


@dataclass
class Collaboration:
    masks: MaskSequence  # binary masks, one per frame
    soft: list[np.ndarray]  # foreground probabilities, one per frame
    references: list[int] = field(default_factory=list)  # positions used as references


def assign_gt_scores(losses: Sequence[float]) -> list[int]:
    """One-hot target marking the query with the smallest loss (lowest index on ties)."""
    if len(losses) == 0:
        raise EmptyInput("no query losses")
    best = min(range(len(losses)), key=lambda i: (losses[i], i))
    return [1 if i == best else 0 for i in range(len(losses))]


def num_references(n_frames: int, ratio: float) -> int:
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    # round first so 0.7 * 10 = 7.000000000000001 does not round up to 8
    return math.ceil(round(ratio * n_frames, 9))


def select_reference_frames(scores: Sequence[float], ratio: float = DEFAULT_RATIO) -> list[int]:
    """Positions of the ``ceil(ratio * T)`` best-scored frames, in ascending order."""
    if len(scores) == 0:
        raise EmptyInput("no frames to select from")
    k = num_references(len(scores), ratio)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return sorted(order[:k])


def score_frames(
    features: Sequence[FeatureMap],
    words: WordFeatures,
    sentence: SentenceFeature,
    P: ProjectionSet,
    query_mode: str = "sum",
) -> list[ScoredFrame]:
    """Run the referring head on every frame and keep its best-scored query."""
    queries = make_queries(sentence, P, query_mode)
    out = []
    for t, fm in enumerate(features):
        emb = decode_queries(queries, vl_fuse(fm, words, P), P)
        best = max(range(len(emb)), key=lambda i: (emb[i].score, -i))
        out.append(ScoredFrame(t, emb[best].score, kernel=emb[best].kernel))
    return out


def _reference_mask(frame: ScoredFrame, fm: FeatureMap, shape: tuple[int, int]) -> np.ndarray:
    if frame.mask is not None:
        return frame.mask
    if frame.kernel is not None:
        logits = apply_conditional_kernel(frame.kernel, fm).astype(np.float64)
        prob = 0.5 * (1.0 + np.tanh(0.5 * logits))
        return upsample_nodes(prob, shape).astype(np.float32)
    raise MissingReferenceMask(f"frame {frame.index} has neither a mask nor a kernel")


def _mask_shape(video: VideoBundle) -> tuple[int, int]:
    if video.mask_shape is not None:
        return tuple(video.mask_shape)
    for f in video.frames:
        if f.mask is not None:
            return np.shape(f.mask)
    fm = video.features[0]
    return fm.height * GRID, fm.width * GRID


def _collaborate_clip(
    positions: list[int],
    video: VideoBundle,
    weights: MemoryWeights,
    ratio: float,
    mode: str,
    shape: tuple[int, int],
    jobs: int,
) -> tuple[dict[int, np.ndarray], list[int]]:
    scores = [video.frames[p].score for p in positions]
    refs = [positions[i] for i in select_reference_frames(scores, ratio)]
    if not refs:
        raise EmptyReferenceSet("no reference frame selected")
    soft = {p: _reference_mask(video.frames[p], video.features[p], shape) for p in refs}
    targets = [p for p in positions if p not in soft]
    if not targets:
        return soft, refs

    if mode == "none":
        for p in targets:
            nearest = min(refs, key=lambda r: (abs(r - p), r))
            soft[p] = soft[nearest]
        return soft, refs

    mem = build_memory(
        [video.features[p] for p in refs],
        [soft[p] for p in refs],
        weights,
        frame_indices=[video.frames[p].index for p in refs],
    )

    def run(p):
        prop = hybrid_propagate(video.features[p], mem, weights, use_global=(mode == "hybrid"))
        return upsample_nodes(prop.soft_mask, shape)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(run, targets))
    else:
        results = [run(p) for p in targets]
    soft.update(zip(targets, results))
    return soft, refs


def collaborate(
    video: VideoBundle,
    weights: MemoryWeights,
    ratio: float = DEFAULT_RATIO,
    mode: str = "hybrid",
    clip_length: int | None = None,
    jobs: int = 1,
) -> Collaboration:
    """Segment a video from its best-scored frames.

    Reference frames keep their selective-segmentation masks (an explicit
    mask wins over a kernel). Every other frame is read out of the hybrid
    memory and thresholded at 0.5. ``mode`` selects the memory used for
    target frames: ``"hybrid"`` (local bank and global tokens), ``"local"``
    (bank only) or ``"none"`` (copy the temporally nearest reference mask).
    With ``clip_length`` the video is cut into independent clips.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    shape = _mask_shape(video)
    n = len(video.frames)
    step = clip_length or n
    if step < 1:
        raise ValueError("clip_length must be positive")

    soft: dict[int, np.ndarray] = {}
    refs: list[int] = []
    for start in range(0, n, step):
        clip = list(range(start, min(start + step, n)))
        s, r = _collaborate_clip(clip, video, weights, ratio, mode, shape, jobs)
        soft.update(s)
        refs.extend(r)

    masks = [np.asarray(soft[p]) > 0.5 for p in range(n)]
    return Collaboration(
        masks=MaskSequence(video.video_id, masks, [f.index for f in video.frames]),
        soft=[soft[p] for p in range(n)],
        references=refs,
    )
