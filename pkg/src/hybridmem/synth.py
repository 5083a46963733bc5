"""Seeded synthetic videos with separable foreground/background features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .memory import GRID, FeatureMap, upsample_nodes


@dataclass
class Scenario:
    features: list[FeatureMap]
    masks: list[np.ndarray]  # ground truth at pixel resolution, float32 in {0, 1}
    scores: np.ndarray  # (T,) decreasing with frame index
    node_masks: list[np.ndarray]  # (H, W) bool, one per frame


def synth_scenario(
    seed: int,
    T: int = 8,
    H: int = 8,
    W: int = 8,
    C: int = 16,
    separation: float = 10.0,
    noise: float = 1.0,
) -> Scenario:
    """Draw a video whose object is a rectangle sliding one node per frame.

    Foreground nodes are sampled around ``+separation * u`` and background
    nodes around ``-separation * u`` for a random unit vector ``u``, with
    isotropic Gaussian noise of scale ``noise``. Scores fall linearly with
    the frame index so reference selection always prefers early frames.
    """
    if min(T, H, W, C) < 1:
        raise ValueError("T, H, W and C must all be >= 1")
    if separation <= 0:
        raise ValueError("separation must be positive")
    rng = np.random.default_rng(seed)
    u = rng.normal(size=C)
    u /= np.linalg.norm(u)

    oh, ow = max(1, H // 2), max(1, W // 2)
    row = int(rng.integers(0, H - oh + 1))
    col0 = int(rng.integers(0, W - ow + 1))
    span = W - ow + 1

    features, masks, node_masks = [], [], []
    for t in range(T):
        col = (col0 + t) % span
        node = np.zeros((H, W), dtype=bool)
        node[row : row + oh, col : col + ow] = True
        centre = np.where(node[..., None], separation, -separation) * u
        grid = centre + noise * rng.normal(size=(H, W, C))
        features.append(FeatureMap.from_grid(grid.astype(np.float32)))
        node_masks.append(node)
        masks.append(upsample_nodes(node.astype(np.float32), (H * GRID, W * GRID)))
    scores = (T - np.arange(T)) / T
    return Scenario(features, masks, scores.astype(np.float32), node_masks)


def corrupt_labels(mask, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Flip the label of a random ``fraction`` of the 16x16 nodes of a binary mask."""
    mask = np.asarray(mask, dtype=np.float32)
    h, w = -(-mask.shape[0] // GRID), -(-mask.shape[1] // GRID)
    n_flip = int(round(fraction * h * w))
    flip = np.zeros(h * w, dtype=bool)
    flip[rng.choice(h * w, size=n_flip, replace=False)] = True
    flip_px = upsample_nodes(flip.reshape(h, w), mask.shape)
    return np.where(flip_px, 1.0 - mask, mask).astype(np.float32)
