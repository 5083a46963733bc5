"""Hybrid memory: mask-grid encoding, local pixel readout and global tokens.

A memory is built from a handful of reference frames. Every stride-16 node
of every reference frame contributes one row to the local bank: a key (its
visual feature projected to 64 channels) and a value (its encoded mask grid
followed by the foreground/background probability pair). Two global tokens
summarise the foreground and the background of all reference frames.

Target frames read the bank through a softmax over negative squared L2
distances, and compare their vision-mask joint features against the two
global tokens (node-object affinity).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import EmptyReferenceSet, GlobalTokenUndefined, ShapeMismatch
from .numerics import DTYPE, _neg_l2_f64, as_tensor

GRID = 16
KEY_DIM = 64
DEFAULT_MASK_CHANNELS = 16
DEFAULT_TAU = 0.5
PROB_EPS = 1e-7


@dataclass(frozen=True)
class FeatureMap:
    """Dense stride-16 features of one frame, stored as ``(H*W, C)`` rows."""

    height: int
    width: int
    data: np.ndarray

    def __post_init__(self):
        data = as_tensor(self.data, 2, "FeatureMap.data")
        if self.height < 1 or self.width < 1:
            raise ShapeMismatch(f"FeatureMap needs H,W >= 1, got {self.height}x{self.width}")
        if data.shape[0] != self.height * self.width:
            raise ShapeMismatch(
                f"FeatureMap rows {data.shape[0]} != {self.height}*{self.width}"
            )
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_grid(cls, grid) -> "FeatureMap":
        """Build from an ``(H, W, C)`` array."""
        grid = np.asarray(grid)
        if grid.ndim != 3:
            raise ShapeMismatch(f"expected (H, W, C) grid, got shape {grid.shape}")
        h, w, c = grid.shape
        return cls(h, w, grid.reshape(h * w, c))

    def grid(self) -> np.ndarray:
        return self.data.reshape(self.height, self.width, self.channels)


@dataclass(frozen=True)
class MemoryWeights:
    """Projection matrices used by the memory.

    key_proj:   ``C x 64`` (query/key extraction)
    joint_proj: ``(C_y + 2 + C) x 64`` (vision-mask joint representation)
    mask_proj:  ``256 x C_y`` (16x16 mask grid embedding)
    """

    key_proj: np.ndarray
    joint_proj: np.ndarray
    mask_proj: np.ndarray

    def __post_init__(self):
        wk = as_tensor(self.key_proj, 2, "key_proj")
        wj = as_tensor(self.joint_proj, 2, "joint_proj")
        wm = as_tensor(self.mask_proj, 2, "mask_proj")
        if wm.shape[0] != GRID * GRID:
            raise ShapeMismatch(f"mask_proj must have {GRID * GRID} rows, got {wm.shape}")
        if wk.shape[1] != wj.shape[1]:
            raise ShapeMismatch(f"key/joint widths differ: {wk.shape} vs {wj.shape}")
        if wj.shape[0] != wm.shape[1] + 2 + wk.shape[0]:
            raise ShapeMismatch(
                f"joint_proj rows {wj.shape[0]} != C_y + 2 + C = "
                f"{wm.shape[1]} + 2 + {wk.shape[0]}"
            )
        object.__setattr__(self, "key_proj", wk)
        object.__setattr__(self, "joint_proj", wj)
        object.__setattr__(self, "mask_proj", wm)

    @property
    def channels(self) -> int:
        return self.key_proj.shape[0]

    @property
    def mask_channels(self) -> int:
        return self.mask_proj.shape[1]

    @classmethod
    def random(
        cls,
        seed: int,
        channels: int,
        mask_channels: int = DEFAULT_MASK_CHANNELS,
        key_dim: int = KEY_DIM,
    ) -> "MemoryWeights":
        rng = np.random.default_rng(seed)
        value_dim = mask_channels + 2
        return cls(
            key_proj=rng.normal(0, 1 / math.sqrt(channels), (channels, key_dim)),
            joint_proj=rng.normal(
                0, 1 / math.sqrt(value_dim + channels), (value_dim + channels, key_dim)
            ),
            mask_proj=rng.normal(0, 1 / GRID, (GRID * GRID, mask_channels)),
        )


@dataclass(frozen=True)
class GlobalTokens:
    """Foreground/background tokens; ``None`` marks an undefined token."""

    foreground: np.ndarray | None
    background: np.ndarray | None

    @property
    def defined(self) -> bool:
        return self.foreground is not None and self.background is not None

    def stacked(self) -> np.ndarray:
        """Both tokens as a ``2 x D`` matrix, foreground first."""
        if self.foreground is None:
            raise GlobalTokenUndefined("foreground token undefined")
        if self.background is None:
            raise GlobalTokenUndefined("background token undefined")
        return np.concatenate([self.foreground, self.background], axis=0)


@dataclass(frozen=True)
class HybridMemory:
    keys: np.ndarray  # (T*H*W, 64)
    values: np.ndarray  # (T*H*W, C_y + 2)
    frame_index: np.ndarray  # (T*H*W,) reference frame of each row
    ref_indices: tuple[int, ...]
    ref_probs: np.ndarray  # (T*H*W,) node foreground probability
    tokens: GlobalTokens
    features: np.ndarray = field(repr=False)  # (T*H*W, C) raw visual features

    @property
    def size(self) -> int:
        return self.keys.shape[0]


class Propagation(NamedTuple):
    values: np.ndarray  # propagated mask features, (H*W, C_y + 2)
    affinity: np.ndarray | None  # node-object affinity, (H*W, 2); None if tokens undefined
    soft_mask: np.ndarray  # (H, W) foreground probability per node


Enhancer = Callable[[np.ndarray, FeatureMap], np.ndarray]


def identity_enhancer(mask_features: np.ndarray, features: FeatureMap) -> np.ndarray:
    return mask_features


class LinearEnhancer:
    """Residual visual enhancement ``Y + F W`` with a loaded ``C x C_y`` weight."""

    def __init__(self, weight):
        self.weight = as_tensor(weight, 2, "enhancer weight")

    def __call__(self, mask_features: np.ndarray, features: FeatureMap) -> np.ndarray:
        if self.weight.shape != (features.channels, mask_features.shape[1]):
            raise ShapeMismatch(
                f"enhancer weight {self.weight.shape} incompatible with "
                f"C={features.channels}, C_y={mask_features.shape[1]}"
            )
        out = mask_features.astype(np.float64) + features.data.astype(np.float64) @ self.weight
        return out.astype(DTYPE)


# ---------------------------------------------------------------- mask grids


def grid_shape(mask_shape: tuple[int, int]) -> tuple[int, int]:
    """Node grid size for a mask, after bottom/right padding to multiples of 16."""
    h0, w0 = mask_shape
    return -(-h0 // GRID), -(-w0 // GRID)


def mask_patches(mask) -> np.ndarray:
    """Row-major flattened 16x16 patches, one row per node: ``(H*W, 256)``."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatch(f"mask must be 2-D, got shape {m.shape}")
    h, w = grid_shape(m.shape)
    padded = np.zeros((h * GRID, w * GRID))
    padded[: m.shape[0], : m.shape[1]] = m
    return padded.reshape(h, GRID, w, GRID).transpose(0, 2, 1, 3).reshape(h * w, GRID * GRID)


def encode_mask_grid(mask, mask_proj) -> np.ndarray:
    """Project every 16x16 mask patch with ``mask_proj`` (256 x C_y)."""
    wm = as_tensor(mask_proj, 2, "mask_proj")
    if wm.shape[0] != GRID * GRID:
        raise ShapeMismatch(f"mask_proj must have 256 rows, got {wm.shape}")
    return (mask_patches(mask) @ wm.astype(np.float64)).astype(DTYPE)


def node_probabilities(mask) -> np.ndarray:
    """Foreground probability of each node: the mean of its padded patch."""
    return mask_patches(mask).mean(axis=1)


def upsample_nodes(node_mask, out_shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour expansion of an ``(H, W)`` node map to pixel resolution."""
    node_mask = np.asarray(node_mask)
    full = np.repeat(np.repeat(node_mask, GRID, axis=0), GRID, axis=1)
    return full[: out_shape[0], : out_shape[1]]


# ------------------------------------------------------------------ readouts


def heaviside(x: float) -> int:
    """1 for strictly positive input, else 0."""
    return 1 if x > 0 else 0


def aggregate_global(joint, M, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Probability-weighted mean of the rows whose probability exceeds ``tau``.

    Rows with ``M_j <= tau`` are excluded exactly, not just down-weighted.
    Raises GlobalTokenUndefined if no row survives.
    """
    joint = as_tensor(joint, 2, "joint")
    M = np.asarray(M, dtype=np.float64).reshape(-1)
    if M.shape[0] != joint.shape[0]:
        raise ShapeMismatch(f"{M.shape[0]} probabilities for {joint.shape[0]} rows")
    keep = M > tau
    w = M[keep]
    denom = w.sum()
    if not keep.any() or denom <= 0:
        raise GlobalTokenUndefined(f"no memory node above tau={tau}")
    token = (w[:, None] * joint[keep].astype(np.float64)).sum(0) / denom
    return token[None, :].astype(DTYPE)


def local_readout(Fq: FeatureMap, keys, values, key_proj, return_affinity: bool = False):
    """Propagate memory values to every query node.

    ``affinity = softmax_j(-||Fq @ key_proj - key_j||^2)`` taken over all memory
    rows; the readout is ``affinity @ values``.
    """
    wk = as_tensor(key_proj, 2, "key_proj")
    keys = as_tensor(keys, 2, "keys")
    values = as_tensor(values, 2, "values")
    if Fq.channels != wk.shape[0]:
        raise ShapeMismatch(f"query width {Fq.channels} != key_proj rows {wk.shape[0]}")
    if keys.shape[1] != wk.shape[1]:
        raise ShapeMismatch(f"key width {keys.shape[1]} != key_proj cols {wk.shape[1]}")
    if keys.shape[0] != values.shape[0]:
        raise ShapeMismatch(f"{keys.shape[0]} keys but {values.shape[0]} values")
    if keys.shape[0] == 0:
        raise EmptyReferenceSet("memory bank is empty")
    q = Fq.data.astype(np.float64) @ wk.astype(np.float64)
    sim = _neg_l2_f64(q, keys)
    sim -= sim.max(axis=1, keepdims=True)
    aff = np.exp(sim)
    aff /= aff.sum(axis=1, keepdims=True)
    out = (aff @ values.astype(np.float64)).astype(DTYPE)
    if return_affinity:
        return out, aff.astype(DTYPE)
    return out


def joint_features(values, features, joint_proj) -> np.ndarray:
    """``(values || features) @ joint_proj``."""
    values = np.asarray(values, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if values.shape[0] != features.shape[0]:
        raise ShapeMismatch(f"{values.shape[0]} value rows vs {features.shape[0]} feature rows")
    cat = np.concatenate([values, features], axis=1)
    wj = np.asarray(joint_proj, dtype=np.float64)
    if cat.shape[1] != wj.shape[0]:
        raise ShapeMismatch(f"joint input width {cat.shape[1]} != joint_proj rows {wj.shape[0]}")
    return cat @ wj


def global_affinity(Yq, Fq: FeatureMap, tokens: GlobalTokens, joint_proj) -> np.ndarray:
    """Node-object affinity: column 0 against the foreground token, column 1 background."""
    stacked = tokens.stacked().astype(np.float64)
    joint = joint_features(Yq, Fq.data, joint_proj)
    if joint.shape[1] != stacked.shape[1]:
        raise ShapeMismatch(f"joint width {joint.shape[1]} != token width {stacked.shape[1]}")
    return (joint @ stacked.T).astype(DTYPE)


def build_memory(
    ref_features: Sequence[FeatureMap],
    ref_masks: Sequence,
    weights: MemoryWeights,
    frame_indices: Sequence[int] | None = None,
    tau: float = DEFAULT_TAU,
    enhancer: Enhancer = identity_enhancer,
) -> HybridMemory:
    """Encode reference frames and their masks into a hybrid memory."""
    if len(ref_features) != len(ref_masks):
        raise ShapeMismatch(f"{len(ref_features)} feature maps but {len(ref_masks)} masks")
    if not ref_features:
        raise EmptyReferenceSet("at least one reference frame is required")
    if frame_indices is None:
        frame_indices = range(len(ref_features))
    frame_indices = tuple(int(i) for i in frame_indices)
    if len(frame_indices) != len(ref_features):
        raise ShapeMismatch("one frame index per reference frame is required")
    if any(b <= a for a, b in zip(frame_indices, frame_indices[1:])):
        raise ValueError(f"reference indices must be strictly increasing: {frame_indices}")

    keys, values, feats, probs, owner = [], [], [], [], []
    for idx, fm, mask in zip(frame_indices, ref_features, ref_masks):
        mask = np.asarray(mask, dtype=np.float64)
        if mask.size and (mask.min() < 0 or mask.max() > 1):
            raise ValueError("mask probabilities must lie in [0, 1]")
        if grid_shape(mask.shape) != (fm.height, fm.width):
            raise ShapeMismatch(
                f"mask {mask.shape} gives a {grid_shape(mask.shape)} grid, "
                f"features are {fm.height}x{fm.width}"
            )
        if fm.channels != weights.channels:
            raise ShapeMismatch(f"feature width {fm.channels} != weights width {weights.channels}")
        p = node_probabilities(mask)
        y = enhancer(encode_mask_grid(mask, weights.mask_proj), fm)
        values.append(np.concatenate([y, p[:, None], 1.0 - p[:, None]], axis=1))
        keys.append(fm.data.astype(np.float64) @ weights.key_proj.astype(np.float64))
        feats.append(fm.data)
        probs.append(p)
        owner.append(np.full(fm.height * fm.width, idx, dtype=np.int64))

    values = np.concatenate(values).astype(DTYPE)
    features = np.concatenate(feats).astype(DTYPE)
    probs = np.concatenate(probs)
    joint = joint_features(values, features, weights.joint_proj).astype(DTYPE)

    def token(m):
        try:
            return aggregate_global(joint, m, tau)
        except GlobalTokenUndefined:
            return None

    return HybridMemory(
        keys=np.concatenate(keys).astype(DTYPE),
        values=values,
        frame_index=np.concatenate(owner),
        ref_indices=frame_indices,
        ref_probs=probs,
        tokens=GlobalTokens(token(probs), token(1.0 - probs)),
        features=features,
    )


def soft_mask_from_values(values, height: int, width: int) -> np.ndarray:
    """Renormalised foreground probability from the trailing (fg, bg) channels."""
    values = np.asarray(values, dtype=np.float64)
    fg, bg = values[:, -2], values[:, -1]
    return (fg / (fg + bg)).reshape(height, width).astype(DTYPE)


def fuse_soft_mask(values, affinity, height: int, width: int) -> np.ndarray:
    """Foreground probability combining the local readout with the global affinity.

    The local probability is moved to logit space and shifted by the
    node-object affinity margin ``(X_fg - X_bg) / sqrt(D)``, i.e. the
    logit of a two-way softmax over the tokens at attention temperature.
    Without an affinity this is just :func:`soft_mask_from_values`.
    """
    local = soft_mask_from_values(values, height, width).astype(np.float64)
    if affinity is None:
        return local.astype(DTYPE)
    aff = np.asarray(affinity, dtype=np.float64)
    p = np.clip(local, PROB_EPS, 1.0 - PROB_EPS)
    margin = (aff[:, 0] - aff[:, 1]).reshape(height, width) / math.sqrt(KEY_DIM)
    logit = np.log(p) - np.log1p(-p) + margin
    return (0.5 * (1.0 + np.tanh(0.5 * logit))).astype(DTYPE)


def hybrid_propagate(
    Fq: FeatureMap, mem: HybridMemory, weights: MemoryWeights, use_global: bool = True
) -> Propagation:
    """Local readout followed by node-object affinity against the global tokens.

    When either token is undefined (or ``use_global`` is off) the affinity is
    ``None`` and the soft mask comes from the local readout alone.
    """
    if mem.size == 0:
        raise EmptyReferenceSet("memory is empty")
    Yq = local_readout(Fq, mem.keys, mem.values, weights.key_proj)
    Xq = None
    if use_global and mem.tokens.defined:
        Xq = global_affinity(Yq, Fq, mem.tokens, weights.joint_proj)
    return Propagation(Yq, Xq, fuse_soft_mask(Yq, Xq, Fq.height, Fq.width))
