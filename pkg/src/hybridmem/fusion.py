"""Language-conditioned fusion, object-query decoding and conditional kernels.

Dense attention stands in for the deformable transformer, and a single
stride-16 map replaces the multi-scale pyramid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from . import formats
from .errors import ShapeMismatch
from .memory import FeatureMap
from .numerics import DTYPE, as_tensor, attention, matmul

DEFAULT_WIDTH = 256
DEFAULT_QUERIES = 5


@dataclass(frozen=True)
class WordFeatures:
    tokens: np.ndarray  # (N_w, C)

    def __post_init__(self):
        t = as_tensor(self.tokens, 2, "word tokens")
        if t.shape[0] < 1:
            raise ShapeMismatch("at least one word token is required")
        object.__setattr__(self, "tokens", t)


@dataclass(frozen=True)
class SentenceFeature:
    embedding: np.ndarray  # (1, C)

    def __post_init__(self):
        e = as_tensor(self.embedding, 2, "sentence embedding")
        if e.shape[0] != 1:
            raise ShapeMismatch(f"sentence embedding must have one row, got {e.shape}")
        object.__setattr__(self, "embedding", e)


@dataclass(frozen=True)
class ConditionalKernel:
    weights: np.ndarray  # (1, C)


@dataclass(frozen=True)
class ObjectQuery:
    query: np.ndarray  # (1, C)


@dataclass(frozen=True)
class ObjectEmbedding:
    embedding: np.ndarray
    score: float
    box: tuple[float, float, float, float]
    kernel: ConditionalKernel


class ProjectionSet(Mapping):
    """Immutable name -> matrix table.

    Expected entries for width ``C`` and ``N`` queries::

        vl.wq vl.wk vl.wv            C x C   (vision-language fusion)
        dec.wq dec.wk dec.wv         C x C   (query decoder)
        head.score.w / .b            C x 1 / 1 x 1
        head.box.w / .b              C x 4 / 1 x 4
        head.kernel.w / .b           C x C / 1 x C
        query.embed                  N x C   (learnable query part)
        query.combine                2C x C  (only for concatenation mode)
    """

    def __init__(self, tables: Mapping[str, np.ndarray]):
        self._tables = MappingProxyType(
            {k: as_tensor(v, 2, k) for k, v in tables.items()}
        )

    def __getitem__(self, key):
        try:
            return self._tables[key]
        except KeyError:
            raise KeyError(f"projection {key!r} missing from ProjectionSet") from None

    def __iter__(self):
        return iter(self._tables)

    def __len__(self):
        return len(self._tables)

    @property
    def width(self) -> int:
        return self["vl.wq"].shape[0]

    @classmethod
    def random(cls, seed: int, width: int = DEFAULT_WIDTH, n_queries: int = DEFAULT_QUERIES):
        rng = np.random.default_rng(seed)
        s = 1 / math.sqrt(width)

        def mat(r, c, scale=s):
            return rng.normal(0, scale, (r, c)).astype(DTYPE)

        tables = {name: mat(width, width) for name in
                  ("vl.wq", "vl.wk", "vl.wv", "dec.wq", "dec.wk", "dec.wv")}
        tables.update(
            {
                "head.score.w": mat(width, 1),
                "head.score.b": np.zeros((1, 1), DTYPE),
                "head.box.w": mat(width, 4),
                "head.box.b": np.zeros((1, 4), DTYPE),
                "head.kernel.w": mat(width, width),
                "head.kernel.b": np.zeros((1, width), DTYPE),
                "query.embed": mat(n_queries, width, 1.0),
                "query.combine": mat(2 * width, width, 1 / math.sqrt(2 * width)),
            }
        )
        return cls(tables)

    @classmethod
    def load(cls, directory) -> "ProjectionSet":
        return cls(formats.read_tensor_dir(directory))

    def save(self, directory) -> None:
        formats.write_tensor_dir(directory, dict(self._tables))


def make_queries(sentence: SentenceFeature, P: ProjectionSet, mode: str = "sum") -> list[ObjectQuery]:
    """Combine the sentence feature with each learnable query embedding.

    ``mode="sum"`` adds them; ``mode="concat"`` concatenates and projects
    through ``query.combine``.
    """
    embed = P["query.embed"]
    s = sentence.embedding
    if s.shape[1] != embed.shape[1]:
        raise ShapeMismatch(f"sentence width {s.shape[1]} != query width {embed.shape[1]}")
    if mode == "sum":
        rows = embed.astype(np.float64) + s
    elif mode == "concat":
        cat = np.concatenate([np.repeat(s, embed.shape[0], axis=0), embed], axis=1)
        rows = matmul(cat, P["query.combine"], "query.combine")
    else:
        raise ValueError(f"unknown query mode {mode!r}")
    return [ObjectQuery(r[None, :].astype(DTYPE)) for r in rows]


def vl_fuse(Fv: FeatureMap, words: WordFeatures, P: ProjectionSet) -> FeatureMap:
    """Hadamard-modulate visual features by their cross-attention over words."""
    att = attention(
        matmul(Fv.data, P["vl.wq"], "vl.wq"),
        matmul(words.tokens, P["vl.wk"], "vl.wk"),
        matmul(words.tokens, P["vl.wv"], "vl.wv"),
    )
    if att.shape != Fv.data.shape:
        raise ShapeMismatch(f"attention output {att.shape} != visual features {Fv.data.shape}")
    return FeatureMap(Fv.height, Fv.width, (Fv.data * att).astype(DTYPE))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def _box_from_raw(raw) -> tuple[float, float, float, float]:
    cx, cy, w, h = _sigmoid(raw).tolist()
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def decode_queries(queries: Sequence[ObjectQuery], Fvl: FeatureMap, P: ProjectionSet) -> list[ObjectEmbedding]:
    """Residual cross-attention of queries over fused features, then the heads.

    Score is a logistic squash; the box head predicts normalised
    ``(cx, cy, w, h)`` through a sigmoid and is returned as ``(x1, y1, x2, y2)``.
    """
    if not queries:
        raise ShapeMismatch("at least one object query is required")
    Q = np.concatenate([q.query for q in queries], axis=0)
    if Q.shape[1] != Fvl.channels:
        raise ShapeMismatch(f"query width {Q.shape[1]} != feature width {Fvl.channels}")
    att = attention(
        matmul(Q, P["dec.wq"], "dec.wq"),
        matmul(Fvl.data, P["dec.wk"], "dec.wk"),
        matmul(Fvl.data, P["dec.wv"], "dec.wv"),
    )
    E = (Q.astype(np.float64) + att).astype(DTYPE)
    scores = _sigmoid(matmul(E, P["head.score.w"]) + P["head.score.b"])[:, 0]
    boxes = matmul(E, P["head.box.w"]) + P["head.box.b"]
    kernels = (matmul(E, P["head.kernel.w"]) + P["head.kernel.b"]).astype(DTYPE)
    return [
        ObjectEmbedding(
            embedding=E[i : i + 1],
            score=float(scores[i]),
            box=_box_from_raw(boxes[i]),
            kernel=ConditionalKernel(kernels[i : i + 1]),
        )
        for i in range(len(queries))
    ]


def apply_conditional_kernel(kernel: ConditionalKernel, features: FeatureMap) -> np.ndarray:
    """Point-wise convolution: per-node dot product, returned as ``(H, W)`` logits."""
    w = np.asarray(kernel.weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != features.channels:
        raise ShapeMismatch(f"kernel width {w.shape[0]} != feature width {features.channels}")
    logits = features.data.astype(np.float64) @ w
    return logits.reshape(features.height, features.width).astype(DTYPE)
