"""Hybrid-memory mask propagation, reference selection, losses and VOS metrics."""

from .errors import (
    BadMagic,
    BadVersion,
    EmptyAxis,
    EmptyInput,
    EmptyReferenceSet,
    FrameMismatch,
    GlobalTokenUndefined,
    HeaderMismatch,
    HybridMemError,
    MissingReferenceMask,
    ShapeMismatch,
    TruncatedPayload,
    UnsupportedFormat,
)
from .memory import (
    FeatureMap,
    HybridMemory,
    MemoryWeights,
    aggregate_global,
    build_memory,
    encode_mask_grid,
    global_affinity,
    heaviside,
    hybrid_propagate,
    local_readout,
)
from .metrics import MaskSequence, a2d_metrics, boundary_f, jaccard, mcs, video_metrics
from .numerics import attention, pairwise_neg_l2, softmax
from .selection import (
    ScoredFrame,
    VideoBundle,
    assign_gt_scores,
    collaborate,
    select_reference_frames,
)

__version__ = "0.1.0"
