"""Slow reference implementations used to cross-check the vectorised code.

Everything here is written with explicit loops and shares no code with the
modules it checks, apart from the input containers.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def _dot(a, b) -> float:
    return float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))


def _vecmat(vec, mat) -> list[float]:
    return np.dot(np.asarray(vec, dtype=np.float64), np.asarray(mat, dtype=np.float64)).tolist()


def naive_patches(mask, grid: int = 16):
    """Yield (probability mean, row-major flattened patch) per node, with zero padding."""
    mask = np.asarray(mask, dtype=np.float64)
    h0, w0 = mask.shape
    rows = (h0 + grid - 1) // grid
    cols = (w0 + grid - 1) // grid
    for r in range(rows):
        for c in range(cols):
            patch = np.zeros((grid, grid))
            part = mask[r * grid : (r + 1) * grid, c * grid : (c + 1) * grid]
            patch[: part.shape[0], : part.shape[1]] = part
            flat = [float(v) for v in patch.reshape(-1)]
            yield math.fsum(flat) / len(flat), flat


def naive_readout(query, keys, values):
    """Softmax(-||q - k||^2) readout over already-projected keys, one pair at a time."""
    keys = [np.asarray(k, dtype=np.float64) for k in keys]
    values = np.asarray(values, dtype=np.float64)
    out, affinities = [], []
    for q in query:
        q = np.asarray(q, dtype=np.float64)
        sims = []
        for k in keys:
            d = q - k
            sims.append(-float(np.dot(d, d)))
        top = max(sims)
        e = [math.exp(s - top) for s in sims]
        z = math.fsum(e)
        w = [x / z for x in e]
        affinities.append(w)
        row = []
        for c in range(values.shape[1]):
            row.append(math.fsum(w[j] * values[j, c] for j in range(len(w))))
        out.append(row)
    return out, affinities


def naive_aggregate(joint, probs, tau: float = 0.5):
    num = [0.0] * len(joint[0])
    den = 0.0
    for row, m in zip(joint, probs):
        if m - tau > 0:
            den += m
            for c in range(len(row)):
                num[c] += m * float(row[c])
    if den == 0:
        return None
    return [x / den for x in num]


def naive_hybrid(query_features, ref_features, ref_masks, key_proj, joint_proj, mask_proj, tau=0.5):
    """Full local + global propagation for one target frame, loop by loop.

    ``query_features`` and each entry of ``ref_features`` are ``(H*W, C)``
    row arrays; masks are pixel-resolution probability maps. Returns a dict
    with ``values``, ``affinity`` (node-object, or None), ``soft`` (flat,
    per node) and ``weights`` (softmax rows over memory).
    """
    keys, values, joints, probs = [], [], [], []
    for feats, mask in zip(ref_features, ref_masks):
        feats = np.asarray(feats, dtype=np.float64)
        for node, (p, flat) in enumerate(naive_patches(mask)):
            f = feats[node]
            value = _vecmat(flat, mask_proj) + [p, 1.0 - p]
            keys.append(_vecmat(f, key_proj))
            values.append(value)
            joints.append(_vecmat(value + list(f), joint_proj))
            probs.append(p)

    fg = naive_aggregate(joints, probs, tau)
    bg = naive_aggregate(joints, [1.0 - p for p in probs], tau)

    qf = np.asarray(query_features, dtype=np.float64)
    query = [_vecmat(f, key_proj) for f in qf]
    out, weights = naive_readout(query, keys, values)

    affinity = None
    if fg is not None and bg is not None:
        affinity = []
        for y, f in zip(out, qf):
            j = _vecmat(y + list(f), joint_proj)
            affinity.append([_dot(j, fg), _dot(j, bg)])

    soft = []
    for i, y in enumerate(out):
        p = y[-2] / (y[-2] + y[-1])
        if affinity is not None:
            p = min(max(p, 1e-7), 1 - 1e-7)
            z = math.log(p / (1 - p)) + (affinity[i][0] - affinity[i][1]) / math.sqrt(len(fg))
            p = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
        soft.append(p)
    return {"values": out, "affinity": affinity, "soft": soft, "weights": weights}


def brute_force_assignment(cost):
    """Exhaustive minimum over all permutations: ``(best_cost, permutation)``."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    best, arg = math.inf, None
    for perm in itertools.permutations(range(n)):
        total = math.fsum(cost[i, perm[i]] for i in range(n))
        if total < best:
            best, arg = total, list(perm)
    return best, arg


def naive_giou(a, b) -> float:
    """GIoU via polygon geometry (shapely)."""
    from shapely.geometry import box as sbox

    pa, pb = sbox(*a), sbox(*b)
    union = pa.union(pb).area
    iou = pa.intersection(pb).area / union if union > 0 else 0.0
    hull = sbox(min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3])).area
    return iou - ((hull - union) / hull if hull > 0 else 0.0)


def naive_jaccard(pred, gt) -> float:
    inter = union = 0
    for p, g in zip(np.asarray(pred).reshape(-1), np.asarray(gt).reshape(-1)):
        p, g = bool(p > 0.5), bool(g > 0.5)
        inter += p and g
        union += p or g
    return 1.0 if union == 0 else inter / union


def _naive_boundary(mask):
    h, w = mask.shape
    pts = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and not mask[yy, xx]:
                    pts.append((y, x))
                    break
    return pts


def naive_boundary_f(pred, gt, tolerance: float) -> float:
    """Boundary F from explicit point-to-point distances (brute-force distance transform)."""
    pb = _naive_boundary(np.asarray(pred) > 0.5)
    gb = _naive_boundary(np.asarray(gt) > 0.5)
    if not pb and not gb:
        return 1.0

    def hits(src, dst):
        return sum(1 for (y, x) in src if any(math.hypot(y - v, x - u) <= tolerance for v, u in dst))

    precision = 1.0 if not pb else hits(pb, gb) / len(pb)
    recall = 1.0 if not gb else hits(gb, pb) / len(gb)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def naive_mcs(jtable, tau: float) -> float:
    good = sum(1 for row in jtable if all(j > tau for j in row))
    return good / len(jtable)
