import math

import numpy as np
import pytest
from conftest import random_instance
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridmem import oracles
from hybridmem.errors import EmptyReferenceSet, GlobalTokenUndefined, ShapeMismatch
from hybridmem.memory import (
    GRID,
    FeatureMap,
    GlobalTokens,
    LinearEnhancer,
    MemoryWeights,
    aggregate_global,
    build_memory,
    encode_mask_grid,
    global_affinity,
    heaviside,
    hybrid_propagate,
    local_readout,
    soft_mask_from_values,
)


# ---- encode_mask_grid


def test_encode_zero_mask_is_zero(rng):
    wm = rng.normal(size=(256, 5))
    assert not encode_mask_grid(np.zeros((32, 48)), wm).any()


def test_encode_full_patch_with_ones_column():
    np.testing.assert_allclose(encode_mask_grid(np.ones((16, 16)), np.ones((256, 1))), [[256.0]])


def test_encode_patch_count_and_padding(rng):
    wm = rng.normal(size=(256, 3))
    assert encode_mask_grid(np.ones((32, 16)), wm).shape == (2, 3)
    # 17x20 pads to 32x32: four nodes; padded pixels act as background
    m = np.ones((17, 20))
    out = encode_mask_grid(m, np.ones((256, 1)))
    np.testing.assert_allclose(out[:, 0], [256, 4 * 16, 16, 4])


def test_encode_row_major_patch_order():
    m = np.zeros((16, 16))
    m[0, 1] = 1.0  # second element of the flattened patch
    wm = np.zeros((256, 1))
    wm[1, 0] = 7.0
    np.testing.assert_allclose(encode_mask_grid(m, wm), [[7.0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
def test_encode_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    m1, m2 = rng.random((20, 35)), rng.random((20, 35))
    wm = rng.normal(size=(256, 4))
    scale = 1.0 / max(1.0, a + b)  # keep probabilities in range
    lhs = encode_mask_grid(scale * (a * m1 + b * m2), wm)
    rhs = scale * (a * encode_mask_grid(m1, wm).astype(np.float64) + b * encode_mask_grid(m2, wm))
    np.testing.assert_allclose(lhs, rhs, atol=1e-4)


# ---- heaviside / aggregate_global


def test_heaviside():
    assert heaviside(0.2) == 1
    assert heaviside(0.0) == 0
    assert heaviside(-3) == 0


def test_aggregate_examples():
    f = np.array([[1.5, -2.0, 3.0]])
    np.testing.assert_allclose(aggregate_global(f, [0.9]), f)
    # (0.8 e1 + 0.6 e2) / 1.4
    np.testing.assert_allclose(
        aggregate_global(np.eye(2), [0.8, 0.6]), [[0.8 / 1.4, 0.6 / 1.4]], atol=1e-6
    )
    np.testing.assert_allclose(aggregate_global(np.eye(2), [0.8, 0.6]), [[0.5714, 0.4286]], atol=1e-4)
    with pytest.raises(GlobalTokenUndefined):
        aggregate_global(np.ones((1, 3)), [0.5])
    with pytest.raises(ShapeMismatch):
        aggregate_global(np.ones((2, 3)), [0.7])


def test_aggregate_invariants(rng):
    for _ in range(50):
        n = int(rng.integers(2, 20))
        joint = rng.normal(size=(n, 6))
        M = rng.random(n)
        M[0] = 0.9
        tok = aggregate_global(joint, M)
        perm = rng.permutation(n)
        np.testing.assert_allclose(aggregate_global(joint[perm], M[perm]), tok, atol=1e-5)
        low = M <= 0.5
        noisy = joint.copy()
        noisy[low] += rng.normal(size=(low.sum(), 6)) * 100
        np.testing.assert_array_equal(aggregate_global(noisy, M), tok)
    joint = rng.normal(size=(7, 4))
    np.testing.assert_allclose(aggregate_global(joint, np.full(7, 0.75)), joint.mean(0, keepdims=True), atol=1e-5)


# ---- local readout


def test_local_readout_examples():
    wk = np.eye(1)
    q = FeatureMap(1, 1, [[0.0]])
    out = local_readout(q, [[0.0], [1.0]], [[0.0], [1.0]], wk)
    np.testing.assert_allclose(out, [[1 / (1 + math.e)]], atol=1e-6)
    np.testing.assert_allclose(out, [[0.2689]], atol=1e-4)
    # a single memory row is copied to every query node
    q3 = FeatureMap(1, 3, [[-4.0], [0.0], [9.0]])
    np.testing.assert_allclose(local_readout(q3, [[2.0]], [[0.3, 0.7]], wk), [[0.3, 0.7]] * 3)
    # two equidistant rows average
    np.testing.assert_allclose(
        local_readout(q, [[-1.0], [1.0]], [[2.0, 0.0], [0.0, 4.0]], wk), [[1.0, 2.0]], atol=1e-6
    )


def test_local_readout_shape_errors():
    q = FeatureMap(1, 1, [[0.0, 1.0]])
    with pytest.raises(ShapeMismatch):
        local_readout(q, np.zeros((2, 3)), np.zeros((2, 1)), np.eye(2))
    with pytest.raises(ShapeMismatch):
        local_readout(q, np.zeros((2, 2)), np.zeros((3, 1)), np.eye(2))


def test_readout_affinity_rows_and_hull(rng):
    for _ in range(100):
        refs, masks, query, w = random_instance(rng)
        mem = build_memory(refs, masks, w)
        out, aff = local_readout(query, mem.keys, mem.values, w.key_proj, return_affinity=True)
        np.testing.assert_allclose(aff.astype(np.float64).sum(1), 1.0, atol=1e-5)
        lo, hi = mem.values.min(0), mem.values.max(0)
        assert np.all(out >= lo - 1e-5) and np.all(out <= hi + 1e-5)


def test_nearest_neighbour_limit(rng):
    wk = np.eye(4)
    for _ in range(50):
        keys = rng.normal(size=(10, 4))
        d = np.linalg.norm(keys[:, None] - keys[None], axis=-1) + np.eye(10) * 10
        if d.min() < 0.1:
            continue
        vals = rng.random((10, 3))
        pick = rng.integers(10, size=6)
        q = keys[pick] + rng.normal(size=(6, 4)) * 0.005
        out = local_readout(FeatureMap(2, 3, 100 * q), 100 * keys, vals, wk)
        np.testing.assert_allclose(out, vals[pick], atol=1e-3)


# ---- build_memory / global tokens


def _weights(C=3, Cy=4, seed=0):
    return MemoryWeights.random(seed, C, Cy)


def test_build_memory_row_counts(rng):
    w = _weights()
    fm = FeatureMap(2, 2, rng.normal(size=(4, 3)))
    mem = build_memory([fm], [rng.random((32, 32))], w)
    assert mem.size == 4 and mem.values.shape == (4, 6) and mem.keys.shape == (4, 64)
    fms = [FeatureMap(2, 3, rng.normal(size=(6, 3))) for _ in range(3)]
    mem = build_memory(fms, [rng.random((32, 48)) for _ in range(3)], w)
    assert mem.size == 18
    assert set(mem.frame_index.tolist()) == {0, 1, 2}


def test_build_memory_values_carry_probability_pair():
    w = _weights()
    m = np.zeros((16, 32))
    m[:, :16] = 1.0
    m[:8, 16:] = 1.0
    mem = build_memory([FeatureMap(1, 2, np.zeros((2, 3)))], [m], w)
    np.testing.assert_allclose(mem.values[:, -2:], [[1.0, 0.0], [0.5, 0.5]])


def test_build_memory_undefined_foreground(rng):
    w = _weights()
    fm = FeatureMap(2, 2, rng.normal(size=(4, 3)))
    mem = build_memory([fm], [np.full((32, 32), 0.5)], w)
    assert mem.tokens.foreground is None and mem.tokens.background is None
    mem = build_memory([fm], [rng.random((32, 32)) * 0.5], w)
    assert mem.tokens.foreground is None and mem.tokens.background is not None


def test_build_memory_errors(rng):
    w = _weights()
    fm = FeatureMap(2, 2, rng.normal(size=(4, 3)))
    with pytest.raises(EmptyReferenceSet):
        build_memory([], [], w)
    with pytest.raises(ShapeMismatch):
        build_memory([fm], [np.ones((48, 32))], w)
    with pytest.raises(ValueError):
        build_memory([fm, fm], [np.ones((32, 32))] * 2, w, frame_indices=[3, 1])


def test_linear_enhancer_changes_values(rng):
    w = _weights()
    fm = FeatureMap(1, 1, [[1.0, 0.0, 0.0]])
    enh = np.zeros((3, 4))
    enh[0, 2] = 5.0
    plain = build_memory([fm], [np.ones((16, 16))], w)
    boosted = build_memory([fm], [np.ones((16, 16))], w, enhancer=LinearEnhancer(enh))
    np.testing.assert_allclose(boosted.values[0, 2] - plain.values[0, 2], 5.0, atol=1e-5)


# ---- global affinity


def test_global_affinity_inner_products():
    fg = np.array([[1.0, 2.0]])
    tokens = GlobalTokens(fg, np.array([[-2.0, 1.0]]))
    Fq = FeatureMap(1, 2, [[1.0], [0.0]])
    # joint = (values || features) @ joint_proj: pick joint_proj so the joint row equals fg for node 0 and 0 for node 1
    Yq = np.array([[0.0], [0.0]])
    wj = np.array([[0.0, 0.0], [1.0, 2.0]])
    out = global_affinity(Yq, Fq, tokens, wj)
    np.testing.assert_allclose(out, [[5.0, 0.0], [0.0, 0.0]])


def test_global_affinity_undefined():
    with pytest.raises(GlobalTokenUndefined):
        global_affinity(np.zeros((1, 1)), FeatureMap(1, 1, [[0.0]]), GlobalTokens(None, np.ones((1, 2))),
                        np.ones((2, 2)))


def test_global_affinity_matches_double_loop(rng):
    w = MemoryWeights.random(5, 8, 4)
    fm = FeatureMap(3, 3, rng.normal(size=(9, 8)))
    mem = build_memory([fm], [rng.random((48, 48))], w)
    Fq = FeatureMap(3, 3, rng.normal(size=(9, 8)))
    Yq = local_readout(Fq, mem.keys, mem.values, w.key_proj)
    out = global_affinity(Yq, Fq, mem.tokens, w.joint_proj)
    for i in range(9):
        joint = np.concatenate([Yq[i], Fq.data[i]]).astype(np.float64) @ w.joint_proj
        for c, tok in enumerate((mem.tokens.foreground, mem.tokens.background)):
            expect = sum(float(joint[k]) * float(tok[0, k]) for k in range(64))
            assert abs(out[i, c] - expect) <= 1e-4 * max(1.0, abs(expect))


# ---- hybrid propagation


def test_hybrid_is_composition(rng):
    refs, masks, query, w = random_instance(rng)
    mem = build_memory(refs, masks, w)
    prop = hybrid_propagate(query, mem, w)
    Yq = local_readout(query, mem.keys, mem.values, w.key_proj)
    np.testing.assert_array_equal(prop.values, Yq)
    if mem.tokens.defined:
        np.testing.assert_array_equal(prop.affinity, global_affinity(Yq, query, mem.tokens, w.joint_proj))


def test_hybrid_local_only_when_tokens_undefined(rng):
    w = _weights()
    fm = FeatureMap(2, 2, rng.normal(size=(4, 3)))
    mem = build_memory([fm], [np.full((32, 32), 0.5)], w)
    prop = hybrid_propagate(fm, mem, w)
    assert prop.affinity is None
    np.testing.assert_allclose(prop.soft_mask, soft_mask_from_values(prop.values, 2, 2))


def test_hybrid_matches_naive_oracle(rng):
    for _ in range(40):
        refs, masks, query, w = random_instance(rng)
        mem = build_memory(refs, masks, w)
        prop = hybrid_propagate(query, mem, w)
        ref = oracles.naive_hybrid(query.data, [f.data for f in refs], masks,
                                   w.key_proj, w.joint_proj, w.mask_proj)
        np.testing.assert_allclose(prop.values, ref["values"], atol=1e-4)
        np.testing.assert_allclose(prop.soft_mask.reshape(-1), ref["soft"], atol=1e-4)
        if ref["affinity"] is None:
            assert prop.affinity is None
        else:
            np.testing.assert_allclose(prop.affinity, ref["affinity"], atol=1e-4, rtol=1e-5)


def test_separable_single_reference_recovers_mask(rng):
    C = 8
    u = rng.normal(size=C)
    u /= np.linalg.norm(u)
    node = rng.random((6, 6)) > 0.5
    grid = np.where(node[..., None], 10.0, -10.0) * u + rng.normal(size=(6, 6, C))
    fm = FeatureMap.from_grid(grid)
    mask = np.repeat(np.repeat(node, GRID, 0), GRID, 1).astype(np.float32)
    w = MemoryWeights.random(3, C)
    prop = hybrid_propagate(fm, build_memory([fm], [mask], w), w)
    pred = prop.soft_mask > 0.5
    assert (pred & node).sum() / max(1, (pred | node).sum()) >= 0.99
