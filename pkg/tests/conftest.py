import numpy as np
import pytest

from hybridmem.memory import GRID, FeatureMap, MemoryWeights


def random_instance(rng, max_frames=3, max_nodes=64, max_channels=16, mask_channels=4):
    """Random memory problem: reference features/masks, a query frame and weights."""
    T = int(rng.integers(1, max_frames + 1))
    H = int(rng.integers(1, 9))
    W = int(rng.integers(1, max(1, max_nodes // H) + 1))
    W = min(W, 8)
    C = int(rng.integers(1, max_channels + 1))
    weights = MemoryWeights.random(int(rng.integers(2**31)), C, mask_channels)
    refs = [FeatureMap(H, W, rng.normal(size=(H * W, C))) for _ in range(T)]
    masks = []
    for _ in range(T):
        # masks at pixel resolution, sometimes ragged so padding kicks in
        h0 = H * GRID - int(rng.integers(0, GRID))
        w0 = W * GRID - int(rng.integers(0, GRID))
        kind = rng.integers(3)
        if kind == 0:
            m = rng.random((h0, w0))
        elif kind == 1:
            m = (rng.random((h0, w0)) > 0.5).astype(float)
        else:
            node = rng.random((H, W)) > 0.5
            m = np.repeat(np.repeat(node, GRID, 0), GRID, 1)[:h0, :w0].astype(float)
        masks.append(m.astype(np.float32))
    query = FeatureMap(H, W, rng.normal(size=(H * W, C)))
    return refs, masks, query, weights


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
