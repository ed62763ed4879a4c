"""Shared frame generators and independent oracles for the test suite.

Everything here is deliberately written from first principles (plain
loops, itertools enumeration) so the package code is checked against a
second, unrelated implementation rather than against itself.
"""

import itertools

import numpy as np

from qtpart.codec import SearchState, encode_ns, split_signal_cost
from qtpart.frame_io import LumaFrame, Rect, causal_patch

CHILD_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def natural_frame(seed: int, h: int = 128, w: int = 128) -> LumaFrame:
    """Smooth blocky texture with noise and a horizontal ramp.

    Produces both split and no-split optima at every collectable size.
    """
    r = np.random.default_rng(seed)
    coarse = r.normal(128, 48, (-(-h // 16), -(-w // 16)))
    img = np.kron(coarse, np.ones((16, 16)))[:h, :w]
    k = np.ones(5) / 5.0
    img = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), 0, img)
    img = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), 1, img)
    img += r.normal(0, 6, (h, w))
    img += np.linspace(0, 40, w)[None, :]
    return LumaFrame(np.clip(img, 0, 255).astype(np.uint8))


def mosaic_frame(seed: int, h: int = 256, w: int = 256) -> LumaFrame:
    """Zoned content: flat, ramp, 16px mosaic, 8px mosaic, noise.

    The zone mix makes the split/no-split cost ratio vary widely and
    predictably with local texture, which a trained model can rank.
    """
    r = np.random.default_rng(seed)
    img = np.zeros((h, w))
    for zy in range(0, h, 64):
        for zx in range(0, w, 64):
            style = r.integers(5)
            if style == 0:
                z = np.full((64, 64), r.uniform(40, 215))
            elif style == 1:
                gx, gy = r.uniform(-1, 1, 2)
                yy, xx = np.mgrid[0:64, 0:64]
                z = 128 + gx * (xx - 32) + gy * (yy - 32)
            elif style == 2:
                z = np.kron(r.uniform(30, 225, (4, 4)), np.ones((16, 16)))
            elif style == 3:
                z = np.kron(r.uniform(30, 225, (8, 8)), np.ones((8, 8)))
            else:
                z = r.uniform(90, 165) + r.normal(0, 24, (64, 64))
            img[zy:zy + 64, zx:zx + 64] = z
    img += r.normal(0, 3, (h, w))
    return LumaFrame(np.clip(img, 0, 255).astype(np.uint8))


def rank_of(a: np.ndarray) -> np.ndarray:
    order = np.argsort(a, kind="stable")
    rk = np.empty(len(a))
    rk[order] = np.arange(len(a))
    return rk


def spearman(a, b) -> float:
    return float(np.corrcoef(rank_of(np.asarray(a)), rank_of(np.asarray(b)))[0, 1])


def bottom_up_qt_cost(levels, delta: float) -> float:
    """Iterative leaves-to-root aggregation of a no-split cost pyramid.

    levels[d] is the (2**d, 2**d) table of no-split costs at depth d.
    Returns the root's split cost: the sum over its four children of
    min(no-split, own split cost), plus delta. Independent oracle for
    the recursive top-down implementation.
    """
    depth = len(levels) - 1
    best = np.array(levels[depth], dtype=np.float64).copy()
    for d in range(depth - 1, 0, -1):
        ns = np.array(levels[d], dtype=np.float64)
        n = 1 << d
        agg = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                kids = (best[2 * i, 2 * j] + best[2 * i, 2 * j + 1]
                        + best[2 * i + 1, 2 * j] + best[2 * i + 1, 2 * j + 1])
                agg[i, j] = min(ns[i, j], kids + delta)
        best = agg
    return float(best[0, 0] + best[0, 1] + best[1, 0] + best[1, 1] + delta)


def dyadic_tables(rng: np.random.Generator, depth: int = 3):
    """Random cost tables whose entries are multiples of 1/64.

    Dyadic values keep every candidate sum exact in float64, so the two
    aggregation orders must agree to the last bit.
    """
    return [rng.integers(0, 1 << 20, (1 << d, 1 << d)) / 64.0
            for d in range(depth + 1)]


def _encode_leaf(state: SearchState, rect: Rect, depth: int, cfg) -> float:
    patch = causal_patch(state.work, rect, state.mask)
    cost, recon = encode_ns(patch, cfg)
    state.commit(rect, depth, recon, cost)
    return cost.j


def enumerate_tree_costs(frame: LumaFrame, cfg) -> list[float]:
    """Total J of every legal 2-depth tree over a single 32x32 root.

    One no-split tree plus 16 split variants (each 16x16 child split or
    not) = 17 candidates, each re-encoded causally from scratch.
    """
    assert frame.width == 32 and frame.height == 32
    assert cfg.ctu == 32 and cfg.max_depth == 2
    sc = split_signal_cost(cfg)
    costs = []

    state = SearchState(frame)
    costs.append(_encode_leaf(state, Rect(0, 0, 32, 32), 0, cfg))

    for combo in itertools.product((0, 1), repeat=4):
        state = SearchState(frame)
        total = sc
        for ci, (dy, dx) in enumerate(CHILD_OFFSETS):
            r16 = Rect(dx * 16, dy * 16, 16, 16)
            if combo[ci]:
                total += sc
                for dy2, dx2 in CHILD_OFFSETS:
                    r8 = Rect(r16.x + dx2 * 8, r16.y + dy2 * 8, 8, 8)
                    total += _encode_leaf(state, r8, 2, cfg)
            else:
                total += _encode_leaf(state, r16, 1, cfg)
        costs.append(total)
    return costs
