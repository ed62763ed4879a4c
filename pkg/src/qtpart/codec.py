"""Deterministic toy intra codec with exhaustive quadtree search.

A block is coded with a single mode: DC prediction from the adjacent
reconstructed row and column, an orthonormal 2-D DCT of the residual,
uniform quantization, and a bit-count proxy instead of an entropy coder.
Costs combine as j = distortion + lambda * rate.

The coding-tree search recursively compares coding a block outright (NS)
against splitting it into four equal sub-blocks (QT), charging a
lambda-scaled signalling cost per split:

    qt_j = sum_children min(child ns_j, child qt_j) + lambda * split_bits

Reconstructions are committed in causal order so every block sees its
neighbours' chosen reconstructions, and a processed-pixel counter tallies
the area of every NS encode performed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.fft import dctn, idctn

from .frame_io import (BORDER_FILL, CTU_SIZES, CausalPatch, LumaFrame, Rect,
                       causal_patch)

QP_MIN, QP_MAX = 0, 51
TRANSFORM_SIZES = (4, 8, 16, 32, 64)
MODE_OVERHEAD_BITS = 4.0
PEAK = 255.0
NS, QT = "NS", "QT"


def lambda_of_qp(qp: int) -> float:
    """Rate weight of the cost j = D + lambda * R; doubles every 3 qp."""
    if not QP_MIN <= qp <= QP_MAX:
        raise ValueError(f"qp {qp} outside [{QP_MIN}, {QP_MAX}]")
    return 0.57 * 2.0 ** ((qp - 12) / 3.0)


def qstep_of_qp(qp: int) -> float:
    """Uniform quantizer step; doubles every 6 qp."""
    if not QP_MIN <= qp <= QP_MAX:
        raise ValueError(f"qp {qp} outside [{QP_MIN}, {QP_MAX}]")
    return 2.0 ** ((qp - 4) / 6.0)


def dct2d(block: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Orthonormal 2-D DCT (type II forward, type III inverse)."""
    a = np.asarray(block, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] not in TRANSFORM_SIZES:
        raise ValueError(f"block must be square with side in {TRANSFORM_SIZES}")
    if inverse:
        return idctn(a, type=2, norm="ortho")
    return dctn(a, type=2, norm="ortho")


@dataclass(frozen=True)
class RdCost:
    """Rate/distortion pair with its weighted sum, computed once."""

    rate: float
    dist: float
    lam: float
    j: float

    @classmethod
    def compute(cls, rate: float, dist: float, lam: float) -> "RdCost":
        if rate < 0 or dist < 0:
            raise ValueError("rate and distortion must be non-negative")
        return cls(rate=rate, dist=dist, lam=lam, j=dist + lam * rate)


@dataclass(frozen=True)
class CodecConfig:
    ctu: int = 64
    max_depth: int = 3
    qp: int = 32
    split_bits: float = 2.0

    def __post_init__(self):
        if self.ctu not in CTU_SIZES:
            raise ValueError(f"ctu must be one of {CTU_SIZES}")
        if not 1 <= self.max_depth <= 4:
            raise ValueError("max_depth must be in [1, 4]")
        if self.ctu >> self.max_depth < 4:
            raise ValueError("max_depth would split below 4x4 blocks")
        if not QP_MIN <= self.qp <= QP_MAX:
            raise ValueError(f"qp {self.qp} outside [{QP_MIN}, {QP_MAX}]")
        if self.split_bits < 0:
            raise ValueError("split_bits must be non-negative")

    def at_qp(self, qp: int) -> "CodecConfig":
        return replace(self, qp=qp)


def split_signal_cost(cfg: CodecConfig) -> float:
    """Cost charged for signalling one quadtree split."""
    return lambda_of_qp(cfg.qp) * cfg.split_bits


def encode_ns(patch: CausalPatch, cfg: CodecConfig) -> tuple[RdCost, np.ndarray]:
    """Code a block without splitting; returns its cost and reconstruction.

    DC prediction uses the mean of the adjacent reconstructed row and
    column (BORDER_FILL when neither strip is available). The rate proxy
    charges one significance bit per coefficient, 2*floor(log2|level|)+3
    bits per nonzero level, and a fixed mode overhead.
    """
    cu = patch.cu.astype(np.float64)
    refs = []
    if patch.top_available:
        refs.append(patch.top[-1, :].astype(np.float64))
    if patch.left_available:
        refs.append(patch.left[:, -1].astype(np.float64))
    dc = float(np.concatenate(refs).mean()) if refs else float(BORDER_FILL)

    coef = dct2d(cu - dc)
    step = qstep_of_qp(cfg.qp)
    levels = np.rint(coef / step)
    rate = MODE_OVERHEAD_BITS + float(levels.size)   # significance bits
    nz = levels != 0
    if nz.any():
        mags = np.abs(levels[nz])
        rate += float(np.sum(2.0 * np.floor(np.log2(mags)) + 3.0))
    recon_resid = dct2d(levels * step, inverse=True)
    recon = np.clip(np.rint(dc + recon_resid), 0, 255).astype(np.uint8)
    dist = float(np.sum((cu - recon.astype(np.float64)) ** 2))
    return RdCost.compute(rate=rate, dist=dist, lam=lambda_of_qp(cfg.qp)), recon


class SearchState:
    """Mutable per-run encoder state shared by all CTUs of one frame.

    ``work`` starts as a copy of the source and is progressively
    overwritten with committed reconstructions; ``mask`` marks committed
    pixels, the only ones usable as prediction references. ``depth_map``
    and ``jpp_map`` record the depth and per-pixel cost of the committed
    leaf covering each pixel, for neighbour summaries. ``pixels`` counts
    the area of every NS encode performed.
    """

    def __init__(self, frame: LumaFrame | np.ndarray):
        pix = frame.pixels if isinstance(frame, LumaFrame) else np.asarray(frame, np.uint8)
        self.orig = pix.copy()
        self.work = pix.copy()
        self.mask = np.zeros(pix.shape, dtype=bool)
        self.depth_map = np.full(pix.shape, -1, dtype=np.int8)
        self.jpp_map = np.zeros(pix.shape, dtype=np.float64)
        self.pixels = 0

    def neighbor_at(self, x: int, y: int) -> Optional[tuple[float, int]]:
        """(per-pixel cost, depth) of the committed leaf at (x, y), if any."""
        if not (0 <= y < self.work.shape[0] and 0 <= x < self.work.shape[1]):
            return None
        if self.depth_map[y, x] < 0:
            return None
        return float(self.jpp_map[y, x]), int(self.depth_map[y, x])

    def commit(self, rect: Rect, depth: int, recon: np.ndarray, cost: RdCost) -> None:
        ys, xs = slice(rect.y, rect.y + rect.h), slice(rect.x, rect.x + rect.w)
        self.work[ys, xs] = recon
        self.mask[ys, xs] = True
        self.depth_map[ys, xs] = depth
        self.jpp_map[ys, xs] = cost.j / rect.area


@dataclass
class VisitInfo:
    """Snapshot handed to search callbacks right after a block's NS encode."""

    rect: Rect
    depth: int
    patch: CausalPatch
    ns_cost: RdCost
    can_split: bool
    parent: Optional[tuple[RdCost, int]]          # (parent NS cost, parent area)
    top: Optional[tuple[float, int]]              # (j per pixel, depth)
    left: Optional[tuple[float, int]]


@dataclass
class PartitionNode:
    rect: Rect
    depth: int
    ns: RdCost
    qt_j: Optional[float]
    chosen: str
    children: list["PartitionNode"] = field(default_factory=list)

    @property
    def best_j(self) -> float:
        return self.ns.j if self.qt_j is None else min(self.ns.j, self.qt_j)

    def preorder(self):
        yield self
        for c in self.children:
            yield from c.preorder()

    def chosen_leaves(self):
        """Leaves of the partition actually chosen (NS blocks)."""
        if self.chosen == NS:
            yield self
        else:
            for c in self.children:
                yield from c.chosen_leaves()

    def rate_bits(self, split_bits: float) -> float:
        """Total bits of the chosen partition, split signalling included."""
        if self.chosen == NS:
            return self.ns.rate
        return split_bits + sum(c.rate_bits(split_bits) for c in self.children)

    def to_dict(self) -> dict:
        return {
            "x": self.rect.x, "y": self.rect.y, "size": self.rect.w,
            "depth": self.depth,
            "ns": {"rate": self.ns.rate, "dist": self.ns.dist, "j": self.ns.j},
            "qt_j": self.qt_j,
            "chosen": self.chosen,
            "children": [c.to_dict() for c in self.children],
        }


PruneHook = Callable[[VisitInfo], bool]
Visitor = Callable[[VisitInfo], None]


def search(rect: Rect, cfg: CodecConfig, state: SearchState,
           visitor: Visitor | None = None,
           prune: PruneHook | None = None) -> PartitionNode:
    """Rate-distortion search of one CTU, optional split pruning.

    ``visitor`` is called once per visited block, right after its NS
    encode and before any recursion. ``prune`` is consulted at every
    block that could structurally split; returning True forces NS there
    without exploring the subtree.
    """
    if rect.w != rect.h or rect.w != cfg.ctu or rect.w & (rect.w - 1):
        raise ValueError(f"search rect must be a full {cfg.ctu}x{cfg.ctu} CTU, got {rect}")
    return _search_node(rect, 0, cfg, state, visitor, prune, None)


def exhaustive_search(rect: Rect, cfg: CodecConfig, state: SearchState,
                      visitor: Visitor | None = None) -> PartitionNode:
    """Full NS-vs-QT search with no pruning."""
    return search(rect, cfg, state, visitor=visitor, prune=None)


def _search_node(rect, depth, cfg, state, visitor, prune, parent) -> PartitionNode:
    patch = causal_patch(state.work, rect, state.mask)
    ns_cost, recon = encode_ns(patch, cfg)
    state.pixels += rect.area

    can_split = depth < cfg.max_depth
    visit = VisitInfo(rect=rect, depth=depth, patch=patch, ns_cost=ns_cost,
                      can_split=can_split, parent=parent,
                      top=state.neighbor_at(rect.x, rect.y - 1),
                      left=state.neighbor_at(rect.x - 1, rect.y))
    if visitor is not None:
        visitor(visit)
    if can_split and prune is not None and prune(visit):
        can_split = False

    if not can_split:
        node = PartitionNode(rect, depth, ns_cost, None, NS)
        state.commit(rect, depth, recon, ns_cost)
        return node

    half = rect.w // 2
    kids = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):     # raster order
        sub = Rect(rect.x + dx * half, rect.y + dy * half, half, half)
        kids.append(_search_node(sub, depth + 1, cfg, state, visitor, prune,
                                 (ns_cost, rect.area)))
    qt_j = kids[0].best_j + kids[1].best_j + kids[2].best_j + kids[3].best_j \
        + split_signal_cost(cfg)
    if ns_cost.j <= qt_j:                                # tie favours no-split
        node = PartitionNode(rect, depth, ns_cost, qt_j, NS, kids)
        state.commit(rect, depth, recon, ns_cost)        # undo child commits
    else:
        node = PartitionNode(rect, depth, ns_cost, qt_j, QT, kids)
    return node


def qt_cost_table(ns_levels: list[np.ndarray], delta_qt: float) -> float:
    """Top-down split-cost aggregation over a table of no-split costs.

    ns_levels[d] holds the no-split cost of every depth-d node as a
    (2**d, 2**d) array; the deepest level cannot split. Returns the split
    cost of the root: sum over its four children of min(no-split, own
    split cost) plus delta_qt, applied recursively.
    """
    if len(ns_levels) < 2:
        raise ValueError("need at least two depth levels")
    for d, lvl in enumerate(ns_levels):
        if np.asarray(lvl).shape != (1 << d, 1 << d):
            raise ValueError(f"level {d} must have shape {(1 << d, 1 << d)}")

    last = len(ns_levels) - 1

    def qt(d: int, i: int, j: int) -> float:
        acc = 0.0
        for di, dj in ((0, 0), (0, 1), (1, 0), (1, 1)):
            ci, cj = 2 * i + di, 2 * j + dj
            ns_child = float(ns_levels[d + 1][ci, cj])
            if d + 1 == last:
                acc += ns_child
            else:
                acc += min(ns_child, qt(d + 1, ci, cj))
        return acc + delta_qt

    return qt(0, 0, 0)


def psnr(orig: np.ndarray | LumaFrame, recon: np.ndarray | LumaFrame) -> float:
    """Peak signal-to-noise ratio in dB; math.inf marks a lossless match."""
    a = orig.pixels if isinstance(orig, LumaFrame) else np.asarray(orig)
    b = recon.pixels if isinstance(recon, LumaFrame) else np.asarray(recon)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def psnr_of_mse(mse: float) -> float:
    if mse < 0:
        raise ValueError("negative MSE")
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)
