"""Threshold gate turning predicted costs into split-pruning decisions,
and the pruned CTU search that embeds it.

A one-output model predicts the split/no-split cost ratio directly; a
two-output model predicts both scaled costs and the gate compares their
ratio. Rule: prune the split branch when ratio >= threshold. The block's
own coding is never skipped, only the descent below it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import codec
from .codec import CodecConfig, PartitionNode, Rect, SearchState, VisitInfo
from .features import (LAYOUT_HASH, FeatureMask, build_vector,
                       context_from_visit)
from .frame_io import LumaFrame, tile_ctus
from .mlp import MlpModel, ModelError, forward

PRUNE_QT = "PruneQT"
EXPLORE = "Explore"


@dataclass
class ThresholdPolicy:
    model: MlpModel
    threshold: float
    active_sizes: tuple = (32,)

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        self.active_sizes = tuple(sorted(set(int(s) for s in self.active_sizes)))
        if not self.active_sizes:
            raise ValueError("no active block sizes")
        self.mask = FeatureMask.from_names(self.model.meta.get("mask", []))


def decide(prediction: np.ndarray, policy: ThresholdPolicy) -> str:
    """Gate one prediction; inclusive at the threshold."""
    p = np.asarray(prediction, dtype=np.float64).ravel()
    if p.size == 1:
        ratio = float(p[0])
    elif p.size == 2:
        ns, qt = float(p[0]), float(p[1])
        if ns <= 0:
            raise ModelError("non-positive predicted no-split cost")
        ratio = qt / ns
    else:
        raise ModelError(f"prediction must have 1 or 2 entries, got {p.size}")
    return PRUNE_QT if ratio >= policy.threshold else EXPLORE


def pruned_search(rect: Rect, cfg: CodecConfig, state: SearchState,
                  policy: ThresholdPolicy) -> PartitionNode:
    """Quadtree search that consults the policy at active-size blocks.

    Identical to the exhaustive search except that a PruneQT verdict
    forces no-split without exploring the subtree; inactive sizes always
    recurse normally.
    """
    if policy.model.meta.get("layout_hash") != LAYOUT_HASH:
        raise ModelError("model was trained against a different feature layout")

    def hook(visit: VisitInfo) -> bool:
        if visit.rect.w not in policy.active_sizes:
            return False
        ctx = context_from_visit(visit, cfg.qp)
        pred = forward(policy.model, build_vector(ctx, policy.mask))
        return decide(pred, policy) == PRUNE_QT

    return codec.search(rect, cfg, state, prune=hook)


class ComplexityCounter:
    """Per-qp accumulator of processed pixels."""

    def __init__(self):
        self._px: dict[int, int] = {}

    def add(self, qp: int, pixels: int) -> None:
        if pixels < 0:
            raise ValueError("pixel counts cannot be negative")
        self._px[qp] = self._px.get(qp, 0) + int(pixels)

    def get(self, qp: int) -> int:
        return self._px.get(qp, 0)

    def as_dict(self) -> dict[int, int]:
        return dict(self._px)

    def merge(self, other: "ComplexityCounter") -> None:
        for qp, px in other._px.items():
            self.add(qp, px)


@dataclass
class FrameRunResult:
    trees: list
    state: SearchState
    full_tiles: list
    cropped_tiles: int

    @property
    def pixels(self) -> int:
        return self.state.pixels

    def rate_bits(self, split_bits: float) -> float:
        return float(sum(t.rate_bits(split_bits) for t in self.trees))

    def sse(self) -> float:
        """Reconstruction error over the area covered by full CTUs."""
        total = 0.0
        o = self.state.orig.astype(np.float64)
        w = self.state.work.astype(np.float64)
        for tile in self.full_tiles:
            r = tile.rect
            total += float(np.sum((o[r.y:r.y + r.h, r.x:r.x + r.w]
                                   - w[r.y:r.y + r.h, r.x:r.x + r.w]) ** 2))
        return total

    @property
    def covered_area(self) -> int:
        return sum(t.rect.area for t in self.full_tiles)


def encode_frame(frame: LumaFrame, cfg: CodecConfig,
                 policy: ThresholdPolicy | None = None) -> FrameRunResult:
    """Search every full CTU of a frame in raster order under one shared
    state; cropped border tiles are skipped."""
    state = SearchState(frame)
    trees, full = [], []
    cropped = 0
    for tile in tile_ctus(frame, cfg.ctu):
        if tile.cropped:
            cropped += 1
            continue
        full.append(tile)
        if policy is None:
            trees.append(codec.exhaustive_search(tile.rect, cfg, state))
        else:
            trees.append(pruned_search(tile.rect, cfg, state, policy))
    if not full:
        raise ValueError("frame holds no full CTU")
    return FrameRunResult(trees=trees, state=state, full_tiles=full,
                          cropped_tiles=cropped)
