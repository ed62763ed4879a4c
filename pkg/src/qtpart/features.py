"""Fixed 115-entry block descriptor built from coding context and texture.

Index layout:
    0-3     neighbour summary: top/left per-pixel cost, top/left leaf depth
    4-6     parent summary: per-pixel cost, rate, distortion
    7-10    block summary: height/128, width/128, qp/64, own per-pixel
            no-split cost
    11-114  texture: 8 regions x (8 orientation-histogram bins + 5
            co-occurrence statistics)

Texture regions are the block itself, its four quadrants, the top and
left causal reference strips, and the whole reference L laid out as one
horizontal strip. Costs are normalized per pixel, depths by the deepest
allowed split, dimensions by 128 and qp by 64, so entries stay in a small
fixed range regardless of block size. Every texture entry lies in [0, 1]:
histogram bins are L1-normalized, co-occurrence entropy is rescaled by
its 8-level maximum, correlation is mapped through (r + 1) / 2 and
dissimilarity divided by its maximum level distance.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .codec import RdCost, VisitInfo
from .frame_io import CausalPatch, Rect

FEATURE_COUNT = 115
HOG_BINS = 8
GLCM_LEVELS = 8
MAX_TREE_DEPTH = 4
DIM_NORM = 128.0
QP_NORM = 64.0
GLCM_STAT_NAMES = ("entropy", "energy", "homogeneity", "correlation", "dissimilarity")
REGION_NAMES = ("cu", "q0", "q1", "q2", "q3", "top", "left", "lshape")

_NI_SLOTS = slice(0, 4)
_PI_SLOTS = slice(4, 7)
_BI_SLOTS = slice(7, 11)
_SI_BASE = 11
_REGION_WIDTH = HOG_BINS + len(GLCM_STAT_NAMES)


def _build_names() -> tuple[str, ...]:
    names = ["ni_top_j_pp", "ni_left_j_pp", "ni_top_depth", "ni_left_depth",
             "pi_j_pp", "pi_rate_pp", "pi_dist_pp",
             "bi_height", "bi_width", "bi_qp", "bi_ns_j_pp"]
    for region in REGION_NAMES:
        names.extend(f"si_{region}_hog_{k}" for k in range(HOG_BINS))
        names.extend(f"si_{region}_glcm_{s}" for s in GLCM_STAT_NAMES)
    return tuple(names)


FEATURE_NAMES = _build_names()
assert len(FEATURE_NAMES) == FEATURE_COUNT
LAYOUT_HASH = hashlib.sha256("\n".join(FEATURE_NAMES).encode("ascii")).hexdigest()[:16]


def hog8(region: np.ndarray) -> np.ndarray:
    """8-bin unsigned orientation histogram of a 2-D region.

    Gradients use the central-difference kernel [-1, 0, 1] with replicated
    borders; orientations fold into [0, 180) and each pixel votes its
    gradient magnitude into one of 8 equal bins. The histogram is
    L1-normalized, or all zero when the total magnitude is negligible.
    """
    a = np.asarray(region, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 2 or a.shape[1] < 2:
        raise ValueError("region must be at least 2x2")
    padx = np.pad(a, ((0, 0), (1, 1)), mode="edge")
    pady = np.pad(a, ((1, 1), (0, 0)), mode="edge")
    gx = padx[:, 2:] - padx[:, :-2]
    gy = pady[2:, :] - pady[:-2, :]
    mag = np.hypot(gx, gy)
    total = float(mag.sum())
    hist = np.zeros(HOG_BINS, dtype=np.float64)
    if total < 1e-9:
        return hist
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    bins = np.minimum((ang * (HOG_BINS / 180.0)).astype(np.int64), HOG_BINS - 1)
    np.add.at(hist, bins.ravel(), mag.ravel())
    return hist / hist.sum()


def glcm5(region: np.ndarray) -> np.ndarray:
    """Five statistics of the 8-level symmetric horizontal co-occurrence
    matrix: (entropy, energy, homogeneity, correlation, dissimilarity).

    Pixel values quantize to 8 gray levels; each horizontally adjacent
    pair is counted in both directions. Entropy is scaled by 1/6 (its
    8-level maximum) into [0, 1]; correlation is 0 when the level
    variance vanishes and is clamped to [-1, 1] against rounding.
    """
    a = np.asarray(region)
    if a.ndim != 2 or a.shape[0] < 2 or a.shape[1] < 2:
        raise ValueError("region must be at least 2x2")
    lev = a.astype(np.int64) >> 5
    m = np.zeros((GLCM_LEVELS, GLCM_LEVELS), dtype=np.float64)
    l, r = lev[:, :-1].ravel(), lev[:, 1:].ravel()
    np.add.at(m, (l, r), 1.0)
    np.add.at(m, (r, l), 1.0)
    p = m / m.sum()

    idx = np.arange(GLCM_LEVELS, dtype=np.float64)
    ii, jj = idx[:, None], idx[None, :]
    nzp = p[p > 0.0]
    entropy = min(float(-(nzp * np.log2(nzp)).sum()), 6.0) / 6.0
    energy = float((p * p).sum())
    homog = float((p / (1.0 + np.abs(ii - jj))).sum())
    dissim = float((p * np.abs(ii - jj)).sum())
    marg = p.sum(axis=1)                       # symmetric: marginals coincide
    mu = float((idx * marg).sum())
    var = float(((idx - mu) ** 2 * marg).sum())
    if var <= 0.0:
        corr = 0.0
    else:
        corr = float((p * (ii - mu) * (jj - mu)).sum()) / var
        corr = min(1.0, max(-1.0, corr))
    return np.array([entropy, energy, homog, corr, dissim])


@dataclass(frozen=True)
class FeatureMask:
    """Groups of descriptor entries to zero out for ablation runs."""

    ni: bool = False
    pi: bool = False
    bi: bool = False
    hog: bool = False
    glcm: bool = False

    _GROUPS = ("NI", "PI", "BI", "HOG", "GLCM")

    @classmethod
    def none(cls) -> "FeatureMask":
        return cls()

    @classmethod
    def from_names(cls, names) -> "FeatureMask":
        wanted = {str(n).upper() for n in names}
        unknown = wanted - set(cls._GROUPS)
        if unknown:
            raise ValueError(f"unknown feature groups {sorted(unknown)}")
        return cls(ni="NI" in wanted, pi="PI" in wanted, bi="BI" in wanted,
                   hog="HOG" in wanted, glcm="GLCM" in wanted)

    def names(self) -> list[str]:
        flags = (self.ni, self.pi, self.bi, self.hog, self.glcm)
        return [g for g, on in zip(self._GROUPS, flags) if on]


def mask_indices(mask: FeatureMask) -> np.ndarray:
    """Boolean length-115 array, True at entries the mask zeroes."""
    out = np.zeros(FEATURE_COUNT, dtype=bool)
    if mask.ni:
        out[_NI_SLOTS] = True
    if mask.pi:
        out[_PI_SLOTS] = True
    if mask.bi:
        out[_BI_SLOTS] = True
    for r in range(len(REGION_NAMES)):
        base = _SI_BASE + r * _REGION_WIDTH
        if mask.hog:
            out[base:base + HOG_BINS] = True
        if mask.glcm:
            out[base + HOG_BINS:base + _REGION_WIDTH] = True
    return out


@dataclass
class CuContext:
    """Everything known about a block when its descriptor is built."""

    rect: Rect
    depth: int
    qp: int
    ns_cost: RdCost
    patch: CausalPatch
    top_neighbor: Optional[tuple[float, int]] = None    # (j per pixel, depth)
    left_neighbor: Optional[tuple[float, int]] = None
    parent: Optional[tuple[float, float, float]] = None  # per-pixel (j, rate, dist)


def context_from_visit(visit: VisitInfo, qp: int) -> CuContext:
    """Adapt a search callback snapshot into a descriptor context."""
    parent = None
    if visit.parent is not None:
        cost, area = visit.parent
        parent = (cost.j / area, cost.rate / area, cost.dist / area)
    return CuContext(rect=visit.rect, depth=visit.depth, qp=qp,
                     ns_cost=visit.ns_cost, patch=visit.patch,
                     top_neighbor=visit.top, left_neighbor=visit.left,
                     parent=parent)


def _regions(patch: CausalPatch) -> list[np.ndarray]:
    cu = patch.cu
    h2, w2 = cu.shape[0] // 2, cu.shape[1] // 2
    lshape = np.hstack([patch.corner, patch.top, patch.left.T])
    return [cu,
            cu[:h2, :w2], cu[:h2, w2:], cu[h2:, :w2], cu[h2:, w2:],
            patch.top, patch.left, lshape]


def build_vector(ctx: CuContext, mask: FeatureMask | None = None) -> np.ndarray:
    """Assemble the 115-entry descriptor; masked groups stay exactly 0."""
    mask = mask or FeatureMask.none()
    v = np.zeros(FEATURE_COUNT, dtype=np.float64)
    if not mask.ni:
        if ctx.top_neighbor is not None:
            v[0] = ctx.top_neighbor[0]
            v[2] = ctx.top_neighbor[1] / MAX_TREE_DEPTH
        if ctx.left_neighbor is not None:
            v[1] = ctx.left_neighbor[0]
            v[3] = ctx.left_neighbor[1] / MAX_TREE_DEPTH
    if not mask.pi and ctx.parent is not None:
        v[4], v[5], v[6] = ctx.parent
    if not mask.bi:
        v[7] = ctx.rect.h / DIM_NORM
        v[8] = ctx.rect.w / DIM_NORM
        v[9] = ctx.qp / QP_NORM
        v[10] = ctx.ns_cost.j / ctx.rect.area
    if not (mask.hog and mask.glcm):
        for r, region in enumerate(_regions(ctx.patch)):
            base = _SI_BASE + r * _REGION_WIDTH
            if not mask.hog:
                v[base:base + HOG_BINS] = hog8(region)
            if not mask.glcm:
                ent, ene, hom, corr, dis = glcm5(region)
                v[base + HOG_BINS:base + _REGION_WIDTH] = (
                    ent, ene, hom, (corr + 1.0) / 2.0, dis / (GLCM_LEVELS - 1.0))
    return v.astype(np.float32)


def describe_layout() -> list[dict]:
    """One row per descriptor entry: index, name and group."""
    rows = []
    for i, name in enumerate(FEATURE_NAMES):
        if i < 4:
            group = "NI"
        elif i < 7:
            group = "PI"
        elif i < 11:
            group = "BI"
        else:
            group = "SI_HOG" if "_hog_" in name else "SI_GLCM"
        rows.append({"index": i, "name": name, "group": group})
    return rows
