"""Training-set construction from exhaustive-search runs.

A record pairs a block's descriptor with its measured no-split and split
costs (per pixel); a trajectory additionally captures the four children
of a 32x32 block for the two-depth value-learning agent. Both persist in
one little-endian binary container:

    magic "QTDS", u16 version, u8 kind (0 records / 1 trajectories),
    16-byte descriptor layout hash, u32 count, then per-field arrays
    (float32 descriptors, float64 costs).

Loading refuses containers whose layout hash does not match the current
descriptor build.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .codec import (NS, QT, CodecConfig, SearchState, exhaustive_search,
                    split_signal_cost)
from .features import LAYOUT_HASH, FeatureMask, build_vector, context_from_visit
from .frame_io import LumaFrame, tile_ctus

MAGIC = b"QTDS"
VERSION = 1
KIND_RECORDS, KIND_TRAJECTORIES = 0, 1
COLLECT_SIZES = (8, 16, 32)


class DatasetError(ValueError):
    """Bad dataset content or container."""


@dataclass
class CuRecord:
    features: np.ndarray          # (115,) float32
    cu_size: int
    qp: int
    ns_j_pp: float                # per-pixel no-split cost
    qt_j_pp: float                # per-pixel split cost
    optimal: str                  # NS or QT, ties to NS

    def __post_init__(self):
        if self.ns_j_pp <= 0 or self.qt_j_pp <= 0:
            raise DatasetError("record costs must be positive")
        want = NS if self.ns_j_pp <= self.qt_j_pp else QT
        if self.optimal != want:
            raise DatasetError("optimal label does not match costs")


@dataclass
class Trajectory:
    """A 32x32 block with its four 16x16 children, costs per pixel."""

    state32: np.ndarray           # (115,) float32
    ns_j_pp: float
    qt_j_pp: float
    delta_qt_pp: float            # split signalling cost / 1024
    child_features: np.ndarray    # (4, 115) float32
    child_ns_j_pp: np.ndarray     # (4,) float64
    child_qt_j_pp: np.ndarray     # (4,) float64

    def __post_init__(self):
        self.child_features = np.asarray(self.child_features, dtype=np.float32)
        self.child_ns_j_pp = np.asarray(self.child_ns_j_pp, dtype=np.float64)
        self.child_qt_j_pp = np.asarray(self.child_qt_j_pp, dtype=np.float64)
        if self.child_features.shape != (4, 115):
            raise DatasetError("trajectory needs exactly 4 child descriptors")
        lhs = self.qt_j_pp * 1024.0
        rhs = float(np.minimum(self.child_ns_j_pp, self.child_qt_j_pp).sum() * 256.0) \
            + self.delta_qt_pp * 1024.0
        if abs(lhs - rhs) > 1e-9 * max(1.0, abs(lhs)):
            raise DatasetError("trajectory split cost inconsistent with children")

    @property
    def optimal(self) -> str:
        return NS if self.ns_j_pp <= self.qt_j_pp else QT


@dataclass
class NormalizationSpec:
    mode: str                     # "ratio" or "median"
    c_median: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("ratio", "median"):
            raise DatasetError(f"unknown normalization mode {self.mode!r}")

    def as_dict(self) -> dict:
        return {"mode": self.mode, "c_median": self.c_median}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationSpec":
        return cls(mode=d["mode"], c_median=d.get("c_median"))


def _validate_sizes(cfg: CodecConfig, sizes: Sequence[int]) -> tuple[int, ...]:
    sizes = tuple(sorted(set(int(s) for s in sizes), reverse=True))
    if not sizes:
        raise DatasetError("no block sizes requested")
    for s in sizes:
        if s not in COLLECT_SIZES:
            raise DatasetError(f"unsupported block size {s}")
        if s > cfg.ctu // 2:
            raise DatasetError(f"size {s} is not a proper sub-block of a {cfg.ctu} CTU")
        depth = (cfg.ctu // s).bit_length() - 1
        if depth >= cfg.max_depth:
            raise DatasetError(
                f"size {s} blocks need max_depth > {depth} to have a split cost")
    return sizes


def _walk_frame(frame: LumaFrame, qp: int, cfg: CodecConfig):
    """Search every full CTU of a frame, yielding (node, descriptor) pairs
    in visit order. Cropped border tiles are skipped."""
    cfg_qp = cfg.at_qp(qp)
    state = SearchState(frame)
    pairs = []
    for tile in tile_ctus(frame, cfg.ctu):
        if tile.cropped:
            continue
        vecs = []
        tree = exhaustive_search(
            tile.rect, cfg_qp, state,
            visitor=lambda v: vecs.append(build_vector(context_from_visit(v, qp))))
        nodes = list(tree.preorder())
        assert len(nodes) == len(vecs)
        pairs.extend(zip(nodes, vecs))
    return pairs, cfg_qp


def collect_records(frames: Sequence[LumaFrame], qps: Sequence[int],
                    cfg: CodecConfig, sizes: Sequence[int],
                    seed: int = 0, jobs: int = 1) -> list[CuRecord]:
    """Exhaustively search every frame at every qp and emit one record per
    encountered block of a requested size. Results are concatenated in
    (frame, qp) order, then shuffled with the given seed."""
    if not frames:
        raise DatasetError("empty frame list")
    sizes = _validate_sizes(cfg, sizes)
    tasks = [(f, qp) for f in frames for qp in qps]

    def one(task):
        frame, qp = task
        out = []
        pairs, _ = _walk_frame(frame, qp, cfg)
        for node, vec in pairs:
            if node.qt_j is None or node.rect.w not in sizes:
                continue
            area = node.rect.area
            ns_pp, qt_pp = node.ns.j / area, node.qt_j / area
            out.append(CuRecord(features=vec, cu_size=node.rect.w, qp=qp,
                                ns_j_pp=ns_pp, qt_j_pp=qt_pp,
                                optimal=NS if ns_pp <= qt_pp else QT))
        return out

    chunks = _run_tasks(one, tasks, jobs)
    records = [r for chunk in chunks for r in chunk]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    return [records[i] for i in order]


def collect_trajectories(frames: Sequence[LumaFrame], qps: Sequence[int],
                         cfg: CodecConfig, seed: int = 0,
                         jobs: int = 1) -> list[Trajectory]:
    """Emit one trajectory per encountered 32x32 block whose 16x16
    children all have split costs."""
    if not frames:
        raise DatasetError("empty frame list")
    depth32 = (cfg.ctu // 32).bit_length() - 1
    if cfg.ctu < 64 or cfg.max_depth < depth32 + 2:
        raise DatasetError(
            f"trajectories need 16x16 split costs: max_depth >= {depth32 + 2} "
            f"with ctu {cfg.ctu}")
    tasks = [(f, qp) for f in frames for qp in qps]

    def one(task):
        frame, qp = task
        out = []
        pairs, cfg_qp = _walk_frame(frame, qp, cfg)
        by_node = {id(n): v for n, v in pairs}
        delta_pp = split_signal_cost(cfg_qp) / 1024.0
        for node, vec in pairs:
            if node.rect.w != 32 or not node.children:
                continue
            if any(c.qt_j is None for c in node.children):
                continue
            out.append(Trajectory(
                state32=vec,
                ns_j_pp=node.ns.j / 1024.0,
                qt_j_pp=node.qt_j / 1024.0,
                delta_qt_pp=delta_pp,
                child_features=np.stack([by_node[id(c)] for c in node.children]),
                child_ns_j_pp=np.array([c.ns.j / 256.0 for c in node.children]),
                child_qt_j_pp=np.array([c.qt_j / 256.0 for c in node.children])))
        return out

    chunks = _run_tasks(one, tasks, jobs)
    trajs = [t for chunk in chunks for t in chunk]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(trajs))
    return [trajs[i] for i in order]


def _run_tasks(fn, tasks, jobs):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _downsample(items: list, labels: list[str], seed, stratum: str) -> list:
    groups: dict[str, list[int]] = {NS: [], QT: []}
    for i, lab in enumerate(labels):
        groups[lab].append(i)
    for lab in (NS, QT):
        if not groups[lab]:
            raise DatasetError(f"class {lab} empty {stratum}")
    n = min(len(groups[NS]), len(groups[QT]))
    rng = np.random.default_rng(seed)
    keep = set()
    for lab in (NS, QT):
        idx = groups[lab]
        if len(idx) > n:
            picked = rng.choice(len(idx), size=n, replace=False)
            keep.update(idx[i] for i in picked)
        else:
            keep.update(idx)
    return [items[i] for i in range(len(items)) if i in keep]


def balance(records: list[CuRecord], seed: int = 0) -> list[CuRecord]:
    """Downsample the majority class to the minority count, independently
    per block size. Original relative order is preserved."""
    out = []
    for size in sorted({r.cu_size for r in records}, reverse=True):
        sub = [r for r in records if r.cu_size == size]
        out.extend(_downsample(sub, [r.optimal for r in sub], seed,
                               f"for size {size}"))
    return out


def balance_trajectories(trajs: list[Trajectory], seed: int = 0) -> list[Trajectory]:
    """Downsample trajectories so both best actions of the 32x32 block are
    equally represented."""
    return _downsample(trajs, [t.optimal for t in trajs], seed, "for trajectories")


def normalize_targets(records: Sequence[CuRecord],
                      spec: NormalizationSpec) -> tuple[np.ndarray, np.ndarray,
                                                        NormalizationSpec]:
    """Build (X, y) training arrays under a normalization scheme.

    ratio: one block size only; y is the split/no-split cost ratio.
    median: y stacks both costs divided by the median of all pooled
    per-pixel costs (computed here when the spec does not pin one).
    """
    if not records:
        raise DatasetError("empty record set")
    X = np.stack([r.features for r in records]).astype(np.float32)
    ns = np.array([r.ns_j_pp for r in records])
    qt = np.array([r.qt_j_pp for r in records])
    if spec.mode == "ratio":
        if len({r.cu_size for r in records}) != 1:
            raise DatasetError("ratio normalization needs a single block size")
        if np.any(ns == 0.0):
            raise DatasetError("zero no-split cost in ratio normalization")
        y = (qt / ns)[:, None]
        return X, y.astype(np.float32), NormalizationSpec("ratio")
    c = spec.c_median
    if c is None:
        c = float(np.median(np.concatenate([ns, qt])))
    if c <= 0:
        raise DatasetError("non-positive median cost")
    y = np.stack([ns / c, qt / c], axis=1)
    return X, y.astype(np.float32), NormalizationSpec("median", c)


def _header(kind: int, count: int) -> bytes:
    return MAGIC + struct.pack("<HB", VERSION, kind) \
        + LAYOUT_HASH.encode("ascii") + struct.pack("<I", count)


def _read_header(data: bytes, want_kind: int) -> tuple[int, int]:
    if len(data) < 27 or data[:4] != MAGIC:
        raise DatasetError("bad magic")
    version, kind = struct.unpack_from("<HB", data, 4)
    if version != VERSION:
        raise DatasetError(f"unsupported version {version}")
    layout = data[7:23].decode("ascii", errors="replace")
    if layout != LAYOUT_HASH:
        raise DatasetError("feature layout mismatch")
    if kind != want_kind:
        raise DatasetError("container holds a different dataset kind")
    (count,) = struct.unpack_from("<I", data, 23)
    return count, 27


def _take(data: bytes, pos: int, dtype, shape) -> tuple[np.ndarray, int]:
    n = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if pos + n > len(data):
        raise DatasetError("truncated dataset container")
    arr = np.frombuffer(data[pos:pos + n], dtype=dtype).reshape(shape)
    return arr, pos + n


def save_records(records: Sequence[CuRecord], path: str | Path) -> None:
    n = len(records)
    feats = np.stack([r.features for r in records]).astype("<f4") if n else \
        np.zeros((0, 115), "<f4")
    parts = [_header(KIND_RECORDS, n), feats.tobytes(),
             np.array([r.cu_size for r in records], "<u2").tobytes(),
             np.array([r.qp for r in records], "<u2").tobytes(),
             np.array([r.ns_j_pp for r in records], "<f8").tobytes(),
             np.array([r.qt_j_pp for r in records], "<f8").tobytes(),
             np.array([1 if r.optimal == QT else 0 for r in records], "u1").tobytes()]
    Path(path).write_bytes(b"".join(parts))


def load_records(path: str | Path) -> list[CuRecord]:
    data = Path(path).read_bytes()
    n, pos = _read_header(data, KIND_RECORDS)
    feats, pos = _take(data, pos, "<f4", (n, 115))
    cu, pos = _take(data, pos, "<u2", (n,))
    qp, pos = _take(data, pos, "<u2", (n,))
    ns, pos = _take(data, pos, "<f8", (n,))
    qt, pos = _take(data, pos, "<f8", (n,))
    opt, pos = _take(data, pos, "u1", (n,))
    return [CuRecord(features=feats[i].copy(), cu_size=int(cu[i]), qp=int(qp[i]),
                     ns_j_pp=float(ns[i]), qt_j_pp=float(qt[i]),
                     optimal=QT if opt[i] else NS) for i in range(n)]


def save_trajectories(trajs: Sequence[Trajectory], path: str | Path) -> None:
    n = len(trajs)
    states = np.stack([t.state32 for t in trajs]).astype("<f4") if n else \
        np.zeros((0, 115), "<f4")
    kids = np.stack([t.child_features for t in trajs]).astype("<f4") if n else \
        np.zeros((0, 4, 115), "<f4")
    parts = [_header(KIND_TRAJECTORIES, n), states.tobytes(),
             np.array([t.ns_j_pp for t in trajs], "<f8").tobytes(),
             np.array([t.qt_j_pp for t in trajs], "<f8").tobytes(),
             np.array([t.delta_qt_pp for t in trajs], "<f8").tobytes(),
             kids.tobytes(),
             np.stack([t.child_ns_j_pp for t in trajs]).astype("<f8").tobytes()
             if n else b"",
             np.stack([t.child_qt_j_pp for t in trajs]).astype("<f8").tobytes()
             if n else b""]
    Path(path).write_bytes(b"".join(parts))


def load_trajectories(path: str | Path) -> list[Trajectory]:
    data = Path(path).read_bytes()
    n, pos = _read_header(data, KIND_TRAJECTORIES)
    states, pos = _take(data, pos, "<f4", (n, 115))
    ns, pos = _take(data, pos, "<f8", (n,))
    qt, pos = _take(data, pos, "<f8", (n,))
    delta, pos = _take(data, pos, "<f8", (n,))
    kids, pos = _take(data, pos, "<f4", (n, 4, 115))
    kns, pos = _take(data, pos, "<f8", (n, 4))
    kqt, pos = _take(data, pos, "<f8", (n, 4))
    return [Trajectory(state32=states[i].copy(), ns_j_pp=float(ns[i]),
                       qt_j_pp=float(qt[i]), delta_qt_pp=float(delta[i]),
                       child_features=kids[i].copy(),
                       child_ns_j_pp=kns[i].copy(), child_qt_j_pp=kqt[i].copy())
            for i in range(n)]
