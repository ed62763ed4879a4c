"""Run-level measurement: complexity deltas, rate deltas between RD
curves, threshold sweeps and feature-ablation reports.

Complexity is compared as the mean over qp of the relative drop in
processed pixels. Rate curves are compared by fitting cubic polynomials
of log-rate against PSNR and integrating their gap over the shared PSNR
interval, reported as an equivalent rate change in percent (positive
means the test spends more rate for equal quality).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .codec import CodecConfig, psnr_of_mse
from .dataset import CuRecord
from .decision import ThresholdPolicy, encode_frame
from .features import FeatureMask
from .frame_io import LumaFrame
from .mlp import (DEFAULT_HIDDEN, REDUCED_HIDDEN, MlpModel, TrainHyper,
                  train_regression)

EVAL_QPS = (22, 27, 32, 37)

# name -> (descriptor groups zeroed, hidden widths)
ABLATION_CONFIGS = {
    "none": ((), DEFAULT_HIDDEN),
    "wo_ni_pi_bi": (("NI", "PI", "BI"), DEFAULT_HIDDEN),
    "wo_hog": (("HOG",), DEFAULT_HIDDEN),
    "wo_glcm": (("GLCM",), DEFAULT_HIDDEN),
    "reduced": ((), REDUCED_HIDDEN),
}


@dataclass(frozen=True)
class RdCurve:
    """Four (rate, PSNR) points, one per evaluation qp, sorted by rate."""

    rates: tuple
    psnrs: tuple

    @classmethod
    def from_qp_points(cls, points: Mapping[int, tuple]) -> "RdCurve":
        if sorted(points) != sorted(EVAL_QPS):
            raise ValueError(f"curve needs exactly the qps {EVAL_QPS}")
        by_qp = [points[qp] for qp in sorted(points)]
        rates = [float(r) for r, _ in by_qp]
        psnrs = [float(p) for _, p in by_qp]
        if any(r <= 0 for r in rates):
            raise ValueError("rates must be positive")
        if any(not math.isfinite(p) for p in psnrs):
            raise ValueError("PSNR must be finite (lossless points not allowed)")
        if any(a <= b for a, b in zip(rates[:-1], rates[1:])):
            raise ValueError("rate must strictly decrease as qp increases")
        order = np.argsort(rates)
        return cls(rates=tuple(rates[i] for i in order),
                   psnrs=tuple(psnrs[i] for i in order))


@dataclass(frozen=True)
class TradeoffPoint:
    threshold: float
    delta_c: float                # complexity drop, percent
    bd_rate: float                # equivalent rate change, percent


def delta_c(anchor: Mapping[int, int], test: Mapping[int, int]) -> float:
    """Mean over qp of the relative drop in processed pixels, in percent."""
    if set(anchor) != set(test):
        raise ValueError("anchor and test cover different qp sets")
    if not anchor:
        raise ValueError("empty complexity maps")
    terms = []
    for qp in sorted(anchor):
        a, t = anchor[qp], test[qp]
        if a <= 0:
            raise ValueError(f"anchor pixel count for qp {qp} must be positive")
        terms.append((a - t) / a)
    return 100.0 * float(np.mean(terms))


def _log_fit(curve: RdCurve) -> np.ndarray:
    return np.polyfit(np.asarray(curve.psnrs), np.log10(curve.rates), 3)


def bd_rate(anchor: RdCurve, test: RdCurve) -> float:
    """Average rate change of ``test`` against ``anchor`` in percent."""
    for c in (anchor, test):
        if len(set(c.psnrs)) != len(c.psnrs):
            raise ValueError("degenerate curve: repeated PSNR values")
    lo = max(min(anchor.psnrs), min(test.psnrs))
    hi = min(max(anchor.psnrs), max(test.psnrs))
    if hi <= lo:
        raise ValueError("curves share no PSNR interval")
    p_anchor = np.polyint(_log_fit(anchor))
    p_test = np.polyint(_log_fit(test))
    avg_diff = (np.polyval(p_test, hi) - np.polyval(p_test, lo)
                - np.polyval(p_anchor, hi) + np.polyval(p_anchor, lo)) / (hi - lo)
    return float((10.0 ** avg_diff - 1.0) * 100.0)


def _run_setting(frames: Sequence[LumaFrame], cfg: CodecConfig,
                 model: Optional[MlpModel], active_sizes, threshold,
                 qps) -> dict[int, dict]:
    """Encode all frames at every qp; returns per-qp pixels/rate/psnr."""
    out = {}
    for qp in qps:
        cfg_qp = cfg.at_qp(qp)
        policy = None
        if model is not None:
            policy = ThresholdPolicy(model=model, threshold=threshold,
                                     active_sizes=active_sizes)
        pixels, rate, sse, area = 0, 0.0, 0.0, 0
        for frame in frames:
            res = encode_frame(frame, cfg_qp, policy)
            pixels += res.pixels
            rate += res.rate_bits(cfg_qp.split_bits)
            sse += res.sse()
            area += res.covered_area
        out[qp] = {"pixels": pixels, "rate_bits": rate,
                   "psnr_db": psnr_of_mse(sse / area)}
    return out


def _curve_of(runs: dict[int, dict]) -> RdCurve:
    return RdCurve.from_qp_points(
        {qp: (r["rate_bits"], r["psnr_db"]) for qp, r in runs.items()})


@dataclass
class SweepResult:
    points: list
    rows: list                    # CSV-ready dicts, sorted by threshold
    anchor: dict                  # per-qp pixels/rate/psnr


def sweep(frames: Sequence[LumaFrame], cfg: CodecConfig, model: MlpModel,
          active_sizes: Sequence[int], thresholds: Sequence[float],
          qps: Sequence[int] = EVAL_QPS) -> SweepResult:
    """Measure the complexity/quality trade-off over a threshold grid.

    The anchor is the exhaustive search on the same frames and qps; each
    threshold yields one (delta_c, bd_rate) point.
    """
    if not thresholds:
        raise ValueError("empty threshold list")
    anchor = _run_setting(frames, cfg, None, None, None, qps)
    anchor_curve = _curve_of(anchor)
    anchor_px = {qp: r["pixels"] for qp, r in anchor.items()}

    points, rows = [], []
    for t in sorted(thresholds):
        runs = _run_setting(frames, cfg, model, active_sizes, t, qps)
        dc = delta_c(anchor_px, {qp: r["pixels"] for qp, r in runs.items()})
        bd = bd_rate(anchor_curve, _curve_of(runs))
        points.append(TradeoffPoint(threshold=t, delta_c=dc, bd_rate=bd))
        row = {"threshold": t, "delta_c_pct": dc, "bd_rate_pct": bd}
        for qp in sorted(runs):
            row[f"rate_bits_q{qp}"] = runs[qp]["rate_bits"]
            row[f"psnr_db_q{qp}"] = runs[qp]["psnr_db"]
            row[f"pixels_q{qp}"] = runs[qp]["pixels"]
        rows.append(row)
    return SweepResult(points=points, rows=rows, anchor=anchor)


def interpolate_bd_at(points: Sequence[TradeoffPoint],
                      target_dc: float) -> Optional[float]:
    """Linear bd_rate estimate at a complexity-drop level; None when the
    sweep never reaches it."""
    pts = sorted(points, key=lambda p: p.delta_c)
    for p in pts:
        if p.delta_c == target_dc:
            return p.bd_rate
    for lo, hi in zip(pts[:-1], pts[1:]):
        if lo.delta_c < target_dc < hi.delta_c:
            w = (target_dc - lo.delta_c) / (hi.delta_c - lo.delta_c)
            return lo.bd_rate + w * (hi.bd_rate - lo.bd_rate)
    return None


def run_ablation(records: Sequence[CuRecord], frames: Sequence[LumaFrame],
                 cfg: CodecConfig, thresholds: Sequence[float],
                 configs: Sequence[str] = tuple(ABLATION_CONFIGS),
                 hyper: TrainHyper | None = None, seed: int = 0,
                 active_sizes: Sequence[int] = (32,),
                 qps: Sequence[int] = EVAL_QPS) -> list[dict]:
    """Retrain the size-32 regression under each configuration, sweep it,
    and report bd_rate interpolated at 10% and 20% complexity drops."""
    rows = []
    for name in configs:
        if name not in ABLATION_CONFIGS:
            raise ValueError(f"unknown ablation config {name!r}")
        groups, hidden = ABLATION_CONFIGS[name]
        mask = FeatureMask.from_names(groups) if groups else None
        model, _ = train_regression(records, "N32", hyper=hyper, seed=seed,
                                    mask=mask, hidden=hidden)
        result = sweep(frames, cfg, model, active_sizes, thresholds, qps)
        rows.append({"config": name,
                     "bd_at_dc10": interpolate_bd_at(result.points, 10.0),
                     "bd_at_dc20": interpolate_bd_at(result.points, 20.0)})
    return rows
