"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 data error (missing or malformed
inputs), 4 model error. Every command that writes artifacts also writes
the resolved configuration next to them as JSON.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .codec import CodecConfig
from .dataset import (DatasetError, balance, balance_trajectories,
                      collect_records, collect_trajectories, load_records,
                      load_trajectories, save_records, save_trajectories)
from .decision import ThresholdPolicy, encode_frame
from .dqn import DqnHyper, train_dqn
from .features import LAYOUT_HASH, FeatureMask, describe_layout
from .frame_io import FrameFormatError, load_frame
from .metrics import (ABLATION_CONFIGS, EVAL_QPS, RdCurve, bd_rate,
                      run_ablation, sweep)
from .mlp import (DEFAULT_HIDDEN, ModelError, TrainHyper, load_model,
                  save_model, train_regression)

DEFAULT_QPS = "22,27,32,37"


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def _load_frames(paths, fmt, width, height):
    return [load_frame(p, fmt, width, height) for p in paths]


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    return value


def _write_config(target: Path, args: argparse.Namespace) -> None:
    """Dump the resolved arguments next to the command's outputs."""
    resolved = {k: _jsonable(v) for k, v in sorted(vars(args).items())
                if k != "func"}
    if target.is_dir():
        path = target / "config.json"
    else:
        path = target.with_name(target.name + ".config.json")
    path.write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")


def _psnr_value(p: float):
    return "lossless" if math.isinf(p) else p


def _codec_config(args) -> CodecConfig:
    return CodecConfig(ctu=args.ctu, max_depth=args.max_depth,
                       qp=getattr(args, "qp", 32), split_bits=args.split_bits)


def _add_frame_args(p, many: bool):
    if many:
        p.add_argument("--frames", nargs="+", required=True, help="input frame files")
    else:
        p.add_argument("--frame", required=True, help="input frame file")
    p.add_argument("--format", default="pgm8", choices=("pgm8", "rawy"))
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)


def _add_codec_args(p):
    p.add_argument("--ctu", type=int, default=64)
    p.add_argument("--max-depth", type=int, default=3)
    p.add_argument("--split-bits", type=float, default=2.0)


def cmd_features_describe(args) -> int:
    obj = {"layout_hash": LAYOUT_HASH, "count": len(describe_layout()),
           "features": describe_layout()}
    text = json.dumps(obj, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
        _write_config(Path(args.out), args)
    return 0


def cmd_dataset_build(args) -> int:
    frames = _load_frames(args.frames, args.format, args.width, args.height)
    cfg = _codec_config(args)
    records = collect_records(frames, _ints(args.qps), cfg, _ints(args.sizes),
                              seed=args.seed, jobs=args.jobs)
    if args.balance:
        records = balance(records, seed=args.seed)
    save_records(records, args.out)
    _write_config(Path(args.out), args)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_dataset_trajectories(args) -> int:
    frames = _load_frames(args.frames, args.format, args.width, args.height)
    cfg = _codec_config(args)
    trajs = collect_trajectories(frames, _ints(args.qps), cfg,
                                 seed=args.seed, jobs=args.jobs)
    if args.balance:
        trajs = balance_trajectories(trajs, seed=args.seed)
    save_trajectories(trajs, args.out)
    _write_config(Path(args.out), args)
    print(f"wrote {len(trajs)} trajectories to {args.out}")
    return 0


def cmd_train_reg(args) -> int:
    records = load_records(args.dataset)
    hyper = TrainHyper(lr=args.lr, batch=args.batch, epochs=args.epochs)
    mask = FeatureMask.from_names(args.mask.split(",")) if args.mask else None
    hidden = tuple(_ints(args.hidden))
    model, history = train_regression(records, args.variant, hyper=hyper,
                                      seed=args.seed, mask=mask, hidden=hidden)
    save_model(model, args.out)
    loss_path = Path(args.out).with_name(Path(args.out).name + ".loss.csv")
    with loss_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss"])
        for epoch, loss in enumerate(history):
            w.writerow([epoch, loss])
    _write_config(Path(args.out), args)
    print(f"trained {args.variant} on {len(records)} records, "
          f"final loss {history[-1]:.6g}")
    return 0


def cmd_train_dqn(args) -> int:
    trajs = load_trajectories(args.trajectories)
    hyper = DqnHyper(steps=args.steps, batch=args.batch, capacity=args.capacity,
                     lr=args.lr, gamma=args.gamma, eps_anneal=args.eps_anneal,
                     hidden=tuple(_ints(args.hidden)))
    model, diag = train_dqn(trajs, hyper, seed=args.seed)
    save_model(model, args.out)
    diag_path = Path(args.out).with_name(Path(args.out).name + ".diag.csv")
    with diag_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "td_error", "epsilon"])
        for row in diag:
            w.writerow(list(row))
    _write_config(Path(args.out), args)
    print(f"trained value model on {len(trajs)} trajectories, "
          f"{args.steps} steps")
    return 0


def cmd_encode(args) -> int:
    frame = load_frame(args.frame, args.format, args.width, args.height)
    cfg = _codec_config(args)
    policy = None
    if args.model:
        if args.threshold is None:
            raise DatasetError("--model requires --threshold")
        policy = ThresholdPolicy(model=load_model(args.model),
                                 threshold=args.threshold,
                                 active_sizes=tuple(_ints(args.active_sizes)))
    res = encode_frame(frame, cfg, policy)
    from .codec import psnr_of_mse
    report = {
        "qp": args.qp,
        "threshold": args.threshold if policy else None,
        "processed_pixels": res.pixels,
        "total_rate_bits": res.rate_bits(cfg.split_bits),
        "psnr_db": _psnr_value(psnr_of_mse(res.sse() / res.covered_area)),
    }
    Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.tree:
        trees = {"ctus": [t.to_dict() for t in res.trees]}
        Path(args.tree).write_text(json.dumps(trees, sort_keys=True) + "\n")
    _write_config(Path(args.out), args)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    frames = _load_frames(args.frames, args.format, args.width, args.height)
    cfg = _codec_config(args)
    model = load_model(args.model)
    result = sweep(frames, cfg, model, tuple(_ints(args.active_sizes)),
                   _floats(args.thresholds), qps=tuple(_ints(args.qps)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if result.rows:
        with (out / "sweep.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(result.rows[0]))
            w.writeheader()
            w.writerows(result.rows)
    summary = {
        "anchor": {str(qp): result.anchor[qp] for qp in sorted(result.anchor)},
        "points": [{"threshold": p.threshold, "delta_c_pct": p.delta_c,
                    "bd_rate_pct": p.bd_rate} for p in result.points],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_config(out, args)
    print(f"swept {len(result.points)} thresholds; results in {out}")
    return 0


def cmd_bdrate(args) -> int:
    def read_curve(path):
        raw = json.loads(Path(path).read_text())
        return RdCurve.from_qp_points({int(k): tuple(v) for k, v in raw.items()})

    value = bd_rate(read_curve(args.anchor), read_curve(args.test))
    print(f"{value:.6f}")
    return 0


def cmd_ablate(args) -> int:
    records = load_records(args.dataset)
    frames = _load_frames(args.frames, args.format, args.width, args.height)
    cfg = _codec_config(args)
    hyper = TrainHyper(lr=args.lr, batch=args.batch, epochs=args.epochs)
    configs = args.configs.split(",") if args.configs else list(ABLATION_CONFIGS)
    rows = run_ablation(records, frames, cfg, _floats(args.thresholds),
                        configs=configs, hyper=hyper, seed=args.seed,
                        active_sizes=tuple(_ints(args.active_sizes)),
                        qps=tuple(_ints(args.qps)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "ablation.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "bd_at_dc10", "bd_at_dc20"])
        for row in rows:
            w.writerow([row["config"],
                        "unreachable" if row["bd_at_dc10"] is None else row["bd_at_dc10"],
                        "unreachable" if row["bd_at_dc20"] is None else row["bd_at_dc20"]])
    _write_config(out, args)
    print(f"ablation over {len(rows)} configs; results in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qtpart",
        description="toy intra codec with learned quadtree split pruning")
    sub = parser.add_subparsers(dest="command")

    p_feat = sub.add_parser("features", help="descriptor utilities")
    feat_sub = p_feat.add_subparsers(dest="subcommand")
    p = feat_sub.add_parser("describe", help="print the 115-entry layout")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_features_describe)

    p_data = sub.add_parser("dataset", help="build training sets")
    data_sub = p_data.add_subparsers(dest="subcommand")
    for name, fn, extra_sizes in (("build", cmd_dataset_build, True),
                                  ("trajectories", cmd_dataset_trajectories, False)):
        p = data_sub.add_parser(name)
        _add_frame_args(p, many=True)
        _add_codec_args(p)
        p.add_argument("--qps", default=DEFAULT_QPS)
        if extra_sizes:
            p.add_argument("--sizes", default="32")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--balance", action=argparse.BooleanOptionalAction, default=True)
        p.add_argument("--out", required=True)
        p.set_defaults(func=fn)

    p_train = sub.add_parser("train", help="fit models")
    train_sub = p_train.add_subparsers(dest="subcommand")
    p = train_sub.add_parser("reg", help="cost regression")
    p.add_argument("--dataset", required=True)
    p.add_argument("--variant", default="N32",
                   choices=("N8", "N16", "N32", "N32_16", "N32_16_8"))
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask", default=None, help="feature groups to zero, e.g. NI,HOG")
    p.add_argument("--hidden", default=",".join(str(h) for h in DEFAULT_HIDDEN))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_reg)

    p = train_sub.add_parser("dqn", help="two-depth value learning")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--capacity", type=int, default=100_000)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--eps-anneal", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", default=",".join(str(h) for h in DEFAULT_HIDDEN))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_dqn)

    p = sub.add_parser("encode", help="encode one frame")
    _add_frame_args(p, many=False)
    _add_codec_args(p)
    p.add_argument("--qp", type=int, default=32)
    p.add_argument("--model", default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--active-sizes", default="32")
    p.add_argument("--tree", default=None, help="also dump the partition tree JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("sweep", help="threshold sweep against the exhaustive anchor")
    _add_frame_args(p, many=True)
    _add_codec_args(p)
    p.add_argument("--qps", default=DEFAULT_QPS)
    p.add_argument("--model", required=True)
    p.add_argument("--thresholds", required=True)
    p.add_argument("--active-sizes", default="32")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bdrate", help="rate delta between two stored curves")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("ablate", help="feature ablation report")
    p.add_argument("--dataset", required=True)
    _add_frame_args(p, many=True)
    _add_codec_args(p)
    p.add_argument("--qps", default=DEFAULT_QPS)
    p.add_argument("--thresholds", required=True)
    p.add_argument("--configs", default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--active-sizes", default="32")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args) or 0
    except (FrameFormatError, DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
