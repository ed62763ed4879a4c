"""Small fully connected network with reverse-mode gradients and Adam.

Hidden layers are rectified, the output layer is linear, and the loss is
mean squared error over every output. Parameters live in float32 by
default; a float64 mode exists for finite-difference gradient checks.
Models persist as a JSON header (magic "QTNN") followed by the raw
parameter blob.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import CuRecord, DatasetError, NormalizationSpec, normalize_targets
from .features import FEATURE_COUNT, LAYOUT_HASH, FeatureMask, mask_indices

MODEL_MAGIC = b"QTNN"
DEFAULT_HIDDEN = (256, 256, 128)
REDUCED_HIDDEN = (128, 128, 64)
NORM_BLOWUP_LIMIT = 1e3

# block sizes each regression variant trains on; one size means the target
# is the split/no-split ratio, several mean median-scaled cost pairs
VARIANT_SIZES = {
    "N8": (8,),
    "N16": (16,),
    "N32": (32,),
    "N32_16": (32, 16),
    "N32_16_8": (32, 16, 8),
}


class ModelError(RuntimeError):
    """Bad model state, container or usage."""


@dataclass
class MlpModel:
    weights: list                 # layer l: (n_in, n_out) arrays
    biases: list                  # layer l: (n_out,) arrays
    meta: dict = field(default_factory=dict)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dtype(self):
        return self.weights[0].dtype


def init_model(hidden: Sequence[int] = DEFAULT_HIDDEN, out: int = 1,
               in_dim: int = FEATURE_COUNT, seed=0,
               dtype=np.float32, meta: Optional[dict] = None) -> MlpModel:
    """He-initialized network; identical seeds give identical models."""
    if out not in (1, 2):
        raise ModelError("output width must be 1 or 2")
    if any(int(h) <= 0 for h in hidden) or in_dim <= 0:
        raise ModelError("layer widths must be positive")
    chain = [int(in_dim)] + [int(h) for h in hidden] + [int(out)]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for a, b in zip(chain[:-1], chain[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / a), (a, b)).astype(dtype))
        biases.append(np.zeros(b, dtype=dtype))
    base_meta = {"variant": None, "normalization": None,
                 "layout_hash": LAYOUT_HASH, "seed": None,
                 "mask": [], "hidden": [int(h) for h in hidden], "out": int(out)}
    if meta:
        base_meta.update(meta)
    return MlpModel(weights=weights, biases=biases, meta=base_meta)


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Batch or single-vector forward pass."""
    out, _ = forward_cached(model, x)
    return out


def forward_cached(model: MlpModel, x: np.ndarray):
    a = np.asarray(x, dtype=model.dtype)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.shape[1] != model.in_dim:
        raise ModelError(f"input width {a.shape[1]} != model input {model.in_dim}")
    acts, pres = [a], []
    n_layers = len(model.weights)
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        if l < n_layers - 1:
            pres.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        else:
            a = z
    out = a[0] if single else a
    return out, {"acts": acts, "pres": pres, "single": single}


def backward(model: MlpModel, cache: dict, dout: np.ndarray) -> list:
    """Gradients of a scalar loss given d(loss)/d(output); returns
    [(dW, db), ...] in layer order."""
    delta = np.atleast_2d(np.asarray(dout, dtype=model.dtype))
    grads = [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        a_prev = cache["acts"][l]
        grads[l] = (a_prev.T @ delta, delta.sum(axis=0))
        if l > 0:
            delta = (delta @ model.weights[l].T) * (cache["pres"][l - 1] > 0)
    return grads


def loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """Mean squared error over batch and outputs, with its gradients."""
    out, cache = forward_cached(model, x)
    out2 = np.atleast_2d(out)
    t = np.asarray(y, dtype=model.dtype).reshape(out2.shape)
    diff = out2 - t
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    dout = (2.0 / diff.size) * diff
    return loss, backward(model, cache, dout)


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(model: MlpModel, lr: float = 1e-5, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = lambda: [(np.zeros_like(w), np.zeros_like(b))
                     for w, b in zip(model.weights, model.biases)]
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, m=zeros(), v=zeros())


def adam_step(model: MlpModel, grads: list, state: AdamState) -> None:
    """One in-place Adam update with bias correction."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for l, (dw, db) in enumerate(grads):
        for park, grad, (m, v) in (("weights", dw, (state.m[l][0], state.v[l][0])),
                                   ("biases", db, (state.m[l][1], state.v[l][1]))):
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            upd = (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
            getattr(model, park)[l] -= upd.astype(model.dtype)


def layer_operator_norms(model: MlpModel) -> list[float]:
    """Spectral norm of each weight matrix (forward Lipschitz factors).

    A layer holding non-finite values reports an infinite norm; SVD
    cannot run on it and the scale check must still trip.
    """
    norms = []
    for w in model.weights:
        w64 = w.astype(np.float64)
        if not np.isfinite(w64).all():
            norms.append(math.inf)
        else:
            norms.append(float(np.linalg.norm(w64, 2)))
    return norms


def operator_norm_bound(model: MlpModel) -> float:
    """Product of layer spectral norms, an upper Lipschitz bound."""
    return float(np.prod(layer_operator_norms(model)))


def check_parameter_scale(model: MlpModel) -> None:
    norms = layer_operator_norms(model)
    if max(norms) > NORM_BLOWUP_LIMIT:
        raise ModelError(f"parameter blow-up: layer operator norms {norms}")


@dataclass
class TrainHyper:
    lr: float = 1e-5
    batch: int = 512
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.batch <= 0 or self.epochs <= 0:
            raise ValueError("lr, batch and epochs must be positive")


def train_regression(records: Sequence[CuRecord], variant: str,
                     hyper: TrainHyper | None = None, seed: int = 0,
                     mask: FeatureMask | None = None,
                     hidden: Sequence[int] = DEFAULT_HIDDEN):
    """Train a cost-regression model on balanced records.

    Returns (model, per-epoch mean training loss). The dataset's block
    sizes must be exactly the variant's sizes.
    """
    hyper = hyper or TrainHyper()
    if variant not in VARIANT_SIZES:
        raise ModelError(f"unknown variant {variant!r}")
    sizes = VARIANT_SIZES[variant]
    present = {r.cu_size for r in records}
    if present != set(sizes):
        raise ModelError(
            f"variant {variant} expects block sizes {sorted(sizes)}, "
            f"dataset has {sorted(present)}")
    out = 1 if len(sizes) == 1 else 2
    mode = "ratio" if out == 1 else "median"
    X, y, norm = normalize_targets(records, NormalizationSpec(mode))
    if mask is not None:
        X = X.copy()
        X[:, mask_indices(mask)] = 0.0

    root = np.random.SeedSequence(seed)
    init_seq, shuffle_seq = root.spawn(2)
    model = init_model(hidden=hidden, out=out, seed=init_seq)
    rng = np.random.default_rng(shuffle_seq)
    adam = adam_init(model, lr=hyper.lr, beta1=hyper.beta1, beta2=hyper.beta2,
                     eps=hyper.eps)

    n = len(records)
    history = []
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch):
            idx = order[start:start + hyper.batch]
            loss, grads = loss_and_grads(model, X[idx], y[idx])
            adam_step(model, grads, adam)
            total += loss * len(idx)
        history.append(total / n)
        check_parameter_scale(model)

    model.meta.update({"variant": variant, "normalization": norm.as_dict(),
                       "layout_hash": LAYOUT_HASH, "seed": seed,
                       "mask": mask.names() if mask else [],
                       "hidden": [int(h) for h in hidden], "out": out})
    return model, history


def save_model(model: MlpModel, path: str | Path) -> None:
    header = {
        "layers": model.layer_sizes,
        "dtype": str(np.dtype(model.dtype)),
        "meta": model.meta,
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    code = "<f4" if np.dtype(model.dtype) == np.float32 else "<f8"
    blob = b"".join(p.astype(code).tobytes()
                    for w, b in zip(model.weights, model.biases) for p in (w, b))
    Path(path).write_bytes(MODEL_MAGIC + struct.pack("<I", len(hjson)) + hjson + blob)


def load_model(path: str | Path) -> MlpModel:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != MODEL_MAGIC:
        raise ModelError("bad model magic")
    (hlen,) = struct.unpack_from("<I", data, 4)
    try:
        header = json.loads(data[8:8 + hlen])
        layers = [int(v) for v in header["layers"]]
        dtype = np.dtype(header["dtype"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelError("unreadable model header") from exc
    if dtype not in (np.float32, np.float64):
        raise ModelError(f"unsupported parameter dtype {dtype}")
    code = "<f4" if dtype == np.float32 else "<f8"
    expected = sum(a * b + b for a, b in zip(layers[:-1], layers[1:]))
    blob = data[8 + hlen:]
    if len(blob) != expected * dtype.itemsize:
        raise ModelError("parameter blob size does not match header")
    flat = np.frombuffer(blob, dtype=code)
    weights, biases, pos = [], [], 0
    for a, b in zip(layers[:-1], layers[1:]):
        weights.append(flat[pos:pos + a * b].reshape(a, b).astype(dtype))
        pos += a * b
        biases.append(flat[pos:pos + b].astype(dtype))
        pos += b
    return MlpModel(weights=weights, biases=biases, meta=header.get("meta", {}))
