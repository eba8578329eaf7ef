"""Feed-forward encoder + linear head with hand-written backprop and Adam.

Layout (rows are samples)::

    h      = tanh(x @ W1.T + b1)        encoder hidden layer
    z      = h @ W2.T + b2              features
    logits = z @ W3.T + b3              head
    p      = softmax(logits)
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .numcore import InvalidArgument, NumericError, softmax

CHECKPOINT_VERSION = 1
PARAM_NAMES = ("enc.w1", "enc.b1", "enc.w2", "enc.b2", "head.w", "head.b")


@dataclass
class ModelParams:
    dims: tuple[int, int, int, int]  # (d_in, hidden, d_z, n_classes)
    tensors: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


@dataclass
class ForwardCache:
    x: np.ndarray
    h: np.ndarray
    z: np.ndarray
    p: np.ndarray


@dataclass
class OptimizerState:
    base_lr: float = 1e-4
    decay: float = 0.95
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    epoch: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return epoch_lr(self.base_lr, self.epoch, self.decay)


def _shapes(dims) -> dict[str, tuple[int, ...]]:
    d_in, hidden, d_z, n_classes = dims
    return {
        "enc.w1": (hidden, d_in),
        "enc.b1": (hidden,),
        "enc.w2": (d_z, hidden),
        "enc.b2": (d_z,),
        "head.w": (n_classes, d_z),
        "head.b": (n_classes,),
    }


def init_params(dims, rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or min(dims) < 1:
        raise InvalidArgument(f"dims must be four positive sizes, got {dims}")
    tensors = {}
    for name, shape in _shapes(dims).items():
        if ".b" in name:
            tensors[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(dims, tensors)


def init_head(params: ModelParams, rng: np.random.Generator) -> ModelParams:
    """Copy of ``params`` with a freshly initialised head (encoder kept)."""
    out = params.copy()
    fresh = init_params(params.dims, rng)
    out.tensors["head.w"] = fresh["head.w"]
    out.tensors["head.b"] = fresh["head.b"]
    return out


def encode(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = np.tanh(x @ params["enc.w1"].T + params["enc.b1"])
    z = h @ params["enc.w2"].T + params["enc.b2"]
    return h, z


def forward(params: ModelParams, x) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Features and class probabilities for one sample or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != params.dims[0]:
        raise InvalidArgument(f"input has {xb.shape[1]} features, model expects {params.dims[0]}")
    h, z = encode(params, xb)
    p = softmax(z @ params["head.w"].T + params["head.b"])
    cache = ForwardCache(xb, h, z, p)
    if single:
        return z[0], p[0], cache
    return z, p, cache


def backward(
    params: ModelParams,
    cache: ForwardCache,
    grad_logits: np.ndarray | None = None,
    grad_features: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Parameter gradients given upstream gradients on logits and/or features.

    Upstream gradients must already carry any batch-averaging factor.
    """
    batch = cache.x.shape[0]
    grads = {name: np.zeros_like(t) for name, t in params.tensors.items()}
    dz = np.zeros_like(cache.z)
    if grad_logits is not None:
        gl = np.atleast_2d(grad_logits)
        if gl.shape != (batch, params.dims[3]):
            raise InvalidArgument(f"logit gradient shape {gl.shape} does not match batch")
        grads["head.w"] = gl.T @ cache.z
        grads["head.b"] = gl.sum(axis=0)
        dz = dz + gl @ params["head.w"]
    if grad_features is not None:
        gf = np.atleast_2d(grad_features)
        if gf.shape != cache.z.shape:
            raise InvalidArgument(f"feature gradient shape {gf.shape} does not match batch")
        dz = dz + gf
    grads["enc.w2"] = dz.T @ cache.h
    grads["enc.b2"] = dz.sum(axis=0)
    dpre = (dz @ params["enc.w2"]) * (1.0 - cache.h**2)
    grads["enc.w1"] = dpre.T @ cache.x
    grads["enc.b1"] = dpre.sum(axis=0)
    return grads


def epoch_lr(base: float, epoch: int, decay: float = 0.95) -> float:
    if epoch < 0:
        raise InvalidArgument("epoch must be non-negative")
    return base * decay**epoch


def adam_step(params: ModelParams, opt: OptimizerState, grads: dict[str, np.ndarray]) -> ModelParams:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}", term=name)
    opt.step += 1
    lr = opt.lr
    c1 = 1.0 - opt.beta1**opt.step
    c2 = 1.0 - opt.beta2**opt.step
    for name, g in grads.items():
        m = opt.m.get(name)
        if m is None:
            m = opt.m[name] = np.zeros_like(g)
            opt.v[name] = np.zeros_like(g)
        v = opt.v[name]
        m *= opt.beta1
        m += (1 - opt.beta1) * g
        v *= opt.beta2
        v += (1 - opt.beta2) * g * g
        params.tensors[name] -= lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params


def backward_and_step(
    params: ModelParams,
    opt: OptimizerState,
    cache: ForwardCache,
    grad_logits: np.ndarray | None = None,
    grad_features: np.ndarray | None = None,
) -> ModelParams:
    grads = backward(params, cache, grad_logits, grad_features)
    if grad_logits is None:
        # head is not part of this objective; leave its moments untouched
        grads.pop("head.w")
        grads.pop("head.b")
    return adam_step(params, opt, grads)


# -- checkpoints -------------------------------------------------------------

def _tensor_doc(t: dict[str, np.ndarray]) -> dict:
    return {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()} for k, v in t.items()}


def _tensor_load(doc: dict) -> dict[str, np.ndarray]:
    return {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in doc.items()}


def save_checkpoint(path, params: ModelParams, opt: OptimizerState | None = None, meta: dict | None = None):
    doc = {
        "format": "noisygrade-checkpoint",
        "version": CHECKPOINT_VERSION,
        "dims": list(params.dims),
        "params": _tensor_doc(params.tensors),
        "meta": meta or {},
    }
    if opt is not None:
        doc["optimizer"] = {
            "base_lr": opt.base_lr, "decay": opt.decay, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps": opt.eps, "step": opt.step, "epoch": opt.epoch,
            "m": _tensor_doc(opt.m), "v": _tensor_doc(opt.v),
        }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[ModelParams, OptimizerState | None, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "noisygrade-checkpoint":
        raise InvalidArgument(f"{path} is not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgument(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = ModelParams(tuple(doc["dims"]), _tensor_load(doc["params"]))
    opt = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        opt = OptimizerState(
            base_lr=o["base_lr"], decay=o["decay"], beta1=o["beta1"], beta2=o["beta2"],
            eps=o["eps"], step=o["step"], epoch=o["epoch"],
            m=_tensor_load(o["m"]), v=_tensor_load(o["v"]),
        )
    return params, opt, doc.get("meta", {})
