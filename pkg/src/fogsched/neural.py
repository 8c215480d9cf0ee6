"""Minimal feed-forward network with hand-derived gradients.

One hidden layer, float64 throughout, no autodiff: ``backward`` implements the
exact analytic gradient of a scalar loss given the loss gradient at the
output. Adam is implemented here too, as is the binary checkpoint format used
by every learning agent. numpy supplies array arithmetic only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

ACTIVATIONS = ("tanh", "relu", "linear")


@dataclass
class MlpParams:
    """Weights of a single-hidden-layer MLP: x @ w1 + b1 -> act -> @ w2 + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: str = "tanh"

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def output_dim(self) -> int:
        return self.w2.shape[1]

    def copy(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.b1.copy(), self.w2.copy(),
                         self.b2.copy(), self.activation)

    def arrays(self) -> List[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class Grads:
    """Gradient of a scalar loss w.r.t. every parameter array."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> List[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: MlpParams) -> "AdamState":
        return cls(m=[np.zeros_like(a) for a in params.arrays()],
                   v=[np.zeros_like(a) for a in params.arrays()])


def init_mlp(input_dim: int, hidden_dim: int, output_dim: int,
             activation: str, rng: np.random.Generator) -> MlpParams:
    """Seeded init: every weight and bias uniform in +-1/sqrt(fan_in)."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    if input_dim < 1 or hidden_dim < 1 or output_dim < 1:
        raise ValueError("network dimensions must be positive")
    s1 = 1.0 / np.sqrt(input_dim)
    s2 = 1.0 / np.sqrt(hidden_dim)
    return MlpParams(
        w1=rng.uniform(-s1, s1, size=(input_dim, hidden_dim)),
        b1=rng.uniform(-s1, s1, size=hidden_dim),
        w2=rng.uniform(-s2, s2, size=(hidden_dim, output_dim)),
        b2=rng.uniform(-s2, s2, size=output_dim),
        activation=activation,
    )


def _activate(pre: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(pre)
    if kind == "relu":
        return np.maximum(pre, 0.0)
    return pre


def _activate_grad(pre: np.ndarray, hidden: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - hidden * hidden
    if kind == "relu":
        return (pre > 0.0).astype(np.float64)
    return np.ones_like(pre)


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass; accepts a single vector or a batch (rows = samples)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    pre = xb @ params.w1 + params.b1
    hidden = _activate(pre, params.activation)
    out = hidden @ params.w2 + params.b2
    return out[0] if single else out


def backward(params: MlpParams, x: np.ndarray, out_grad: np.ndarray) -> Grads:
    """Exact gradient of loss w.r.t. parameters given dLoss/dOutput.

    Batched inputs produce gradients summed over the batch, matching a loss
    that sums per-sample terms.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(out_grad, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        g = g[None, :]
    pre = x @ params.w1 + params.b1
    hidden = _activate(pre, params.activation)
    dhidden = (g @ params.w2.T) * _activate_grad(pre, hidden, params.activation)
    return Grads(
        w1=x.T @ dhidden,
        b1=dhidden.sum(axis=0),
        w2=hidden.T @ g,
        b2=g.sum(axis=0),
    )


def adam_step(params: MlpParams, grads: Grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> MlpParams:
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically safe softmax (max subtraction); rows for batched input."""
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    shifted = zb - zb.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if single else p


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    shifted = zb - zb.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    return out[0] if single else out


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats, with 0 * ln 0 = 0; rows for batched input."""
    p = np.asarray(probs, dtype=np.float64)
    single = p.ndim == 1
    pb = p[None, :] if single else p
    terms = np.where(pb > 0.0, pb * np.log(np.where(pb > 0.0, pb, 1.0)), 0.0)
    h = -terms.sum(axis=1)
    return float(h[0]) if single else h


def finite_difference_check(params: MlpParams, x: np.ndarray,
                            loss_fn: Callable[[np.ndarray], float],
                            loss_grad_fn: Callable[[np.ndarray], np.ndarray],
                            epsilon: float = 1e-5) -> float:
    """Max relative error of the analytic gradient vs central differences.

    ``loss_fn`` maps the network output to a scalar, ``loss_grad_fn`` to that
    scalar's gradient w.r.t. the output. Every parameter entry is perturbed.
    """
    out = forward(params, x)
    analytic = backward(params, x, loss_grad_fn(out))
    worst = 0.0
    for p, g in zip(params.arrays(), analytic.arrays()):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            keep = flat_p[i]
            flat_p[i] = keep + epsilon
            hi = loss_fn(forward(params, x))
            flat_p[i] = keep - epsilon
            lo = loss_fn(forward(params, x))
            flat_p[i] = keep
            numeric = (hi - lo) / (2.0 * epsilon)
            denom = max(abs(numeric), abs(flat_g[i]), 1e-8)
            worst = max(worst, abs(numeric - flat_g[i]) / denom)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
#
# Self-describing flat binary file:
#   magic "FSCK", u32 version, u32 header length, JSON header (meta dict plus
#   ordered section names), then one "MLP1" block per section: u32 dims
#   (in/hidden/out), u8 activation tag, u8 has-optimizer flag, u64 Adam step,
#   parameter arrays and, when present, Adam m/v moments, all float64
#   little-endian row-major. Round trips are bit-exact.

_MAGIC = b"FSCK"
_SECTION_MAGIC = b"MLP1"
_VERSION = 1
_ACT_TAG = {name: i for i, name in enumerate(ACTIVATIONS)}
_TAG_ACT = {i: name for name, i in _ACT_TAG.items()}


def _write_array(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh, shape: Tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count * 8)
    if len(raw) != count * 8:
        raise ValueError("truncated checkpoint")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def save_checkpoint(path: str, meta: Dict,
                    sections: List[Tuple[str, MlpParams, Optional[AdamState]]]) -> None:
    """Write a multi-network checkpoint; ``meta`` must be JSON-serializable."""
    header = dict(meta)
    header["sections"] = [name for name, _, _ in sections]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        for _, params, adam in sections:
            fh.write(_SECTION_MAGIC)
            fh.write(struct.pack("<IIIBBQ", params.input_dim, params.hidden_dim,
                                 params.output_dim, _ACT_TAG[params.activation],
                                 1 if adam is not None else 0,
                                 adam.step if adam is not None else 0))
            for arr in params.arrays():
                _write_array(fh, arr)
            if adam is not None:
                for arr in adam.m + adam.v:
                    _write_array(fh, arr)


def load_checkpoint(path: str) -> Tuple[Dict, Dict[str, Tuple[MlpParams, Optional[AdamState]]]]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a fogsched checkpoint")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        sections: Dict[str, Tuple[MlpParams, Optional[AdamState]]] = {}
        for name in header["sections"]:
            if fh.read(4) != _SECTION_MAGIC:
                raise ValueError("corrupt checkpoint section")
            din, dh, dout, act, has_adam, step = struct.unpack("<IIIBBQ", fh.read(22))
            params = MlpParams(
                w1=_read_array(fh, (din, dh)),
                b1=_read_array(fh, (dh,)),
                w2=_read_array(fh, (dh, dout)),
                b2=_read_array(fh, (dout,)),
                activation=_TAG_ACT[act],
            )
            adam = None
            if has_adam:
                shapes = [(din, dh), (dh,), (dh, dout), (dout,)]
                m = [_read_array(fh, s) for s in shapes]
                v = [_read_array(fh, s) for s in shapes]
                adam = AdamState(m=m, v=v, step=step)
            sections[name] = (params, adam)
    meta = {k: v for k, v in header.items() if k != "sections"}
    return meta, sections
