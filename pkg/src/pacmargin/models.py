"""Linear, SHEL, partially-stochastic SHEL and ReLU networks.

SHEL ("single hidden erf layer") networks compute
``F(x) = V erf(U x / (sqrt(2) ||x||_2))``. None of the models carry biases.
Batched inputs are row-major: ``X`` has shape ``(n, d)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .numcore import DomainError, ParseError, erf

__all__ = [
    "LinearModel",
    "ShelModel",
    "PartialShelModel",
    "ReluModel",
    "StateError",
    "shel_forward",
    "shel_backward",
    "partial_shel_forward",
    "partial_shel_backward",
    "relu_forward",
    "sample_shel_proxy",
    "init_shel",
    "init_partial_shel",
    "to_bytes",
    "from_bytes",
    "save_model",
    "load_model",
]

FEATURE_NORM_FLOOR = 1e-12
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


class StateError(RuntimeError):
    """A model is used before a required quantity has been set."""


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


@dataclass
class LinearModel:
    w: np.ndarray
    norm_kind: str = "L2"

    def __post_init__(self):
        self.w = _f64(self.w).ravel()
        if self.norm_kind not in ("L2", "L1"):
            raise DomainError(f"norm_kind must be L2 or L1, got {self.norm_kind!r}")

    def norm(self) -> float:
        return float(np.linalg.norm(self.w, 2 if self.norm_kind == "L2" else 1))

    def validate(self, tol: float = 1e-12) -> None:
        if self.norm() > 1.0 + tol:
            raise DomainError(f"{self.norm_kind} norm of w is {self.norm()!r} > 1")

    def scores(self, x):
        return _f64(x) @ self.w


@dataclass
class ShelModel:
    """``U`` is ``(K, d)``; ``V`` is ``(c, K)``, or a length-``K`` vector in binary mode."""

    U: np.ndarray
    V: np.ndarray
    U0: np.ndarray

    def __post_init__(self):
        self.U = _f64(self.U)
        self.V = _f64(self.V)
        self.U0 = _f64(self.U0)
        if self.U.ndim != 2 or self.U0.shape != self.U.shape:
            raise DomainError("U and U0 must be matrices of identical shape")
        if self.V.shape[-1] != self.U.shape[0] or self.V.ndim not in (1, 2):
            raise DomainError("V must have one column per hidden unit")

    @property
    def binary(self) -> bool:
        return self.V.ndim == 1

    @property
    def width(self) -> int:
        return self.U.shape[0]

    @property
    def input_dim(self) -> int:
        return self.U.shape[1]

    @property
    def classes(self) -> int:
        return 1 if self.binary else self.V.shape[0]

    @property
    def v_inf(self) -> float:
        return float(np.max(np.abs(self.V)))

    def copy(self) -> "ShelModel":
        return ShelModel(self.U.copy(), self.V.copy(), self.U0.copy())


@dataclass
class PartialShelModel:
    """Three dense ReLU feature layers feeding a SHEL head.

    Feature weights are Gaussian with means ``layers`` and standard deviation
    ``sigma`` when evaluated stochastically; ``sigma`` stays ``None`` until
    calibrated.
    """

    layers: list
    priors: list
    head: ShelModel
    sigma: float | None = None

    def __post_init__(self):
        self.layers = [_f64(w) for w in self.layers]
        self.priors = [_f64(w) for w in self.priors]
        if len(self.layers) != len(self.priors):
            raise DomainError("one prior per feature layer")
        dim = None
        for w, w0 in zip(self.layers, self.priors):
            if w.ndim != 2 or w.shape != w0.shape:
                raise DomainError("feature layers and priors must be matching matrices")
            if dim is not None and w.shape[1] != dim:
                raise DomainError("feature layer shapes do not chain")
            dim = w.shape[0]
        if dim is not None and dim != self.head.input_dim:
            raise DomainError("head input dimension does not match the last feature layer")

    @property
    def input_dim(self) -> int:
        return self.layers[0].shape[1]

    def drift_sq(self) -> float:
        from .numcore import frobenius_sq

        return math.fsum(frobenius_sq(w - w0) for w, w0 in zip(self.layers, self.priors))

    def copy(self) -> "PartialShelModel":
        return PartialShelModel(
            [w.copy() for w in self.layers],
            [w.copy() for w in self.priors],
            self.head.copy(),
            self.sigma,
        )


@dataclass
class ReluModel:
    """Feed-forward ReLU network ``W_d relu(... relu(W_1 x))``."""

    layers: list
    priors: list
    R: float

    def __post_init__(self):
        self.layers = [_f64(w) for w in self.layers]
        if not self.priors:
            self.priors = [np.zeros_like(w) for w in self.layers]
        self.priors = [_f64(w) for w in self.priors]
        if not self.layers or len(self.layers) != len(self.priors):
            raise DomainError("need at least one layer and one prior per layer")
        for i, (w, w0) in enumerate(zip(self.layers, self.priors)):
            if w.ndim != 2 or w.shape != w0.shape:
                raise DomainError(f"layer {i}: weight and prior must be matching matrices")
            if i and w.shape[1] != self.layers[i - 1].shape[0]:
                raise DomainError(f"layer {i}: shapes do not chain")
        if not self.R > 0:
            raise DomainError("input bound R must be positive")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def max_units(self) -> int:
        return max(max(w.shape) for w in self.layers)


def _rows(x):
    x = _f64(x)
    single = x.ndim == 1
    return (x[None, :] if single else x), single


def _shel_hidden(head: ShelModel, x, floor: float | None):
    norms = np.linalg.norm(x, axis=1)
    if floor is None:
        if np.any(norms == 0.0):
            raise DomainError("SHEL input must have nonzero norm")
    else:
        norms = np.maximum(norms, floor)
    z = (x @ head.U.T) / (math.sqrt(2.0) * norms[:, None])
    return z, norms


def _shel_out(head: ShelModel, act):
    return act @ head.V if head.binary else act @ head.V.T


def shel_forward(model: ShelModel, x):
    """Scores of a SHEL network; a single vector or a batch of rows."""
    x, single = _rows(x)
    z, _ = _shel_hidden(model, x, None)
    out = _shel_out(model, erf(z))
    return out[0] if single else out


def _loss_and_dscore(scores, labels, binary):
    n = scores.shape[0]
    if binary:
        y = _f64(labels)
        t = -y * scores
        loss = float(np.mean(np.logaddexp(0.0, t)))
        # d/ds log(1 + exp(-y s)) = -y sigmoid(-y s)
        ds = -y * np.exp(t - np.logaddexp(0.0, t)) / n
        return loss, ds
    labels = np.asarray(labels, dtype=np.int64)
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logz - shifted[rows, labels]))
    probs = np.exp(shifted - logz[:, None])
    probs[rows, labels] -= 1.0
    return loss, probs / n


def _head_backward(head: ShelModel, x, labels, floor):
    z, norms = _shel_hidden(head, x, floor)
    act = erf(z)
    scores = _shel_out(head, act)
    loss, ds = _loss_and_dscore(scores, labels, head.binary)
    if head.binary:
        g_v = act.T @ ds
        d_act = ds[:, None] * head.V[None, :]
    else:
        g_v = ds.T @ act
        d_act = ds @ head.V
    d_z = d_act * _TWO_OVER_SQRT_PI * np.exp(-z * z)
    scaled = x / (math.sqrt(2.0) * norms[:, None])
    g_u = d_z.T @ scaled
    return loss, g_u, g_v, d_z, norms


def shel_backward(model: ShelModel, x, labels):
    """Mean cross-entropy and its gradients ``(loss, dU, dV)``.

    Softmax cross-entropy over the ``c`` scores, or logistic loss on the
    single score for binary models with labels in {+1, -1}.
    """
    x, _ = _rows(x)
    if x.shape[0] == 0:
        raise DomainError("empty batch")
    loss, g_u, g_v, _, _ = _head_backward(model, x, labels, None)
    return loss, g_u, g_v


def _noisy_layers(model: PartialShelModel, noise):
    if noise is None:
        return model.layers
    if model.sigma is None:
        raise StateError("sigma has not been calibrated")
    if len(noise) != len(model.layers):
        raise DomainError("one noise draw per feature layer")
    return [w + model.sigma * _f64(n) for w, n in zip(model.layers, noise)]


def _features(layers, x):
    acts = [x]
    pre = []
    h = x
    for w in layers:
        a = h @ w.T
        pre.append(a)
        h = np.maximum(a, 0.0)
        acts.append(h)
    return acts, pre


def partial_shel_forward(model: PartialShelModel, x, noise: Sequence[np.ndarray] | None = None):
    """Scores of the partially-stochastic network.

    Without ``noise`` this is the deterministic mean network. With ``noise``
    (standard normal arrays shaped like the feature layers) each feature
    weight becomes ``W_i + sigma * noise_i``. Feature vectors whose norm is
    below 1e-12 are floored before the SHEL head normalises them.
    """
    x, single = _rows(x)
    acts, _ = _features(_noisy_layers(model, noise), x)
    z, _ = _shel_hidden(model.head, acts[-1], FEATURE_NORM_FLOOR)
    out = _shel_out(model.head, erf(z))
    return out[0] if single else out


def partial_shel_backward(model: PartialShelModel, x, labels):
    """``(loss, [dW_1, dW_2, dW_3], dU, dV)`` for the deterministic network."""
    x, _ = _rows(x)
    if x.shape[0] == 0:
        raise DomainError("empty batch")
    acts, pre = _features(model.layers, x)
    phi = acts[-1]
    loss, g_u, g_v, d_z, norms = _head_backward(model.head, phi, labels, FEATURE_NORM_FLOOR)
    g = (d_z @ model.head.U) / math.sqrt(2.0)
    raw = np.linalg.norm(phi, axis=1)
    unit = phi / norms[:, None]
    # through phi / ||phi||; the floor makes the normaliser constant
    radial = np.where(raw > FEATURE_NORM_FLOOR, np.sum(unit * g, axis=1), 0.0)
    d_h = (g - unit * radial[:, None]) / norms[:, None]
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        d_a = d_h * (pre[i] > 0.0)
        grads[i] = d_a.T @ acts[i]
        d_h = d_a @ model.layers[i]
    return loss, grads, g_u, g_v


def relu_forward(model: ReluModel, x, check_input: bool = True):
    """Scores of a ReLU network; ReLU after every layer but the last."""
    x, single = _rows(x)
    if check_input:
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms > model.R * (1.0 + 1e-12)):
            raise DomainError(f"input norm {norms.max()!r} exceeds R = {model.R!r}")
    h = x
    last = model.depth - 1
    for i, w in enumerate(model.layers):
        h = h @ w.T
        if i < last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def sample_shel_proxy(model: ShelModel, T: int, rng: np.random.Generator) -> Callable:
    """Draw one random sign network whose mean is ``F / (V_inf K)``.

    Each of the ``T`` draws picks a hidden unit ``k`` uniformly, a weight
    vector ``w ~ N(U_k, I)`` and output signs ``r`` in {+1, -1} with mean
    ``V[:, k] / V_inf``. The returned function maps inputs to
    ``mean_t sign(w_t . x) r_t``, every component in [-1, 1].
    """
    if T < 1:
        raise DomainError("T must be a positive integer")
    v_inf = model.v_inf
    if v_inf == 0.0:
        raise DomainError("degenerate: V is identically zero")
    k = rng.integers(0, model.width, size=T)
    w = model.U[k] + rng.standard_normal((T, model.input_dim))
    means = (model.V[k] if model.binary else model.V[:, k].T) / v_inf
    r = np.where(rng.random(means.shape) < 0.5 * (1.0 + means), 1.0, -1.0)

    def proxy(x):
        xr, single = _rows(x)
        signs = np.sign(xr @ w.T)
        out = signs @ r / T
        return out[0] if single else out

    proxy.weights = w
    proxy.signs = r
    return proxy


def init_shel(input_dim: int, width: int, classes: int, rng: np.random.Generator,
              u_scale: float = 1.0) -> ShelModel:
    """Gaussian init; the prior ``U0`` is the init.

    Hidden weights have std ``u_scale`` (the unit-variance default matches the
    isotropic Gaussian around ``U0``); output weights have std ``1/sqrt(K)``.
    ``classes == 1`` gives a binary model with a weight vector ``v``.
    """
    U = u_scale * rng.standard_normal((width, input_dim))
    shape = (width,) if classes == 1 else (classes, width)
    V = rng.standard_normal(shape) / math.sqrt(width)
    return ShelModel(U, V, U.copy())


def init_partial_shel(
    input_dim: int,
    feature_widths: Sequence[int],
    width: int,
    classes: int,
    rng: np.random.Generator,
) -> PartialShelModel:
    layers = []
    fan_in = input_dim
    for h in feature_widths:
        layers.append(rng.standard_normal((h, fan_in)) / math.sqrt(fan_in))
        fan_in = h
    head = init_shel(fan_in, width, classes, rng)
    return PartialShelModel(layers, [w.copy() for w in layers], head)


# --- binary container -------------------------------------------------------
#
# header (16 bytes): b"PACM", u32 version, u32 kind, u32 block count
# shapes: per block u32 ndim then ndim x u32 dims
# data: every block as little-endian f64, in declaration order
#
# kind 1 linear   : w, params[norm_kind: 2 = L2, 1 = L1]
# kind 2 shel     : U, V, U0                   (V is 1-D in binary mode)
# kind 3 partial  : W_1..W_L, W0_1..W0_L, U, V, U0, params[sigma or NaN]
# kind 4 relu     : W_1..W_d, W0_1..W0_d, params[R]

MAGIC = b"PACM"
VERSION = 1
KIND_LINEAR, KIND_SHEL, KIND_PARTIAL, KIND_RELU = 1, 2, 3, 4


def _blocks(model):
    if isinstance(model, LinearModel):
        return KIND_LINEAR, [model.w, np.array([2.0 if model.norm_kind == "L2" else 1.0])]
    if isinstance(model, ShelModel):
        return KIND_SHEL, [model.U, model.V, model.U0]
    if isinstance(model, PartialShelModel):
        sigma = np.nan if model.sigma is None else model.sigma
        head = model.head
        return KIND_PARTIAL, [*model.layers, *model.priors, head.U, head.V, head.U0, np.array([sigma])]
    if isinstance(model, ReluModel):
        return KIND_RELU, [*model.layers, *model.priors, np.array([model.R])]
    raise TypeError(f"cannot serialise {type(model).__name__}")


def to_bytes(model) -> bytes:
    kind, blocks = _blocks(model)
    parts = [MAGIC, struct.pack("<III", VERSION, kind, len(blocks))]
    for b in blocks:
        b = np.asarray(b)
        parts.append(struct.pack(f"<I{b.ndim}I", b.ndim, *b.shape))
    for b in blocks:
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(data: bytes):
    if len(data) < 4 or data[:4] != MAGIC:
        raise ParseError("not a PACM model container", 0)
    if len(data) < 16:
        raise ParseError("truncated header", len(data))
    version, kind, count = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise ParseError(f"unsupported container version {version}", 4)
    offset = 16
    shapes = []
    for _ in range(count):
        if offset + 4 > len(data):
            raise ParseError("truncated shape table", offset)
        (ndim,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + 4 * ndim > len(data):
            raise ParseError("truncated shape table", offset)
        shapes.append(struct.unpack_from(f"<{ndim}I", data, offset))
        offset += 4 * ndim
    blocks = []
    for shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(data):
            raise ParseError("truncated weight block", offset)
        blocks.append(np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64))
        offset = end
    if offset != len(data):
        raise ParseError("trailing bytes after the last block", offset)

    if kind == KIND_LINEAR:
        return LinearModel(blocks[0], "L2" if blocks[1][0] == 2.0 else "L1")
    if kind == KIND_SHEL:
        return ShelModel(*blocks)
    if kind == KIND_PARTIAL:
        n_layers = (count - 4) // 2
        sigma = float(blocks[-1][0])
        head = ShelModel(*blocks[2 * n_layers : 2 * n_layers + 3])
        return PartialShelModel(
            blocks[:n_layers],
            blocks[n_layers : 2 * n_layers],
            head,
            None if math.isnan(sigma) else sigma,
        )
    if kind == KIND_RELU:
        depth = (count - 1) // 2
        return ReluModel(blocks[:depth], blocks[depth : 2 * depth], float(blocks[-1][0]))
    raise ParseError(f"unknown model kind {kind}", 8)


def save_model(path, model) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(model))


def load_model(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
