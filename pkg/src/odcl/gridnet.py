"""Per-pixel student classifiers with a hand-written forward/backward engine.

The same weights are applied independently at every pixel of a frame, so a
"segmentation" model is just a flat parameter vector plus shape metadata.
All gradients are analytic and tested against finite differences.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

ARCH_LINEAR = "linear"
ARCH_MLP = "mlp"

PARAM_FILE_MAGIC = b"ODCLprm1"


@dataclass(frozen=True)
class ModelSpec:
    arch: str = ARCH_MLP
    feat_dim: int = 4
    num_classes: int = 3
    hidden_dim: int = 16
    init_seed: int = 0
    init_scale: float = 1.0

    @property
    def param_count(self) -> int:
        c, f, h = self.num_classes, self.feat_dim, self.hidden_dim
        if self.arch == ARCH_LINEAR:
            return f * c + c
        return f * h + h + h * c + c

    def problems(self) -> list[str]:
        errs = []
        if self.arch not in (ARCH_LINEAR, ARCH_MLP):
            errs.append(f"arch must be one of linear|mlp, got {self.arch!r}")
        if self.feat_dim < 1:
            errs.append("feat_dim must be >= 1")
        if self.num_classes < 2:
            errs.append("num_classes must be >= 2")
        if self.arch == ARCH_MLP and self.hidden_dim < 1:
            errs.append("hidden_dim must be >= 1 for mlp")
        if self.init_scale <= 0:
            errs.append("init_scale must be > 0")
        return errs


@dataclass(eq=False)
class ParamVector:
    """Flat model parameters, with an optional gradient slot."""

    values: np.ndarray
    grad: np.ndarray | None = None

    def __len__(self) -> int:
        return self.values.shape[0]


def init_params(spec: ModelSpec) -> ParamVector:
    """Fresh parameters: layer weights ~ N(0, (init_scale/sqrt(fan_in))^2), biases 0."""
    rng = np.random.default_rng(spec.init_seed)
    vals = np.zeros(spec.param_count)
    for sl, fan_in in _weight_slices(spec):
        n = sl.stop - sl.start
        vals[sl] = rng.normal(0.0, spec.init_scale / np.sqrt(fan_in), n)
    return ParamVector(values=vals)


def _weight_slices(spec: ModelSpec):
    c, f, h = spec.num_classes, spec.feat_dim, spec.hidden_dim
    if spec.arch == ARCH_LINEAR:
        return [(slice(0, c * f), f)]
    return [(slice(0, h * f), f), (slice(h * f + h, h * f + h + c * h), h)]


def _unpack(spec: ModelSpec, values: np.ndarray):
    c, f, h = spec.num_classes, spec.feat_dim, spec.hidden_dim
    if spec.arch == ARCH_LINEAR:
        w = values[:c * f].reshape(c, f)
        b = values[c * f:]
        return w, b
    o = 0
    w1 = values[o:o + h * f].reshape(h, f); o += h * f
    b1 = values[o:o + h]; o += h
    w2 = values[o:o + c * h].reshape(c, h); o += c * h
    b2 = values[o:]
    return w1, b1, w2, b2


def _check_theta(spec: ModelSpec, theta: ParamVector) -> None:
    if len(theta) != spec.param_count:
        raise ValueError(
            f"parameter vector length {len(theta)} does not match spec "
            f"({spec.param_count} for arch={spec.arch})")


def _features_of(frame) -> np.ndarray:
    return frame.features if hasattr(frame, "features") else np.asarray(frame)


def forward_pixels(spec: ModelSpec, theta: ParamVector, x: np.ndarray):
    """Logits for a flat pixel batch x (N, F); returns (logits (N, C), cache)."""
    _check_theta(spec, theta)
    if spec.arch == ARCH_LINEAR:
        w, b = _unpack(spec, theta.values)
        return x @ w.T + b, (x,)
    w1, b1, w2, b2 = _unpack(spec, theta.values)
    a = np.tanh(x @ w1.T + b1)
    return a @ w2.T + b2, (x, a)


def backward_pixels(spec: ModelSpec, theta: ParamVector, cache, dlogits: np.ndarray) -> np.ndarray:
    """Flat d(loss)/dtheta given upstream d(loss)/dlogits for forward_pixels."""
    if spec.arch == ARCH_LINEAR:
        (x,) = cache
        dw = dlogits.T @ x
        db = dlogits.sum(axis=0)
        return np.concatenate([dw.ravel(), db])
    x, a = cache
    _, _, w2, _ = _unpack(spec, theta.values)
    dw2 = dlogits.T @ a
    db2 = dlogits.sum(axis=0)
    dh = (dlogits @ w2) * (1.0 - a * a)
    dw1 = dh.T @ x
    db1 = dh.sum(axis=0)
    return np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])


def forward(spec: ModelSpec, theta: ParamVector, frame) -> np.ndarray:
    """Per-pixel logit grid (grid_h, grid_w, num_classes) for a frame."""
    feats = _features_of(frame)
    h, w, f = feats.shape
    logits, _ = forward_pixels(spec, theta, feats.reshape(-1, f))
    return logits.reshape(h, w, spec.num_classes)


def predict(spec: ModelSpec, theta: ParamVector, frame) -> np.ndarray:
    """Per-pixel argmax labels; ties broken to the lowest class index."""
    return np.argmax(forward(spec, theta, frame), axis=-1)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def stack_batch(spec: ModelSpec, batch):
    if not batch:
        raise ValueError("empty batch")
    xs, ys = [], []
    for frame, labels in batch:
        feats = _features_of(frame)
        lab = labels.labels if hasattr(labels, "labels") else np.asarray(labels)
        xs.append(feats.reshape(-1, feats.shape[-1]))
        ys.append(lab.reshape(-1))
    x = np.concatenate(xs, axis=0)
    y = np.concatenate(ys, axis=0)
    if y.min() < 0 or y.max() >= spec.num_classes:
        raise ValueError(
            f"labels outside [0, {spec.num_classes}): saw [{y.min()}, {y.max()}]")
    return x, y


def loss_only(spec: ModelSpec, theta: ParamVector, batch) -> float:
    """Mean per-pixel cross-entropy over a batch of (frame, labels) pairs."""
    x, y = stack_batch(spec, batch)
    logits, _ = forward_pixels(spec, theta, x)
    logp = log_softmax(logits)
    return float(-logp[np.arange(y.size), y].mean())


def loss_and_grad(spec: ModelSpec, theta: ParamVector, batch, penalty=None):
    """Mean cross-entropy (+ optional regularization penalty) and its gradient.

    penalty, when given, must expose .value and .grad (see regularize);
    the returned gradient includes the penalty's gradient.
    """
    x, y = stack_batch(spec, batch)
    logits, cache = forward_pixels(spec, theta, x)
    logp = log_softmax(logits)
    n = y.size
    loss = float(-logp[np.arange(n), y].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grad = backward_pixels(spec, theta, cache, dlogits)
    if penalty is not None:
        loss += penalty.value
        grad = grad + penalty.grad
    return loss, grad


def sgd_step(theta: ParamVector, grad: np.ndarray, lr: float) -> ParamVector:
    if lr <= 0:
        raise ValueError("lr must be > 0")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    return ParamVector(values=theta.values - lr * grad)


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta: ParamVector, grad: np.ndarray) -> ParamVector:
        return sgd_step(theta, grad, self.lr)


class Adam:
    """Standard Adam recursion with (0.9, 0.999, 1e-8)."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, theta: ParamVector, grad: np.ndarray) -> ParamVector:
        if not np.all(np.isfinite(grad)):
            raise ValueError("non-finite gradient")
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return ParamVector(values=theta.values - self.lr * mhat / (np.sqrt(vhat) + self.eps))


OPTIMIZERS = ("sgd", "adam")


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return Sgd(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r} (expected one of {OPTIMIZERS})")


def snapshot(theta: ParamVector) -> ParamVector:
    """Deep value copy; mutating the source afterwards leaves the copy intact."""
    return ParamVector(values=theta.values.copy())


def transfer(src: ParamVector, dst: ParamVector) -> None:
    """Copy src values into dst in place; the stores stay independent."""
    if len(src) != len(dst):
        raise ValueError(f"length mismatch: src {len(src)} vs dst {len(dst)}")
    dst.values[...] = src.values


def save_params(path, theta: ParamVector) -> None:
    """Debug dump: 16-byte header (magic, P) + P little-endian float64."""
    with open(path, "wb") as f:
        f.write(PARAM_FILE_MAGIC)
        f.write(struct.pack("<Q", len(theta)))
        f.write(theta.values.astype("<f8").tobytes())


def load_params(path) -> ParamVector:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != PARAM_FILE_MAGIC:
            raise ValueError(f"bad parameter file magic {magic!r}")
        (count,) = struct.unpack("<Q", f.read(8))
        data = np.frombuffer(f.read(), dtype="<f8")
    if data.size != count:
        raise ValueError(f"parameter file truncated: header says {count}, got {data.size}")
    return ParamVector(values=data.astype(np.float64))
