"""Numpy layer kernels and the two-conv / two-FC occupancy network.

Every layer is a ``*_forward`` / ``*_backward`` pair.  Forward returns the
output and a cache; backward takes the upstream gradient and that cache.
Kernels compute in whatever float dtype they are given, so the same code
runs in float32 for training and float64 for gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateBatchError, DomainError, ShapeError, StaleCacheError

KERNEL = 7
INPUT_SHAPE = (3, 50, 50)
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
DROPOUT_P = 0.5

# name -> shape of every trainable array, in a fixed order
PARAM_SHAPES = {
    "conv1.weight": (8, 3, KERNEL, KERNEL),
    "conv1.bias": (8,),
    "bn1.gamma": (8,),
    "bn1.beta": (8,),
    "conv2.weight": (16, 8, KERNEL, KERNEL),
    "conv2.bias": (16,),
    "bn2.gamma": (16,),
    "bn2.beta": (16,),
    "fc1.weight": (60, 400),
    "fc1.bias": (60,),
    "fc2.weight": (2, 60),
    "fc2.bias": (2,),
}
BUFFER_SHAPES = {
    "bn1.running_mean": (8,),
    "bn1.running_var": (8,),
    "bn2.running_mean": (16,),
    "bn2.running_var": (16,),
}
STRIDES = {"conv1": 3, "conv2": 2}


def conv_output_side(n: int, kernel: int, stride: int) -> int:
    return (n - kernel) // stride + 1


# --- convolution ------------------------------------------------------------

def conv2d_forward(x, w, b, stride):
    """Valid (unpadded) cross-correlation of ``x`` (N,C,H,W) with ``w`` (K,C,kh,kw)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weights {w.shape}")
    N, C, H, W = x.shape
    K, _, kh, kw = w.shape
    if H < kh or W < kw:
        raise ShapeError(f"conv2d: input {H}x{W} smaller than kernel {kh}x{kw}")
    Ho = conv_output_side(H, kh, stride)
    Wo = conv_output_side(W, kw, stride)
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # rows: (n, i, j); columns: (c, u, v) -- matches w.reshape(K, -1)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * kh * kw)
    out = cols @ w.reshape(K, -1).T + b
    out = out.reshape(N, Ho, Wo, K).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, cols, w, stride)


def conv2d_backward(dout, cache):
    x_shape, cols, w, stride = cache
    N, C, H, W = x_shape
    K, _, kh, kw = w.shape
    Ho, Wo = dout.shape[2:]
    d = dout.transpose(0, 2, 3, 1).reshape(-1, K)
    dw = (d.T @ cols).reshape(w.shape)
    db = d.sum(axis=0)
    dcols = (d @ w.reshape(K, -1)).reshape(N, Ho, Wo, C, kh, kw)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for u in range(kh):
        for v in range(kw):
            dx[:, :, u:u + stride * (Ho - 1) + 1:stride, v:v + stride * (Wo - 1) + 1:stride] += (
                dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
            )
    return dx, dw, db


# --- batch normalization ------------------------------------------------------

def _bn_axes(x):
    return (0,) if x.ndim == 2 else (0, 2, 3)


def _bn_shape(x):
    return (1, -1) if x.ndim == 2 else (1, -1, 1, 1)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train,
                      eps=BN_EPS, momentum=BN_MOMENTUM):
    """Per-channel batch norm over (N,C) or (N,C,H,W) input.

    In train mode the running statistics are updated in place:
    ``running <- (1 - momentum) * running + momentum * batch`` with the
    unbiased batch variance.
    """
    axes, shp = _bn_axes(x), _bn_shape(x)
    if train:
        if x.shape[0] < 2:
            raise DegenerateBatchError("batch norm in train mode needs at least 2 samples")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        count = x.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (count / (count - 1))
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shp)) * inv_std.reshape(shp)
    out = gamma.reshape(shp) * xhat + beta.reshape(shp)
    return out, (xhat, inv_std, gamma, train)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train = cache
    axes, shp = _bn_axes(dout), _bn_shape(dout)
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(shp)
    if not train:
        return dxhat * inv_std.reshape(shp), dgamma, dbeta
    m = dout.size // dout.shape[1]
    dx = (inv_std / m).reshape(shp) * (
        m * dxhat
        - dxhat.sum(axis=axes).reshape(shp)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(shp)
    )
    return dx, dgamma, dbeta


# --- elementwise ------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def dropout_forward(x, p, train, rng=None):
    """Inverted dropout; returns ``(out, mask)`` where mask is None when inactive."""
    if not 0 <= p < 1:
        raise DomainError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x, None
    if rng is None:
        raise DomainError("train-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) / x.dtype.type(1 - p)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def linear_forward(x, w, b):
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weights {w.shape}")
    return x @ w.T + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    labels = np.asarray(labels, dtype=np.intp)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(n), labels] - log_norm
    loss = -logp.mean()
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n


# --- the model --------------------------------------------------------------

@dataclass
class ForwardCache:
    generation: int
    layers: dict


class BcfplModel:
    """Parameters, batch-norm running statistics, and the forward/backward pipeline.

    conv1(8, 7x7/3) -> relu -> bn1 -> conv2(16, 7x7/2) -> relu -> bn2
    -> flatten(400) -> fc1(60) -> relu -> dropout -> fc2(2)
    """

    def __init__(self, params: dict, buffers: dict, dropout_p: float = DROPOUT_P, mode: str = "train"):
        self.params = params
        self.buffers = buffers
        self.dropout_p = dropout_p
        self.mode = mode
        self._generation = 0

    @property
    def dtype(self):
        return self.params["conv1.weight"].dtype

    def astype(self, dtype) -> "BcfplModel":
        return BcfplModel(
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
            self.dropout_p,
            self.mode,
        )

    def copy(self) -> "BcfplModel":
        return self.astype(self.dtype)

    def arrays(self) -> dict:
        return {**self.params, **self.buffers}

    def forward(self, x, mode=None, rng=None):
        """Return ``(logits, cache)`` for a batch of shape (N, 3, 50, 50)."""
        mode = mode or self.mode
        if mode not in ("train", "infer"):
            raise DomainError(f"mode must be 'train' or 'infer', got {mode!r}")
        train = mode == "train"
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1:] != INPUT_SHAPE:
            raise ShapeError(f"model input must be (N, 3, 50, 50), got {x.shape}")
        x = x.astype(self.dtype, copy=False)
        p, buf = self.params, self.buffers
        c = {}
        h = x
        for i in (1, 2):
            name = f"conv{i}"
            h, c[name] = conv2d_forward(h, p[f"{name}.weight"], p[f"{name}.bias"], STRIDES[name])
            h, c[f"relu{i}"] = relu_forward(h)
            h, c[f"bn{i}"] = batchnorm_forward(
                h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"],
                buf[f"bn{i}.running_mean"], buf[f"bn{i}.running_var"], train,
            )
        c["flat_shape"] = h.shape
        h = h.reshape(h.shape[0], -1)
        h, c["fc1"] = linear_forward(h, p["fc1.weight"], p["fc1.bias"])
        h, c["relu3"] = relu_forward(h)
        h, c["dropout"] = dropout_forward(h, self.dropout_p, train, rng)
        logits, c["fc2"] = linear_forward(h, p["fc2.weight"], p["fc2.bias"])
        self._generation += 1
        return logits, ForwardCache(self._generation, c)

    def backward(self, cache: ForwardCache, dlogits) -> dict:
        """Gradients of every trainable array, keyed like :attr:`params`."""
        if cache.generation != self._generation:
            raise StaleCacheError("forward cache does not belong to the latest forward call")
        c = cache.layers
        g = {}
        dh, g["fc2.weight"], g["fc2.bias"] = linear_backward(dlogits, c["fc2"])
        dh = dropout_backward(dh, c["dropout"])
        dh = relu_backward(dh, c["relu3"])
        dh, g["fc1.weight"], g["fc1.bias"] = linear_backward(dh, c["fc1"])
        dh = dh.reshape(c["flat_shape"])
        for i in (2, 1):
            dh, g[f"bn{i}.gamma"], g[f"bn{i}.beta"] = batchnorm_backward(dh, c[f"bn{i}"])
            dh = relu_backward(dh, c[f"relu{i}"])
            dh, g[f"conv{i}.weight"], g[f"conv{i}.bias"] = conv2d_backward(dh, c[f"conv{i}"])
        return {k: g[k] for k in self.params}


def init_model(seed: int = 0, dtype=np.float32) -> BcfplModel:
    """Kaiming-uniform (fan-in, ReLU gain) weights, zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in PARAM_SHAPES.items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    buffers = {
        name: (np.ones(shape, dtype=dtype) if name.endswith("var") else np.zeros(shape, dtype=dtype))
        for name, shape in BUFFER_SHAPES.items()
    }
    return BcfplModel(params, buffers)


def kaiming_variance(name: str) -> float:
    return 2.0 / int(np.prod(PARAM_SHAPES[name][1:]))


def param_count(model: BcfplModel, prefix: str = "") -> int:
    """Number of trainable scalars, optionally restricted to one layer prefix."""
    return sum(v.size for k, v in model.params.items() if k.startswith(prefix))


def model_forward(model: BcfplModel, x, mode="infer", rng=None):
    return model.forward(x, mode, rng)


def model_backward(model: BcfplModel, cache: ForwardCache, loss_grad) -> dict:
    return model.backward(cache, loss_grad)
