"""Convolutional image encoder, linear decoder and Adam, in plain numpy.

Images are NHWC arrays with pixels in [0, 1]. Every layer keeps what its
backward pass needs in an explicit cache so gradients are exact and
deterministic (no autograd).
"""

from __future__ import annotations

import numpy as np


def xavier_uniform(rng, shape, fan_in: int, fan_out: int, dtype=np.float64):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# -- layers --------------------------------------------------------------------


def conv3x3_forward(x, w, b):
    """'Same' 3x3 convolution, stride 1. ``w`` is (3, 3, C_in, C_out)."""
    B, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.concatenate([xp[:, i:i + H, j:j + W, :] for i in range(3) for j in range(3)], axis=-1)
    out = cols.reshape(B * H * W, 9 * C) @ w.reshape(9 * C, -1)
    out = out.reshape(B, H, W, -1) + b
    return out, cols


def conv3x3_backward(dout, cols, w, need_dx: bool = True):
    B, H, W, F = dout.shape
    C = w.shape[2]
    d2 = dout.reshape(-1, F)
    dw = (cols.reshape(-1, 9 * C).T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(9 * C, F).T).reshape(B, H, W, 9 * C)
    dxp = np.zeros((B, H + 2, W + 2, C), dtype=dout.dtype)
    k = 0
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + H, j:j + W, :] += dcols[..., k * C:(k + 1) * C]
            k += 1
    return dxp[:, 1:-1, 1:-1, :], dw, db


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    # subgradient 0 at x == 0
    return dout * (x > 0)


def maxpool2_forward(x):
    """2x2 max-pool. ``idx`` records the winning corner (0..3, row-major), first one on ties."""
    B, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"max-pool needs even spatial dims, got {H}x{W}")
    corners = (x[:, 0::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 0::2], x[:, 1::2, 1::2])
    out = np.maximum(np.maximum(corners[0], corners[1]), np.maximum(corners[2], corners[3]))
    idx = np.full(out.shape, 3, dtype=np.uint8)
    for k in (2, 1, 0):
        idx[corners[k] == out] = k
    return out, idx


def maxpool2_backward(dout, idx):
    B, H2, W2, C = dout.shape
    dx = np.zeros((B, 2 * H2, 2 * W2, C), dtype=dout.dtype)
    zero = np.zeros((), dtype=dout.dtype)
    for k, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        dx[:, i::2, j::2] = np.where(idx == k, dout, zero)
    return dx


# -- encoder / decoder ------------------------------------------------------------


class Encoder:
    """Conv blocks (3x3 conv, ReLU, 2x2 max-pool) followed by a linear projection to R^d."""

    def __init__(self, params: dict, channels, input_shape, d: int):
        self.params = params
        self.channels = tuple(channels)
        self.input_shape = tuple(input_shape)
        self.d = d

    @classmethod
    def init(cls, seed=0, d: int = 64, channels=(16, 32, 64), input_shape=(32, 32, 3), dtype=np.float64):
        rng = np.random.default_rng(seed)
        H, W, c_in = input_shape
        params = {}
        for k, c_out in enumerate(channels):
            params[f"conv{k}.w"] = xavier_uniform(rng, (3, 3, c_in, c_out), 9 * c_in, 9 * c_out, dtype)
            params[f"conv{k}.b"] = np.zeros(c_out, dtype=dtype)
            c_in = c_out
            H, W = H // 2, W // 2
        flat = H * W * c_in
        params["proj.w"] = xavier_uniform(rng, (flat, d), flat, d, dtype)
        params["proj.b"] = np.zeros(d, dtype=dtype)
        return cls(params, channels, input_shape, d)

    def forward(self, x, return_cache: bool = False):
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"expected images of shape {self.input_shape}, got {x.shape[1:]}")
        p = self.params
        h = x.astype(p["proj.w"].dtype, copy=False)
        layers = []
        for k in range(len(self.channels)):
            pre, cols = conv3x3_forward(h, p[f"conv{k}.w"], p[f"conv{k}.b"])
            act = relu_forward(pre)
            h, idx = maxpool2_forward(act)
            layers.append((cols, pre, idx))
        flat = h.reshape(len(h), -1)
        z = flat @ p["proj.w"] + p["proj.b"]
        if single:
            z = z[0]
        if return_cache:
            return z, (single, layers, flat, h.shape)
        return z

    __call__ = forward

    def backward(self, dz, cache) -> dict:
        single, layers, flat, pooled_shape = cache
        if single:
            dz = dz[None]
        p = self.params
        grads = {"proj.w": flat.T @ dz, "proj.b": dz.sum(axis=0)}
        dh = (dz @ p["proj.w"].T).reshape(pooled_shape)
        for k in reversed(range(len(self.channels))):
            cols, pre, idx = layers[k]
            dact = maxpool2_backward(dh, idx)
            dpre = relu_backward(dact, pre)
            dh, grads[f"conv{k}.w"], grads[f"conv{k}.b"] = conv3x3_backward(
                dpre, cols, p[f"conv{k}.w"], need_dx=k > 0)
        return grads

    def copy(self) -> "Encoder":
        return Encoder({k: v.copy() for k, v in self.params.items()}, self.channels, self.input_shape, self.d)


class Decoder:
    """Linear map R^d -> class logits."""

    def __init__(self, params: dict):
        self.params = params

    @classmethod
    def init(cls, seed=0, d: int = 64, num_classes: int = 2, dtype=np.float64):
        rng = np.random.default_rng(seed)
        return cls({"w": xavier_uniform(rng, (d, num_classes), d, num_classes, dtype),
                    "b": np.zeros(num_classes, dtype=dtype)})

    @property
    def num_classes(self) -> int:
        return self.params["b"].shape[0]

    def forward(self, z):
        return z @ self.params["w"] + self.params["b"]

    __call__ = forward

    def backward(self, dlogits, z):
        if z.ndim == 1:
            return {"w": np.outer(z, dlogits), "b": dlogits.copy()}, dlogits @ self.params["w"].T
        return {"w": z.T @ dlogits, "b": dlogits.sum(axis=0)}, dlogits @ self.params["w"].T

    def copy(self) -> "Decoder":
        return Decoder({k: v.copy() for k, v in self.params.items()})


def predict(logits) -> np.ndarray:
    """Arg-max class; ``np.argmax`` already returns the lowest index on ties."""
    return np.argmax(logits, axis=-1)


def init_encoder(seed=0, **kwargs) -> Encoder:
    return Encoder.init(seed, **kwargs)


def init_decoder(seed=0, num_classes: int = 2, **kwargs) -> Decoder:
    return Decoder.init(seed, num_classes=num_classes, **kwargs)


def encode(image, encoder: Encoder):
    return encoder.forward(np.asarray(image))


def decode(z, decoder: Decoder):
    return decoder.forward(z)


# -- optimizer ---------------------------------------------------------------------


class Adam:
    def __init__(self, lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        """Bias-corrected update of ``params`` in place; keys without a gradient are skipped."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k in sorted(grads):
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


def adam_step(params, grads, state: Adam, post_step=None):
    state.step(params, grads)
    if post_step is not None:
        post_step()
    return params
