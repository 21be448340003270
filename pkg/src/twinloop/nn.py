"""Minimal float64 neural-network substrate with analytic backprop.

All trainable parameters of a model live in one flat vector; layers hold
named views into it.  Backward passes accumulate into a parallel flat
gradient vector, which keeps optimizers, checkpointing, and gradient
checking trivial.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
from scipy.special import expit as sigmoid


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    limit = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape)


class ParamStore:
    """Flat float64 parameter vector with named per-layer views."""

    def __init__(self) -> None:
        self._pending: list[tuple[str, np.ndarray]] = []
        self._layout: dict[str, tuple[slice, tuple[int, ...]]] = {}
        self.vector: np.ndarray | None = None
        self.grads: np.ndarray | None = None

    def register(self, name: str, init: np.ndarray) -> str:
        if self.vector is not None:
            raise RuntimeError("parameter store already finalized")
        if name in self._layout or any(n == name for n, _ in self._pending):
            raise ValueError(f"duplicate parameter name {name!r}")
        self._pending.append((name, np.asarray(init, dtype=np.float64)))
        return name

    def finalize(self) -> None:
        total = sum(arr.size for _, arr in self._pending)
        self.vector = np.empty(total, dtype=np.float64)
        self.grads = np.zeros(total, dtype=np.float64)
        offset = 0
        for name, arr in self._pending:
            sl = slice(offset, offset + arr.size)
            self._layout[name] = (sl, arr.shape)
            self.vector[sl] = arr.ravel()
            offset += arr.size
        self._pending.clear()

    @property
    def size(self) -> int:
        return 0 if self.vector is None else int(self.vector.size)

    def view(self, name: str) -> np.ndarray:
        sl, shape = self._layout[name]
        return self.vector[sl].reshape(shape)

    def grad(self, name: str) -> np.ndarray:
        sl, shape = self._layout[name]
        return self.grads[sl].reshape(shape)

    def zero_grads(self) -> None:
        self.grads[:] = 0.0

    def get_vector(self) -> np.ndarray:
        return self.vector.copy()

    def set_vector(self, values: np.ndarray) -> None:
        if values.shape != self.vector.shape:
            raise ValueError("parameter vector size mismatch")
        self.vector[:] = values

    def layout(self) -> dict[str, tuple[int, int, tuple[int, ...]]]:
        return {
            name: (sl.start, sl.stop, shape) for name, (sl, shape) in self._layout.items()
        }


class Dense:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, rng) -> None:
        self.store = store
        self.w_name = store.register(f"{name}.W", uniform_fan_in(rng, n_in, (n_in, n_out)))
        self.b_name = store.register(f"{name}.b", np.zeros(n_out))

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._x = x
        return x @ self.store.view(self.w_name) + self.store.view(self.b_name)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.store.grad(self.w_name)[...] += self._x.T @ dy
        self.store.grad(self.b_name)[...] += dy.sum(axis=0)
        return dy @ self.store.view(self.w_name).T


class ReLU:
    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * self._mask


class Dropout:
    def __init__(self, rate: float, rng: np.random.Generator) -> None:
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.rng = rng

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy if self._mask is None else dy * self._mask


class Conv1D:
    """Same-padded 1-D convolution over [batch, time, channels]."""

    def __init__(
        self, store: ParamStore, name: str, c_in: int, c_out: int, kernel: int, rng
    ) -> None:
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd for same padding")
        self.kernel = kernel
        self.c_in = c_in
        self.store = store
        self.w_name = store.register(
            f"{name}.W", uniform_fan_in(rng, kernel * c_in, (kernel * c_in, c_out))
        )
        self.b_name = store.register(f"{name}.b", np.zeros(c_out))

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        b, t, _ = x.shape
        pad = (self.kernel - 1) // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        # [B, T, C, k] -> [B, T, k, C] so the weight rows index (tap, channel)
        cols = np.lib.stride_tricks.sliding_window_view(xp, self.kernel, axis=1)
        cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(
            b, t, self.kernel * self.c_in
        )
        self._cols = cols
        self._in_shape = x.shape
        return cols @ self.store.view(self.w_name) + self.store.view(self.b_name)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        b, t, _ = self._in_shape
        pad = (self.kernel - 1) // 2
        flat_cols = self._cols.reshape(-1, self.kernel * self.c_in)
        flat_dy = dy.reshape(-1, dy.shape[-1])
        self.store.grad(self.w_name)[...] += flat_cols.T @ flat_dy
        self.store.grad(self.b_name)[...] += flat_dy.sum(axis=0)
        dcols = (dy @ self.store.view(self.w_name).T).reshape(b, t, self.kernel, self.c_in)
        dxp = np.zeros((b, t + 2 * pad, self.c_in))
        for j in range(self.kernel):
            dxp[:, j : j + t, :] += dcols[:, :, j, :]
        return dxp[:, pad : pad + t, :]


class BatchNorm:
    """Per-channel batch normalization over the batch and time axes."""

    def __init__(
        self, store: ParamStore, name: str, channels: int, momentum: float = 0.99
    ) -> None:
        self.store = store
        self.g_name = store.register(f"{name}.gamma", np.ones(channels))
        self.b_name = store.register(f"{name}.beta", np.zeros(channels))
        self.momentum = momentum
        self.eps = 1e-5
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        self._training = training
        self._ivar = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean) * self._ivar
        self._n = int(np.prod([x.shape[a] for a in axes]))
        return self.store.view(self.g_name) * self._xhat + self.store.view(self.b_name)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        axes = tuple(range(dy.ndim - 1))
        gamma = self.store.view(self.g_name)
        self.store.grad(self.g_name)[...] += (dy * self._xhat).sum(axis=axes)
        self.store.grad(self.b_name)[...] += dy.sum(axis=axes)
        if not self._training:
            return dy * gamma * self._ivar
        n = self._n
        dxhat = dy * gamma
        term = (
            n * dxhat
            - dxhat.sum(axis=axes)
            - self._xhat * (dxhat * self._xhat).sum(axis=axes)
        )
        return (self._ivar / n) * term


class MaxPool1D:
    def __init__(self, pool: int) -> None:
        self.pool = pool

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        b, t, c = x.shape
        t_out = t // self.pool
        if t_out < 1:
            raise ValueError("time dimension too small for pooling")
        self._in_shape = x.shape
        trimmed = x[:, : t_out * self.pool, :].reshape(b, t_out, self.pool, c)
        self._argmax = trimmed.argmax(axis=2)
        return trimmed.max(axis=2)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        b, t, c = self._in_shape
        t_out = dy.shape[1]
        dtrim = np.zeros((b, t_out, self.pool, c))
        bi, ti, ci = np.ogrid[:b, :t_out, :c]
        dtrim[bi, ti, self._argmax, ci] = dy
        dx = np.zeros((b, t, c))
        dx[:, : t_out * self.pool, :] = dtrim.reshape(b, t_out * self.pool, c)
        return dx


class LSTM:
    """Single-layer LSTM returning the full hidden sequence."""

    def __init__(self, store: ParamStore, name: str, c_in: int, hidden: int, rng) -> None:
        self.hidden = hidden
        self.store = store
        self.wx_name = store.register(
            f"{name}.Wx", uniform_fan_in(rng, c_in, (c_in, 4 * hidden))
        )
        self.wh_name = store.register(
            f"{name}.Wh", uniform_fan_in(rng, hidden, (hidden, 4 * hidden))
        )
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0  # forget-gate bias
        self.b_name = store.register(f"{name}.b", bias)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        b, t, _ = x.shape
        h = np.zeros((b, self.hidden))
        c = np.zeros((b, self.hidden))
        wx, wh, bias = (
            self.store.view(self.wx_name),
            self.store.view(self.wh_name),
            self.store.view(self.b_name),
        )
        self._cache = []
        out = np.empty((b, t, self.hidden))
        hs = self.hidden
        for step in range(t):
            xt = x[:, step, :]
            z = xt @ wx + h @ wh + bias
            i = sigmoid(z[:, :hs])
            f = sigmoid(z[:, hs : 2 * hs])
            g = np.tanh(z[:, 2 * hs : 3 * hs])
            o = sigmoid(z[:, 3 * hs :])
            c_prev = c
            c = f * c_prev + i * g
            hc = np.tanh(c)
            h_prev = h
            h = o * hc
            out[:, step, :] = h
            self._cache.append((xt, h_prev, c_prev, i, f, g, o, hc))
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        b, t, _ = dout.shape
        wx, wh = self.store.view(self.wx_name), self.store.view(self.wh_name)
        dwx, dwh, db = (
            self.store.grad(self.wx_name),
            self.store.grad(self.wh_name),
            self.store.grad(self.b_name),
        )
        dx = np.empty((b, t, wx.shape[0]))
        dh_next = np.zeros((b, self.hidden))
        dc_next = np.zeros((b, self.hidden))
        for step in reversed(range(t)):
            xt, h_prev, c_prev, i, f, g, o, hc = self._cache[step]
            dh = dout[:, step, :] + dh_next
            do = dh * hc
            dc = dc_next + dh * o * (1.0 - hc * hc)
            df = dc * c_prev
            di = dc * g
            dg = dc * i
            dc_next = dc * f
            dz = np.concatenate(
                [
                    di * i * (1 - i),
                    df * f * (1 - f),
                    dg * (1 - g * g),
                    do * o * (1 - o),
                ],
                axis=1,
            )
            dwx += xt.T @ dz
            dwh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx[:, step, :] = dz @ wx.T
            dh_next = dz @ wh.T
        return dx


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


class AdditiveAttention:
    """Additive (tanh) scoring over time; yields a convex combination of the
    hidden sequence.  Exposes the last attention weights for diagnostics."""

    def __init__(self, store: ParamStore, name: str, hidden: int, attn: int, rng) -> None:
        self.store = store
        self.w_name = store.register(f"{name}.W", uniform_fan_in(rng, hidden, (hidden, attn)))
        self.b_name = store.register(f"{name}.b", np.zeros(attn))
        self.v_name = store.register(f"{name}.v", uniform_fan_in(rng, attn, (attn,)))
        self.last_weights: np.ndarray | None = None

    def forward(self, h: np.ndarray, training: bool = False) -> np.ndarray:
        u = np.tanh(h @ self.store.view(self.w_name) + self.store.view(self.b_name))
        e = u @ self.store.view(self.v_name)
        alpha = softmax(e, axis=1)
        self._h, self._u, self._alpha = h, u, alpha
        self.last_weights = alpha
        return (alpha[:, :, None] * h).sum(axis=1)

    def backward(self, dctx: np.ndarray) -> np.ndarray:
        h, u, alpha = self._h, self._u, self._alpha
        v = self.store.view(self.v_name)
        w = self.store.view(self.w_name)
        dalpha = (dctx[:, None, :] * h).sum(axis=2)
        dh = alpha[:, :, None] * dctx[:, None, :]
        de = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        dv = (u * de[:, :, None]).sum(axis=(0, 1))
        du = de[:, :, None] * v
        dpre = du * (1.0 - u * u)
        b, t, hidden = h.shape
        self.store.grad(self.w_name)[...] += h.reshape(-1, hidden).T @ dpre.reshape(
            -1, dpre.shape[-1]
        )
        self.store.grad(self.b_name)[...] += dpre.sum(axis=(0, 1))
        self.store.grad(self.v_name)[...] += dv
        dh += dpre @ w.T
        return dh


class MeanPoolTime:
    """Mean pooling over the time axis (attention-ablated head)."""

    def forward(self, h: np.ndarray, training: bool = False) -> np.ndarray:
        self._t = h.shape[1]
        return h.mean(axis=1)

    def backward(self, dctx: np.ndarray) -> np.ndarray:
        return np.repeat(dctx[:, None, :], self._t, axis=1) / self._t


def weighted_bce_with_logits(
    logits: np.ndarray, labels: np.ndarray, weights: np.ndarray
) -> tuple[float, np.ndarray]:
    """Class-weighted binary cross-entropy and its gradient w.r.t. the logits."""
    z, y, w = logits, labels, weights
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = float(np.mean(w * per))
    dz = w * (sigmoid(z) - y) / z.shape[0]
    return loss, dz


class Adam:
    def __init__(
        self,
        store: ParamStore,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(store.size)
        self.v = np.zeros(store.size)
        self.t = 0

    def step(self) -> None:
        g = self.store.grads
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        self.store.vector -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    norm = float(np.linalg.norm(store.grads))
    if max_norm > 0 and norm > max_norm:
        store.grads *= max_norm / norm
    return norm


_CKPT_VERSION = 1


def write_checkpoint(
    path: str | Path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]
) -> None:
    """Versioned binary checkpoint: magic, JSON metadata block, named
    little-endian float64 arrays, trailing CRC32 of everything before it."""
    meta = dict(meta)
    meta["_format_version"] = _CKPT_VERSION
    meta["_arrays"] = {name: list(arr.shape) for name, arr in arrays.items()}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = magic + struct.pack("<q", len(blob)) + blob
    for name in sorted(arrays):
        body += np.ascontiguousarray(arrays[name], dtype="<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(body)


def read_checkpoint(path: str | Path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < len(magic) + 12:
        raise ValueError("checkpoint file truncated")
    body, crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) != crc:
        raise ValueError("checkpoint CRC mismatch")
    if not body.startswith(magic):
        raise ValueError("checkpoint magic mismatch")
    offset = len(magic)
    (meta_len,) = struct.unpack("<q", body[offset : offset + 8])
    offset += 8
    meta = json.loads(body[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    arrays: dict[str, np.ndarray] = {}
    for name in sorted(meta["_arrays"]):
        shape = tuple(meta["_arrays"][name])
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = (
            np.frombuffer(body, dtype="<f8", count=size, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += size * 8
    return meta, arrays
