"""Small numpy networks with hand-written backpropagation.

Two one-step-ahead forecasters share the same interface: ``forward`` maps a
batch of windows ``(B, T, D)`` to predictions ``(B, D)`` and returns a cache,
``backward`` turns ``dL/dy`` into a gradient dict keyed like ``params``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Conv1DNet:
    """Conv1D (valid padding) -> activation -> flatten -> dense(D)."""

    kind = "conv1d"

    def __init__(self, time_steps: int, n_streams: int, kernel_size: int = 32,
                 filters: int = 5, activation: str = "relu", rng=None):
        if kernel_size > time_steps:
            raise ValueError(
                f"kernel_size={kernel_size} longer than time_steps={time_steps}")
        if activation not in ("relu", "linear", "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(rng)
        self.time_steps = time_steps
        self.n_streams = n_streams
        self.kernel_size = kernel_size
        self.filters = filters
        self.activation = activation
        L = time_steps - kernel_size + 1
        self.params = {
            "conv_w": glorot_uniform(rng, (kernel_size, n_streams, filters),
                                     kernel_size * n_streams, kernel_size * filters),
            "conv_b": np.zeros(filters),
            "dense_w": glorot_uniform(rng, (L * filters, n_streams), L * filters, n_streams),
            "dense_b": np.zeros(n_streams),
        }

    def forward(self, x):
        p = self.params
        # (B, L, D, K) -> contract over K and D
        patches = sliding_window_view(x, self.kernel_size, axis=1)
        z = np.einsum("bldk,kdf->blf", patches, p["conv_w"], optimize=True) + p["conv_b"]
        if self.activation == "relu":
            a = np.maximum(z, 0.0)
        elif self.activation == "tanh":
            a = np.tanh(z)
        else:
            a = z
        flat = a.reshape(a.shape[0], -1)
        y = flat @ p["dense_w"] + p["dense_b"]
        return y, (patches, z, a, flat)

    def backward(self, dy, cache):
        p = self.params
        patches, z, a, flat = cache
        grads = {
            "dense_w": flat.T @ dy,
            "dense_b": dy.sum(axis=0),
        }
        da = (dy @ p["dense_w"].T).reshape(a.shape)
        if self.activation == "relu":
            dz = da * (z > 0)
        elif self.activation == "tanh":
            dz = da * (1.0 - a * a)
        else:
            dz = da
        grads["conv_w"] = np.einsum("bldk,blf->kdf", patches, dz, optimize=True)
        grads["conv_b"] = dz.sum(axis=(0, 1))
        return grads


class LSTMNet:
    """Single LSTM layer (last hidden state) -> dense(D).

    Gate order in the stacked weight matrices is input, forget, cell, output.
    """

    kind = "recurrent"

    def __init__(self, time_steps: int, n_streams: int, units: int = 32, rng=None):
        rng = np.random.default_rng(rng)
        self.time_steps = time_steps
        self.n_streams = n_streams
        self.units = units
        H = units
        self.params = {
            "wx": glorot_uniform(rng, (n_streams, 4 * H), n_streams, 4 * H),
            "wh": glorot_uniform(rng, (H, 4 * H), H, 4 * H),
            "b": np.zeros(4 * H),
            "dense_w": glorot_uniform(rng, (H, n_streams), H, n_streams),
            "dense_b": np.zeros(n_streams),
        }

    def _gate_affine(self):
        # sigmoid(z) = 0.5 * tanh(z / 2) + 0.5, so all four gates come from one tanh
        H = self.units
        scale = np.full(4 * H, 0.5)
        scale[2 * H:3 * H] = 1.0
        shift = np.full(4 * H, 0.5)
        shift[2 * H:3 * H] = 0.0
        return scale, shift

    def forward(self, x):
        p = self.params
        B, T, _ = x.shape
        H = self.units
        scale, shift = self._gate_affine()
        xw = (x @ p["wx"] + p["b"]) * scale  # (B, T, 4H), all input projections at once
        wh = p["wh"] * scale
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        hs = np.empty((T + 1, B, H))
        cs = np.empty((T + 1, B, H))
        gates = np.empty((T, B, 4 * H))
        hs[0] = h
        cs[0] = c
        for t in range(T):
            g = gates[t]
            np.tanh(xw[:, t] + h @ wh, out=g)
            g *= scale
            g += shift
            c = g[:, H:2 * H] * c + g[:, :H] * g[:, 2 * H:3 * H]
            cs[t + 1] = c
            h = g[:, 3 * H:] * np.tanh(c)
            hs[t + 1] = h
        y = h @ p["dense_w"] + p["dense_b"]
        return y, (x, hs, cs, gates)

    def backward(self, dy, cache):
        p = self.params
        x, hs, cs, gates = cache
        T, B = gates.shape[:2]
        H = self.units
        grads = {
            "dense_w": hs[T].T @ dy,
            "dense_b": dy.sum(axis=0),
        }
        i = gates[:, :, :H]
        f = gates[:, :, H:2 * H]
        gg = gates[:, :, 2 * H:3 * H]
        o = gates[:, :, 3 * H:]
        tc = np.tanh(cs[1:])
        # everything that does not depend on the backward recursion
        coef_c = np.stack([gg * i * (1.0 - i),
                           cs[:-1] * f * (1.0 - f),
                           i * (1.0 - gg * gg)], axis=2)  # (T, B, 3, H)
        coef_o = tc * o * (1.0 - o)
        coef_h = o * (1.0 - tc * tc)
        wh_t = p["wh"].T
        dz_all = np.empty_like(gates)
        dz3 = dz_all[:, :, :3 * H].reshape(T, B, 3, H)
        dh = dy @ p["dense_w"].T
        dc = np.zeros_like(dh)
        for t in range(T - 1, -1, -1):
            dc = dc + dh * coef_h[t]
            np.multiply(dc[:, None, :], coef_c[t], out=dz3[t])
            np.multiply(dh, coef_o[t], out=dz_all[t, :, 3 * H:])
            dc = dc * f[t]
            dh = dz_all[t] @ wh_t
        dz_flat = dz_all.transpose(1, 0, 2).reshape(B * T, 4 * H)
        grads["wx"] = x.reshape(B * T, -1).T @ dz_flat
        grads["wh"] = hs[:T].transpose(1, 0, 2).reshape(B * T, H).T @ dz_flat
        grads["b"] = dz_flat.sum(axis=0)
        return grads


def loss_and_grad(y, target, loss: str):
    """Batch-mean of per-sample losses (each averaged over streams) and dL/dy."""
    diff = y - target
    n = diff.size
    if loss == "mse":
        return float(np.mean(diff * diff)), 2.0 * diff / n
    if loss == "mae":
        return float(np.mean(np.abs(diff))), np.sign(diff) / n
    raise ValueError(f"unknown loss {loss!r}")


def per_sample_loss(y, target, loss: str) -> np.ndarray:
    diff = y - target
    if loss == "mse":
        return np.mean(diff * diff, axis=1)
    if loss == "mae":
        return np.mean(np.abs(diff), axis=1)
    raise ValueError(f"unknown loss {loss!r}")


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            params[k] -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
