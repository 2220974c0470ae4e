"""Small differentiable layers in numpy with hand-written backward passes.

Each layer caches what its last ``forward`` needs and ``backward`` adds
parameter gradients into ``Param.grad`` and returns the input gradient. Call
``forward``/``backward`` in matched pairs; layers are not re-entrant.
All arrays are float64 and batched along leading axes.
"""
from __future__ import annotations

import json
import math

import numpy as np

from swarmcover import kernels

LN_EPS = 1e-5


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


class Module:
    """Anything with named parameters; children are discovered from attributes."""

    def named_params(self, prefix=""):
        out = {}
        for name, obj in vars(self).items():
            if isinstance(obj, Param):
                out[prefix + name] = obj
            elif isinstance(obj, Module):
                out.update(obj.named_params(prefix + name + "."))
            elif isinstance(obj, (list, tuple)) and obj and isinstance(obj[0], Module):
                for k, child in enumerate(obj):
                    out.update(child.named_params(f"{prefix}{name}.{k}."))
        return out

    def zero_grad(self):
        for p in self.named_params().values():
            p.zero_grad()

    def state_dict(self):
        return {k: p.value.copy() for k, p in self.named_params().items()}

    def load_state_dict(self, state):
        params = self.named_params()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} != {p.shape}")
            p.value[...] = v


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Dense(Module):
    def __init__(self, n_in, n_out, activation="tanh", rng=None):
        if activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.W = Param(_uniform(rng, n_in, (n_in, n_out)))
        self.b = Param(np.zeros(n_out))
        self.activation = activation
        self._cache = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.W.shape[0]:
            raise ValueError(f"expected input width {self.W.shape[0]}, got {x.shape[-1]}")
        y = x @ self.W.value + self.b.value
        if self.activation == "tanh":
            y = np.tanh(y)
        self._cache = (x, y)
        return y

    def backward(self, dy):
        x, y = self._cache
        dz = dy * (1.0 - y * y) if self.activation == "tanh" else dy
        n_in, n_out = self.W.shape
        self.W.grad += x.reshape(-1, n_in).T @ dz.reshape(-1, n_out)
        self.b.grad += dz.reshape(-1, n_out).sum(axis=0)
        return dz @ self.W.value.T


class MLP(Module):
    def __init__(self, sizes, out_activation="identity", rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        acts = ["tanh"] * (len(sizes) - 2) + [out_activation]
        self.layers = [Dense(a, b, act, rng) for a, b, act in zip(sizes[:-1], sizes[1:], acts)]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class LSTMCell(Module):
    """Gate order in the packed weights: input, forget, output, candidate."""

    def __init__(self, n_in, hidden, rng=None, forget_bias=1.0):
        rng = np.random.default_rng(0) if rng is None else rng
        self.hidden = hidden
        self.W_x = Param(_uniform(rng, n_in, (n_in, 4 * hidden)))
        self.W_h = Param(_uniform(rng, hidden, (hidden, 4 * hidden)))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = forget_bias
        self.b = Param(b)
        self._cache = None

    def forward(self, seq):
        """``seq`` is ``(B, L, n_in)``; returns the final hidden state ``(B, H)``."""
        seq = np.asarray(seq, dtype=np.float64)
        B, L, n_in = seq.shape
        H = self.hidden
        if L and n_in != self.W_x.shape[0]:
            raise ValueError(f"expected element width {self.W_x.shape[0]}, got {n_in}")
        # time-major buffers so every per-step slice is contiguous
        xs = np.ascontiguousarray(seq.transpose(1, 0, 2))
        gates = np.empty((L, B, 4 * H))
        hs = np.zeros((L + 1, B, H))
        cs = np.zeros((L + 1, B, H))
        tcs = np.empty((L, B, H))
        for t in range(L):
            kernels.lstm_step_forward(hs[t] @ self.W_h.value, xs[t], self.W_x.value, self.b.value,
                                      cs[t], gates[t], cs[t + 1], tcs[t], hs[t + 1])
        self._cache = (xs, gates, hs, cs, tcs)
        return hs[L].copy()

    def backward(self, dh):
        xs, gates, hs, cs, tcs = self._cache
        L, B, n_in = xs.shape
        H = self.hidden
        dh = np.array(dh, dtype=np.float64)
        if L == 0:
            return np.zeros((dh.shape[0], 0, n_in))
        dc = np.zeros_like(dh)
        dZ = np.empty((L, B, 4 * H))
        W_hT = self.W_h.value.T
        for t in range(L - 1, -1, -1):
            kernels.lstm_step_backward(dh, dc, gates[t], cs[t], tcs[t], dZ[t])
            dh = dZ[t] @ W_hT
        flat = dZ.reshape(-1, 4 * H)
        self.W_x.grad += xs.reshape(-1, n_in).T @ flat
        self.W_h.grad += hs[:L].reshape(-1, H).T @ flat
        self.b.grad += flat.sum(axis=0)
        return (dZ @ self.W_x.value.T).transpose(1, 0, 2)


def softmax(s, axis=-1):
    z = s - np.max(s, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


class AttentionBlock(Module):
    """Single-head scaled dot-product self-attention over ``(B, n, d_m)``."""

    def __init__(self, d_m, d_k, d_v, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.d_m, self.d_k, self.d_v = d_m, d_k, d_v
        self.W_q = Param(_uniform(rng, d_m, (d_m, d_k)))
        self.W_k = Param(_uniform(rng, d_m, (d_m, d_k)))
        self.W_v = Param(_uniform(rng, d_m, (d_m, d_v)))
        self._cache = None
        self.last_weights = None

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        squeeze = X.ndim == 2
        if squeeze:
            X = X[None]
        Q = X @ self.W_q.value
        K = X @ self.W_k.value
        V = X @ self.W_v.value
        A = softmax(Q @ np.swapaxes(K, -1, -2) / math.sqrt(self.d_k))
        Y = A @ V
        self._cache = (X, Q, K, V, A, squeeze)
        self.last_weights = A
        return Y[0] if squeeze else Y

    def backward(self, dY):
        X, Q, K, V, A, squeeze = self._cache
        if squeeze:
            dY = dY[None]
        dA = dY @ np.swapaxes(V, -1, -2)
        dV = np.swapaxes(A, -1, -2) @ dY
        dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) / math.sqrt(self.d_k)
        dQ = dS @ K
        dK = np.swapaxes(dS, -1, -2) @ Q
        Xf = X.reshape(-1, self.d_m)
        self.W_q.grad += Xf.T @ dQ.reshape(-1, self.d_k)
        self.W_k.grad += Xf.T @ dK.reshape(-1, self.d_k)
        self.W_v.grad += Xf.T @ dV.reshape(-1, self.d_v)
        dX = dQ @ self.W_q.value.T + dK @ self.W_k.value.T + dV @ self.W_v.value.T
        return dX[0] if squeeze else dX


class LayerNorm(Module):
    def __init__(self, dim):
        self.gain = Param(np.ones(dim))
        self.bias = Param(np.zeros(dim))
        self._cache = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] < 2:
            raise ValueError("layer norm needs at least two features")
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + LN_EPS)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return xhat * self.gain.value + self.bias.value

    def backward(self, dy):
        xhat, inv = self._cache
        d = xhat.shape[-1]
        self.gain.grad += (dy * xhat).reshape(-1, d).sum(axis=0)
        self.bias.grad += dy.reshape(-1, d).sum(axis=0)
        dxhat = dy * self.gain.value
        return inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                          - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True))


# functional forms

def dense_forward(layer: Dense, x):
    return layer.forward(x)


def lstm_sequence_forward(cell: LSTMCell, sequence):
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.size == 0:
        return np.zeros(cell.hidden)
    return cell.forward(seq.reshape(1, len(seq), -1))[0]


def attention_forward(block: AttentionBlock, X):
    return block.forward(X)


def layer_norm_forward(x, gain, bias):
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias


# optimisers

class SGD:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self, ascent=False):
        sign = 1.0 if ascent else -1.0
        for p in self.params.values():
            p.value += sign * self.lr * p.grad

    def state_dict(self):
        return {}

    def load_state_dict(self, state):
        pass


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, max_grad_norm=None):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self, ascent=False):
        self.t += 1
        sign = 1.0 if ascent else -1.0
        scale = 1.0
        if self.max_grad_norm is not None:
            total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params.values()))
            if total > self.max_grad_norm:
                scale = self.max_grad_norm / total
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad * scale
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.value += sign * self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self):
        out = {"t": np.array(float(self.t))}
        out.update({f"m.{k}": v for k, v in self.m.items()})
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.array(state[f"m.{k}"], dtype=np.float64)
            self.v[k] = np.array(state[f"v.{k}"], dtype=np.float64)


def make_optimizer(kind, params, lr, max_grad_norm=None):
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr, max_grad_norm=max_grad_norm)
    raise ValueError(f"unknown optimizer {kind!r}")


# checkpoints: JSON map name -> {"shape", "data"} with repr-exact floats

def arrays_to_json(arrays) -> dict:
    return {k: {"shape": list(np.shape(v)), "data": [float(x) for x in np.ravel(v)]}
            for k, v in arrays.items()}


def arrays_from_json(obj) -> dict:
    return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in obj.items()}


def save_arrays(path, arrays, **meta):
    doc = dict(meta)
    doc["arrays"] = arrays_to_json(arrays)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_arrays(path):
    with open(path) as fh:
        doc = json.load(fh)
    return arrays_from_json(doc.pop("arrays")), doc
