"""Shared LSTM Gaussian actor and attention value-decomposition critic."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from swarmcover.dynamics import clamp_norm
from swarmcover.env import OWN_DIM, Observation
from swarmcover.neural import MLP, AttentionBlock, Dense, LayerNorm, LSTMCell, Module, Param

LOG_STD_MIN = math.log(1e-4)
LOG_STD_MAX = math.log(10.0)
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GaussianPolicy:
    mean: np.ndarray
    std: np.ndarray


class ActorNet(Module):
    """LSTM over the sorted relative positions, MLP over ``[h, own]``.

    Batched: ``own`` is ``(B, 8)`` and ``others`` is ``(B, L, 2)`` with one
    ``L`` per call, so batches are grouped by agent count.
    """

    def __init__(self, hidden=64, trunk=(64, 64), init_log_std=0.0, seed=0):
        rng = np.random.default_rng(seed)
        self.lstm = LSTMCell(2, hidden, rng)
        self.trunk = MLP([hidden + OWN_DIM, *trunk], out_activation="tanh", rng=rng)
        self.mean_head = Dense(trunk[-1], 2, "identity", rng)
        self.mean_head.W.value *= 0.01
        self.log_std = Param(np.full(2, float(init_log_std)))
        self.hidden = hidden
        self.config = {"hidden": hidden, "trunk": list(trunk), "init_log_std": init_log_std}

    def clamped_log_std(self):
        return np.clip(self.log_std.value, LOG_STD_MIN, LOG_STD_MAX)

    def forward(self, own, others):
        own = np.asarray(own, dtype=np.float64)
        others = np.asarray(others, dtype=np.float64)
        if others.ndim == 2:
            others = others.reshape(len(own), 0, 2)
        h = self.lstm.forward(others)
        return self.mean_head.forward(self.trunk.forward(np.concatenate([h, own], axis=1)))

    def backward(self, dmean, dlog_std=None):
        dx = self.trunk.backward(self.mean_head.backward(dmean))
        self.lstm.backward(dx[:, :self.hidden])
        if dlog_std is not None:
            inside = (self.log_std.value > LOG_STD_MIN) & (self.log_std.value < LOG_STD_MAX)
            self.log_std.grad += np.where(inside, dlog_std, 0.0)

    def log_prob(self, own, others, actions):
        """Diagonal-Gaussian log-density of raw ``actions``; also returns the mean."""
        mean = self.forward(own, others)
        return gaussian_log_prob(actions, mean, self.clamped_log_std()), mean

    def policy(self, obs: Observation) -> GaussianPolicy:
        mean = self.forward(obs.own[None], obs.others[None])[0]
        return GaussianPolicy(mean, np.exp(self.clamped_log_std()))


def gaussian_log_prob(actions, mean, log_std):
    z = (np.asarray(actions) - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_log_prob_grads(actions, mean, log_std):
    """d log_prob / d mean ``(B, 2)`` and d log_prob / d log_std ``(B, 2)``."""
    inv_var = np.exp(-2.0 * log_std)
    diff = np.asarray(actions) - mean
    return diff * inv_var, diff * diff * inv_var - 1.0


def actor_forward(net: ActorNet, obs: Observation) -> GaussianPolicy:
    return net.policy(obs)


def sample_action(policy: GaussianPolicy, rng, a_max: float):
    """Draw a raw Gaussian action. Returns ``(env_action, raw, log_prob)``.

    The log-probability is that of the raw draw; the environment sees the
    norm-clamped action.
    """
    raw = policy.mean + policy.std * rng.standard_normal(np.shape(policy.mean))
    logp = gaussian_log_prob(raw, policy.mean, np.log(policy.std))
    return clamp_norm(raw, a_max), raw, float(logp)


def deterministic_action(policy: GaussianPolicy, a_max: float):
    return clamp_norm(policy.mean, a_max)


class CriticNet(Module):
    """Per-agent values from ``LayerNorm(E + attention(E))`` with ``E = embed(s)``.

    The residual needs ``d_v == d_m``.
    """

    def __init__(self, d_in=OWN_DIM, d_m=64, d_k=32, d_v=64, value_hidden=(64, 64), seed=1):
        if d_v != d_m:
            raise ValueError("residual connection needs d_v == d_m")
        rng = np.random.default_rng(seed)
        self.embed = Dense(d_in, d_m, "identity", rng)
        self.attention = AttentionBlock(d_m, d_k, d_v, rng)
        self.norm = LayerNorm(d_m)
        self.value_mlp = MLP([d_m, *value_hidden, 1], out_activation="identity", rng=rng)
        self.config = {"d_in": d_in, "d_m": d_m, "d_k": d_k, "d_v": d_v,
                       "value_hidden": list(value_hidden)}

    def forward(self, states):
        """``states`` is ``(B, n, d_in)`` (or ``(n, d_in)``); returns ``(B, n)`` values."""
        S = np.asarray(states, dtype=np.float64)
        squeeze = S.ndim == 2
        if squeeze:
            S = S[None]
        E = self.embed.forward(S)
        Z = self.norm.forward(E + self.attention.forward(E))
        values = self.value_mlp.forward(Z)[..., 0]
        self._squeeze = squeeze
        return values[0] if squeeze else values

    def backward(self, dvalues):
        dv = np.asarray(dvalues, dtype=np.float64)
        if self._squeeze:
            dv = dv[None]
        dZ = self.value_mlp.backward(dv[..., None])
        dR = self.norm.backward(dZ)
        dE = dR + self.attention.backward(dR)
        self.embed.backward(dE)


def critic_values(net: CriticNet, state_matrix) -> np.ndarray:
    return net.forward(state_matrix)


def value_sum(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("value_sum needs at least one agent")
    return float(np.sum(values))


def build_actor(config: dict | None = None, seed=0) -> ActorNet:
    cfg = dict(config or {})
    return ActorNet(hidden=cfg.get("hidden", 64), trunk=tuple(cfg.get("trunk", (64, 64))),
                    init_log_std=cfg.get("init_log_std", 0.0), seed=seed)


def build_critic(config: dict | None = None, seed=1) -> CriticNet:
    cfg = dict(config or {})
    return CriticNet(d_in=cfg.get("d_in", OWN_DIM), d_m=cfg.get("d_m", 64), d_k=cfg.get("d_k", 32),
                     d_v=cfg.get("d_v", 64), value_hidden=tuple(cfg.get("value_hidden", (64, 64))),
                     seed=seed)
