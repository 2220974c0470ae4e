"""Saturated double-integrator agents, stepped with semi-implicit Euler."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DynamicsConfig:
    v_max: float = 1.0
    a_max: float = 1.0
    dt: float = 0.02

    def __post_init__(self):
        if min(self.v_max, self.a_max, self.dt) <= 0:
            raise ValueError("v_max, a_max and dt must all be positive")


@dataclass
class SwarmState:
    """Positions ``p`` and velocities ``v``, both ``(n, 2)``."""

    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.p = np.array(self.p, dtype=np.float64).reshape(-1, 2)
        self.v = np.array(self.v, dtype=np.float64).reshape(-1, 2)
        if self.p.shape != self.v.shape or len(self.p) < 1:
            raise ValueError("positions and velocities must both be (n, 2) with n >= 1")

    @property
    def n(self) -> int:
        return len(self.p)

    @classmethod
    def at_rest(cls, positions) -> "SwarmState":
        p = np.array(positions, dtype=np.float64).reshape(-1, 2)
        return cls(p, np.zeros_like(p))

    def copy(self) -> "SwarmState":
        return SwarmState(self.p.copy(), self.v.copy())


def clamp_norm(vec, max_norm: float):
    """Rescale ``vec`` (last axis) to norm ``max_norm`` if it is longer."""
    vec = np.asarray(vec, dtype=np.float64)
    norms = np.sqrt(np.sum(vec * vec, axis=-1, keepdims=True))
    scale = np.where(norms > max_norm, max_norm / np.where(norms > 0, norms, 1.0), 1.0)
    return vec * scale


def integrate_step(state: SwarmState, accels, cfg: DynamicsConfig) -> SwarmState:
    a = np.asarray(accels, dtype=np.float64)
    if a.shape != state.p.shape:
        raise ValueError(f"expected {state.n} accelerations, got array of shape {a.shape}")
    a = clamp_norm(a, cfg.a_max)
    v = clamp_norm(state.v + a * cfg.dt, cfg.v_max)
    return SwarmState(state.p + v * cfg.dt, v)
