"""Coverage potentials, their gradients, and the classical damped controller.

Agent-domain term ``U_h`` penalises agents closer than ``r_d / 2`` to the
boundary (or outside it); the pair term ``U_I`` penalises agents closer than
``r_d`` to each other. Branch boundaries belong to the zero branch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from swarmcover import kernels
from swarmcover.dynamics import SwarmState
from swarmcover.geometry import BoundaryProjection, Polygon


@dataclass(frozen=True)
class PotentialParams:
    r_d: float
    c: float = 1.0

    def __post_init__(self):
        if self.r_d <= 0:
            raise ValueError("r_d must be positive")
        if self.c < 0:
            raise ValueError("damping must be non-negative")


def agent_domain_potential(sd: float, r_d: float) -> float:
    if sd <= -0.5 * r_d:
        return 0.0
    return 0.5 * (sd + 0.5 * r_d) ** 2


def agent_domain_gradient(proj: BoundaryProjection, r_d: float) -> np.ndarray:
    sd = proj.inside * proj.distance
    if sd <= -0.5 * r_d:
        return np.zeros(2)
    return (sd + 0.5 * r_d) * proj.inside * proj.direction


def pair_potential(dist: float, r_d: float) -> float:
    if dist >= r_d:
        return 0.0
    return 0.5 * (dist - r_d) ** 2


def pair_gradient(p_ij, r_d: float, pair=(0, 1)) -> np.ndarray:
    """Gradient of ``U_I`` w.r.t. the first agent of ``pair``.

    Coincident agents get the fixed direction ``kernels.coincident_direction``
    so the pair still separates deterministically.
    """
    p_ij = np.asarray(p_ij, dtype=np.float64)
    d = float(np.hypot(p_ij[0], p_ij[1]))
    if d >= r_d:
        return np.zeros(2)
    if d == 0.0:
        unit = np.array(kernels.coincident_direction(*pair))
    else:
        unit = p_ij / d
    return (d - r_d) * unit


def individual_potentials(swarm: SwarmState, poly: Polygon, params: PotentialParams) -> np.ndarray:
    """All per-agent potentials at once, shape ``(n,)``."""
    return kernels.individual_potentials(poly.vertices, swarm.p, params.r_d)


def individual_potential(i: int, swarm: SwarmState, poly: Polygon, params: PotentialParams) -> float:
    return float(individual_potentials(swarm, poly, params)[i])


def total_potential(swarm: SwarmState, poly: Polygon, params: PotentialParams) -> float:
    return float(np.sum(individual_potentials(swarm, poly, params)))


def classical_control(swarm: SwarmState, poly: Polygon, params: PotentialParams,
                      a_max: float, clamp: bool = True) -> np.ndarray:
    """Accelerations ``-grad U_h - sum_j grad U_I - c v``, norm-clamped to ``a_max``."""
    return kernels.classical_accels(poly.vertices, swarm.p, swarm.v, params.r_d,
                                    params.c, a_max, clamp)
