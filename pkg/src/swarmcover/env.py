"""Coverage environment: observations, potential-shaped rewards, episodes."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from swarmcover import kernels
from swarmcover.dynamics import DynamicsConfig, SwarmState, integrate_step
from swarmcover.geometry import Polygon, ball_in_domain, coverage_radius, unit_square
from swarmcover.potentials import PotentialParams, individual_potentials

OWN_DIM = 8
SUCCESS_THRESHOLD = 0.15


@dataclass(frozen=True)
class EnvConfig:
    poly: Polygon = field(default_factory=unit_square)
    n: int = 9
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    horizon: float = 30.0
    gamma: float = 0.99
    seed: int = 0
    c: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one agent")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        steps = self.horizon / self.dynamics.dt
        if abs(steps - round(steps)) > 1e-6 or round(steps) < 1:
            raise ValueError(f"horizon {self.horizon} is not a whole number of dt={self.dynamics.dt} steps")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dynamics.dt))

    @property
    def r_d(self) -> float:
        return coverage_radius(self.poly, self.n)

    def potential_params(self) -> PotentialParams:
        return PotentialParams(self.r_d, self.c)


@dataclass
class Observation:
    own: np.ndarray     # (8,): p, v, d_hat, |d|, indicator
    others: np.ndarray  # (n - 1, 2): relative positions, farthest first


@dataclass
class StepResult:
    next: SwarmState
    individual_rewards: np.ndarray
    global_reward: float
    done: bool


def reset(cfg: EnvConfig, seed: int | None = None, max_retries: int = 100) -> SwarmState:
    """Agents on a jittered horizontal line one ``r_d`` below the domain, at rest."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    r_d = cfg.r_d
    xmin, ymin, xmax, _ = cfg.poly.bounds
    xs = 0.5 * (xmin + xmax) + (np.arange(cfg.n) - 0.5 * (cfg.n - 1)) * r_d
    base = np.column_stack([xs, np.full(cfg.n, ymin - r_d)])
    for _ in range(max_retries):
        p = base + rng.uniform(-0.1 * r_d, 0.1 * r_d, size=base.shape)
        _, _, ind, _ = kernels.project_points(cfg.poly.vertices, p)
        if np.all(ind > 0):
            return SwarmState.at_rest(p)
    raise RuntimeError("could not place the initial line outside the domain")


def state_matrix(swarm: SwarmState, poly: Polygon) -> np.ndarray:
    """Stack of per-agent internal states, shape ``(n, 8)``."""
    proj, dist, ind, edge = kernels.project_points(poly.vertices, swarm.p)
    dhat = kernels.boundary_directions(poly.vertices, swarm.p, proj, dist, edge)
    return np.column_stack([swarm.p, swarm.v, dhat, dist, ind])


def sort_others(rel: np.ndarray) -> np.ndarray:
    """Order relative positions by descending norm; equal norms keep index order."""
    norms = np.sqrt(np.sum(rel * rel, axis=-1))
    order = np.argsort(-norms, kind="stable")
    return rel[order]


def observe_all(swarm: SwarmState, poly: Polygon):
    """Observations for every agent as arrays ``own (n, 8)`` and ``others (n, n-1, 2)``."""
    own = state_matrix(swarm, poly)
    n = swarm.n
    rel = swarm.p[:, None, :] - swarm.p[None, :, :]
    key = -np.sqrt(np.sum(rel * rel, axis=-1))
    # self goes last, then gets dropped; stable sort keeps index order on ties
    np.fill_diagonal(key, np.inf)
    order = np.argsort(key, axis=1, kind="stable")[:, :n - 1]
    others = np.take_along_axis(rel, order[..., None], axis=1)
    return own, others


def observe(i: int, swarm: SwarmState, poly: Polygon) -> Observation:
    own = state_matrix(swarm, poly)[i]
    mask = np.arange(swarm.n) != i
    return Observation(own, sort_others(swarm.p[i] - swarm.p[mask]))


def saturation_constant(poly: Polygon | None, n: int, r_d: float) -> float:
    """Supremum of the total potential over configurations with every agent inside.

    Reached with all agents stacked on the boundary: each ``2 U_h`` is
    ``r_d^2 / 4`` and each ordered pair adds ``r_d^2 / 2``.
    """
    return n * r_d * r_d / 4.0 + n * (n - 1) * r_d * r_d / 2.0


def individual_rewards(next_state: SwarmState, poly: Polygon, params: PotentialParams,
                       M: float) -> np.ndarray:
    phi = individual_potentials(next_state, poly, params)
    _, _, ind, _ = kernels.project_points(poly.vertices, next_state.p)
    return np.where(ind > 0, -M, -phi)


def individual_reward(i: int, next_state: SwarmState, poly: Polygon,
                      params: PotentialParams, M: float) -> float:
    return float(individual_rewards(next_state, poly, params, M)[i])


def step(swarm: SwarmState, actions, cfg: EnvConfig, params: PotentialParams,
         t: int = 0, M: float | None = None) -> StepResult:
    """Advance one ``dt``. ``t`` is the number of steps already taken."""
    if M is None:
        M = saturation_constant(cfg.poly, cfg.n, params.r_d)
    nxt = integrate_step(swarm, actions, cfg.dynamics)
    rewards = individual_rewards(nxt, cfg.poly, params, M)
    return StepResult(nxt, rewards, float(np.sum(rewards)), t + 1 >= cfg.steps)


class CoverageEnv:
    """Stateful wrapper owning the swarm, the step counter and the RNG seed."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.params = cfg.potential_params()
        self.M = saturation_constant(cfg.poly, cfg.n, self.params.r_d)
        self.state: SwarmState | None = None
        self.t = 0

    def reset(self, seed: int | None = None, state: SwarmState | None = None) -> SwarmState:
        self.state = reset(self.cfg, seed) if state is None else state.copy()
        self.t = 0
        return self.state

    def observe_all(self):
        return observe_all(self.state, self.cfg.poly)

    def state_matrix(self) -> np.ndarray:
        return state_matrix(self.state, self.cfg.poly)

    def potential(self) -> float:
        return float(np.sum(individual_potentials(self.state, self.cfg.poly, self.params)))

    def step(self, actions) -> StepResult:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        if self.t >= self.cfg.steps:
            raise RuntimeError("episode already finished")
        res = step(self.state, actions, self.cfg, self.params, self.t, self.M)
        self.state = res.next
        self.t += 1
        return res


def is_subcover(swarm: SwarmState, poly: Polygon, l: float) -> bool:
    if l <= 0:
        raise ValueError("l must be positive")
    for p in swarm.p:
        if not ball_in_domain(poly, p, 0.5 * l):
            return False
    diff = swarm.p[:, None, :] - swarm.p[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(dist, np.inf)
    return bool(np.all(dist >= l - 1e-9))


def success_and_convergence(trace, threshold: float = SUCCESS_THRESHOLD,
                            horizon: float | None = None, times=None):
    """Earliest time after which the potential stays below ``threshold``.

    ``trace`` holds samples at ``times`` (default ``0, dt, ..., horizon`` spread
    evenly). Returns ``(success, t_star)``; ``t_star`` is ``None`` on failure.
    """
    phi = np.asarray(trace, dtype=np.float64)
    if times is None:
        if horizon is None:
            raise ValueError("need either horizon or explicit times")
        times = np.linspace(0.0, horizon, len(phi))
    times = np.asarray(times, dtype=np.float64)
    if horizon is None:
        horizon = float(times[-1])
    above = np.flatnonzero(~(phi < threshold))
    if len(above) == 0:
        k = 0
    elif above[-1] == len(phi) - 1:
        return False, None
    else:
        k = above[-1] + 1
    t_star = float(times[k])
    if t_star >= horizon:
        return False, None
    return True, t_star


def first_entry_index(inside_all) -> int | None:
    idx = np.flatnonzero(np.asarray(inside_all, dtype=bool))
    return int(idx[0]) if len(idx) else None


def overshoots(trace, inside_all, rtol: float = 1e-9) -> bool:
    """True if the potential rises at any point after the swarm first fits inside."""
    k = first_entry_index(inside_all)
    if k is None:
        return False
    tail = np.asarray(trace, dtype=np.float64)[k:]
    rises = np.diff(tail) > rtol * np.maximum(np.abs(tail[:-1]), 1e-12)
    return bool(np.any(rises))


TRAJECTORY_COLUMNS = ["step", "agent", "p_x", "p_y", "v_x", "v_y", "a_x", "a_y", "reward"]
POTENTIAL_COLUMNS = ["step", "time_s", "phi"]


def _fmt(x) -> str:
    return repr(float(x))


def write_trajectory_csv(path, positions, velocities, accels, rewards):
    """``positions``/``velocities`` are ``(T+1, n, 2)``; ``accels``/``rewards`` cover the
    ``T`` transitions and are blank on the final row."""
    T1, n, _ = positions.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for t in range(T1):
            for i in range(n):
                if t < T1 - 1:
                    a = (_fmt(accels[t, i, 0]), _fmt(accels[t, i, 1]), _fmt(rewards[t, i]))
                else:
                    a = ("", "", "")
                w.writerow([t, i, _fmt(positions[t, i, 0]), _fmt(positions[t, i, 1]),
                            _fmt(velocities[t, i, 0]), _fmt(velocities[t, i, 1]), *a])


def write_potential_csv(path, phi, dt: float):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POTENTIAL_COLUMNS)
        for t, value in enumerate(phi):
            w.writerow([t, _fmt(t * dt), _fmt(value)])


def read_potential_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    times = np.array([float(r["time_s"]) for r in rows])
    phi = np.array([float(r["phi"]) for r in rows])
    return times, phi


def exact_grid(poly: Polygon, n: int) -> SwarmState | None:
    """Square-lattice subcover for square domains with square ``n``, else ``None``."""
    k = int(round(math.sqrt(n)))
    if k * k != n:
        return None
    xmin, ymin, xmax, ymax = poly.bounds
    side = xmax - xmin
    if abs((ymax - ymin) - side) > 1e-12 or len(poly) != 4:
        return None
    step = side / k
    pts = [(xmin + step * (a + 0.5), ymin + step * (b + 0.5)) for a in range(k) for b in range(k)]
    return SwarmState.at_rest(pts)
