"""Behaviour-cloning pre-training and clipped multi-agent PPO.

Rollouts are grouped by agent count so the LSTM actor can run batched; the
critic sees the full ``(n, 8)`` state matrix at every step. Per-iteration
randomness comes from ``SeedSequence([seed, iteration, ...])`` so resuming
from a checkpoint replays the same numbers.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from swarmcover.config import TrainConfig
from swarmcover.env import CoverageEnv, EnvConfig
from swarmcover.nets import (
    ActorNet,
    CriticNet,
    build_actor,
    build_critic,
    gaussian_log_prob,
    gaussian_log_prob_grads,
)
from swarmcover.neural import load_arrays, make_optimizer, save_arrays
from swarmcover.potentials import classical_control

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


def episode_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass
class Trajectory:
    env_id: int
    n: int
    seed: int
    states: np.ndarray       # (T, n, 8); also the agents' own observations
    others: np.ndarray       # (T, n, n-1, 2)
    actions: np.ndarray      # (T, n, 2) raw actions
    rewards: np.ndarray      # (T, n) individual rewards
    positions: np.ndarray    # (T+1, n, 2)
    velocities: np.ndarray   # (T+1, n, 2)
    phi: np.ndarray          # (T+1,) total potential
    log_probs: np.ndarray | None = None  # (T, n)
    values: np.ndarray | None = None     # (T, n)
    poly_id: str = ""

    @property
    def steps(self) -> int:
        return len(self.rewards)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


def run_episode(env: CoverageEnv, act, seed: int, env_id: int = 0, state=None,
                observe: bool = True) -> Trajectory:
    """Roll ``act(own, others, swarm) -> raw actions`` through one episode.

    With ``observe=False`` no observations are built: ``act`` receives ``None``
    for both and the trajectory's ``states``/``others`` are empty.
    """
    swarm = env.reset(seed, state=state)
    cfg = env.cfg
    T, n = cfg.steps, cfg.n
    T_obs = T if observe else 0
    states = np.empty((T_obs, n, 8))
    others = np.empty((T_obs, n, n - 1, 2))
    actions = np.empty((T, n, 2))
    rewards = np.empty((T, n))
    pos = np.empty((T + 1, n, 2))
    vel = np.empty((T + 1, n, 2))
    phi = np.empty(T + 1)
    pos[0], vel[0], phi[0] = swarm.p, swarm.v, env.potential()
    for t in range(T):
        own = oth = None
        if observe:
            own, oth = env.observe_all()
            states[t], others[t] = own, oth
        raw = act(own, oth, env.state)
        actions[t] = raw
        res = env.step(raw)
        rewards[t] = res.individual_rewards
        pos[t + 1], vel[t + 1] = res.next.p, res.next.v
        phi[t + 1] = env.potential()
    return Trajectory(env_id, n, seed, states, others, actions, rewards, pos, vel, phi)


# expert data

@dataclass
class ExpertDataset:
    """(observation, expert action) pairs grouped by agent count."""

    groups: dict = field(default_factory=dict)  # n -> (own (N, 8), others (N, n-1, 2), actions (N, 2))

    def __len__(self):
        return sum(len(g[2]) for g in self.groups.values())

    @classmethod
    def from_trajectories(cls, trajs) -> "ExpertDataset":
        parts = defaultdict(lambda: ([], [], []))
        for tr in trajs:
            own, oth, act = parts[tr.n]
            own.append(tr.states.reshape(-1, 8))
            oth.append(tr.others.reshape(-1, tr.n - 1, 2))
            act.append(tr.actions.reshape(-1, 2))
        return cls({n: (np.concatenate(o), np.concatenate(h), np.concatenate(a))
                    for n, (o, h, a) in sorted(parts.items())})


def expert_rollouts(envs: list[EnvConfig], episodes: int, seed: int = 0) -> list[Trajectory]:
    """Classical-controller episodes, ``episodes`` per environment."""
    out = []
    for env_id, cfg in enumerate(envs):
        env = CoverageEnv(cfg)

        def act(own, oth, swarm, env=env, cfg=cfg):
            return classical_control(swarm, cfg.poly, env.params, cfg.dynamics.a_max)

        for k in range(episodes):
            out.append(run_episode(env, act, episode_seed(seed, env_id, k), env_id))
    return out


def generate_expert_dataset(envs: list[EnvConfig], episodes: int, seed: int = 0) -> ExpertDataset:
    return ExpertDataset.from_trajectories(expert_rollouts(envs, episodes, seed))


def _batches(rng, size, batch):
    order = rng.permutation(size)
    for start in range(0, size, batch):
        yield order[start:start + batch]


def bc_loss(actor: ActorNet, data: ExpertDataset, chunk: int = 8192) -> float:
    """Mean over pairs of the squared distance between expert action and policy mean."""
    total, count = 0.0, 0
    for own, oth, act in data.groups.values():
        for s in range(0, len(act), chunk):
            mean = actor.forward(own[s:s + chunk], oth[s:s + chunk])
            total += float(np.sum((act[s:s + chunk] - mean) ** 2))
            count += len(mean)
    return total / count


def bc_pretrain(actor: ActorNet, data: ExpertDataset, epochs: int = 20, lr: float = 1e-3,
                batch: int = 512, seed: int = 0, optimizer: str = "adam") -> list[float]:
    """Regress the policy mean onto expert actions. Returns the loss before
    training followed by the loss after each epoch."""
    if len(data) == 0:
        raise ValueError("empty expert dataset")
    params = {k: p for k, p in actor.named_params().items() if not k.startswith("log_std")}
    opt = make_optimizer(optimizer, params, lr)
    rng = np.random.default_rng(seed)
    curve = [bc_loss(actor, data)]
    for epoch in range(epochs):
        for n, (own, oth, act) in data.groups.items():
            for idx in _batches(rng, len(act), batch):
                actor.zero_grad()
                mean = actor.forward(own[idx], oth[idx])
                actor.backward(-2.0 * (act[idx] - mean) / len(idx))
                opt.step()
        curve.append(bc_loss(actor, data))
        log.info("bc epoch %d loss %.6g", epoch + 1, curve[-1])
    return curve


# returns, advantages, losses

def monte_carlo_returns(rewards, gamma: float) -> np.ndarray:
    """Discounted reward-to-go along axis 0, no bootstrap past the last step."""
    r = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(r)
    acc = np.zeros(r.shape[1:])
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def individual_advantages(returns, values) -> np.ndarray:
    return np.asarray(returns, dtype=np.float64) - np.asarray(values, dtype=np.float64)


def normalize(x):
    x = np.asarray(x, dtype=np.float64)
    return (x - x.mean()) / (x.std() + 1e-8)


def clipped_surrogate(log_probs, old_log_probs, advantages, clip_eps: float):
    """Mean clipped surrogate and its gradient w.r.t. the new log-probabilities."""
    ratio = np.exp(np.asarray(log_probs) - np.asarray(old_log_probs))
    adv = np.asarray(advantages, dtype=np.float64)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    objective = float(np.mean(np.minimum(unclipped, clipped)))
    # gradient flows only where the unclipped term is the minimum
    active = unclipped <= clipped
    grad = np.where(active, unclipped, 0.0) / adv.size
    return objective, grad


@dataclass
class PolicyBatch:
    own: np.ndarray
    others: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray


def ppo_clip_loss(batch: PolicyBatch, actor: ActorNet, clip_eps: float) -> float:
    logp, _ = actor.log_prob(batch.own, batch.others, batch.actions)
    return clipped_surrogate(logp, batch.old_log_probs, batch.advantages, clip_eps)[0]


def critic_loss(values, targets) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(np.mean((np.asarray(targets) - v) ** 2))


def critic_loss_grad(values, targets):
    v = np.asarray(values, dtype=np.float64)
    return -2.0 * (np.asarray(targets) - v) / v.size


def critic_pretrain(critic: CriticNet, trajectories, gamma: float, lr: float = 1e-3,
                    epochs: int = 5, batch: int = 256, seed: int = 0,
                    optimizer: str = "adam") -> list[float]:
    """Fit per-agent values to Monte-Carlo returns; loss before and after each epoch."""
    groups = defaultdict(lambda: ([], []))
    for tr in trajectories:
        s, g = groups[tr.n]
        s.append(tr.states)
        g.append(monte_carlo_returns(tr.rewards, gamma))
    data = {n: (np.concatenate(s), np.concatenate(g)) for n, (s, g) in sorted(groups.items())}
    opt = make_optimizer(optimizer, critic.named_params(), lr)
    rng = np.random.default_rng(seed)

    def full_loss():
        tot, cnt = 0.0, 0
        for S, G in data.values():
            v = critic.forward(S)
            tot += float(np.sum((G - v) ** 2))
            cnt += G.size
        return tot / cnt

    curve = [full_loss()]
    for _ in range(epochs):
        for S, G in data.values():
            for idx in _batches(rng, len(S), batch):
                critic.zero_grad()
                v = critic.forward(S[idx])
                critic.backward(critic_loss_grad(v, G[idx]))
                opt.step()
        curve.append(full_loss())
    return curve


# rollouts

def collect_rollouts(envs: list[EnvConfig], actor: ActorNet, critic: CriticNet | None,
                     trajectories_per_env: int, seed: int = 0, iteration: int = 0,
                     deterministic: bool = False) -> list[Trajectory]:
    trajs = []
    std = np.exp(actor.clamped_log_std())
    for env_id, cfg in enumerate(envs):
        env = CoverageEnv(cfg)
        for k in range(trajectories_per_env):
            ep_seed = episode_seed(seed, iteration, env_id, k)
            noise_rng = np.random.default_rng(episode_seed(seed, iteration, env_id, k, 1))
            logps = []

            def act(own, oth, swarm):
                mean = actor.forward(own, oth)
                raw = mean if deterministic else mean + std * noise_rng.standard_normal(mean.shape)
                logps.append(gaussian_log_prob(raw, mean, np.log(std)))
                return raw

            try:
                tr = run_episode(env, act, ep_seed, env_id)
            except Exception as exc:
                raise RuntimeError(f"rollout failed in env {env_id}: {exc}") from exc
            tr.log_probs = np.array(logps)
            if critic is not None:
                tr.values = critic.forward(tr.states)
            trajs.append(tr)
    return trajs


def _policy_groups(trajs, gamma, normalize_adv):
    returns = [monte_carlo_returns(tr.rewards, gamma) for tr in trajs]
    advs = [individual_advantages(g, tr.values) for g, tr in zip(returns, trajs)]
    if normalize_adv:
        flat = np.concatenate([a.ravel() for a in advs])
        mu, sd = flat.mean(), flat.std() + 1e-8
        advs = [(a - mu) / sd for a in advs]
    pol = defaultdict(lambda: ([], [], [], [], []))
    crit = defaultdict(lambda: ([], []))
    for tr, g, a in zip(trajs, returns, advs):
        o, h, ac, lp, ad = pol[tr.n]
        o.append(tr.states.reshape(-1, 8))
        h.append(tr.others.reshape(-1, tr.n - 1, 2))
        ac.append(tr.actions.reshape(-1, 2))
        lp.append(tr.log_probs.ravel())
        ad.append(a.ravel())
        s, tg = crit[tr.n]
        s.append(tr.states)
        tg.append(g)
    policy = {n: PolicyBatch(*(np.concatenate(x) for x in parts)) for n, parts in sorted(pol.items())}
    critic = {n: (np.concatenate(s), np.concatenate(g)) for n, (s, g) in sorted(crit.items())}
    return policy, critic


def ppo_update(actor: ActorNet, critic: CriticNet, trajs, cfg: TrainConfig, actor_opt, critic_opt,
               rng) -> dict:
    policy, values = _policy_groups(trajs, cfg.gamma, cfg.normalize_advantages)
    objs, closses = [], []
    for _ in range(cfg.update_epochs):
        for n, b in policy.items():
            for idx in _batches(rng, len(b.actions), cfg.minibatch_size):
                actor.zero_grad()
                log_std = actor.clamped_log_std()
                mean = actor.forward(b.own[idx], b.others[idx])
                logp = gaussian_log_prob(b.actions[idx], mean, log_std)
                obj, dlogp = clipped_surrogate(logp, b.old_log_probs[idx], b.advantages[idx],
                                               cfg.clip_eps)
                dmean, dls = gaussian_log_prob_grads(b.actions[idx], mean, log_std)
                # ascent direction on objective + entropy bonus, fed as gradients
                dls_total = (dlogp[:, None] * dls).sum(axis=0) + cfg.entropy_coeff
                actor.backward(dlogp[:, None] * dmean, dls_total)
                actor_opt.step(ascent=True)
                objs.append(obj)
        for n, (S, G) in values.items():
            batch_t = max(1, cfg.minibatch_size // n)
            for idx in _batches(rng, len(S), batch_t):
                critic.zero_grad()
                v = critic.forward(S[idx])
                closses.append(critic_loss(v, G[idx]))
                critic.backward(critic_loss_grad(v, G[idx]))
                critic_opt.step()
    out = {"actor_objective": float(np.mean(objs)), "critic_loss": float(np.mean(closses))}
    if not all(math.isfinite(x) for x in out.values()):
        raise TrainingDiverged(f"non-finite loss: {out}")
    for name, p in {**actor.named_params(), **critic.named_params()}.items():
        if not np.all(np.isfinite(p.value)):
            raise TrainingDiverged(f"non-finite parameter {name}")
    return out


# checkpoints

def save_checkpoint(path, actor: ActorNet, critic: CriticNet | None, iteration: int = 0,
                    optimizers: dict | None = None, extra: dict | None = None):
    arrays = {f"actor.{k}": v for k, v in actor.state_dict().items()}
    if critic is not None:
        arrays.update({f"critic.{k}": v for k, v in critic.state_dict().items()})
    for name, opt in (optimizers or {}).items():
        arrays.update({f"optim.{name}.{k}": v for k, v in opt.state_dict().items()})
    meta = {"version": CHECKPOINT_VERSION, "iteration": iteration,
            "actor_config": actor.config, "critic_config": critic.config if critic else None}
    meta.update(extra or {})
    save_arrays(path, arrays, **meta)


def load_checkpoint(path):
    """Returns ``(actor, critic_or_None, meta, arrays)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        arrays, meta = load_arrays(path)
    except (ValueError, KeyError) as exc:
        raise ValueError(f"unreadable checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
    actor = build_actor(meta["actor_config"])
    actor.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("actor.")})
    critic = None
    if meta.get("critic_config"):
        critic = build_critic(meta["critic_config"])
        critic.load_state_dict({k[7:]: v for k, v in arrays.items() if k.startswith("critic.")})
    return actor, critic, meta, arrays


def _optim_state(arrays, name):
    prefix = f"optim.{name}."
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


METRIC_COLUMNS = ["iteration", "mean_return", "mean_final_phi", "actor_objective", "critic_loss",
                  "log_std_x", "log_std_y"]


def train(cfg: TrainConfig, actor: ActorNet, critic: CriticNet, envs: list[EnvConfig] | None = None,
          out_dir=None, resume=None, start_iteration: int = 0) -> list[dict]:
    """MAPPO loop. With ``out_dir`` set, appends to ``metrics.csv`` and writes
    checkpoints every ``checkpoint_every`` iterations."""
    envs = cfg.env_configs() if envs is None else envs
    actor_opt = make_optimizer(cfg.optimizer, actor.named_params(), cfg.actor_lr, cfg.max_grad_norm)
    critic_opt = make_optimizer(cfg.optimizer, critic.named_params(), cfg.critic_lr,
                                cfg.max_grad_norm)
    if resume is not None:
        r_actor, r_critic, meta, arrays = load_checkpoint(resume)
        actor.load_state_dict(r_actor.state_dict())
        critic.load_state_dict(r_critic.state_dict())
        actor_opt.load_state_dict(_optim_state(arrays, "actor"))
        critic_opt.load_state_dict(_optim_state(arrays, "critic"))
        start_iteration = int(meta["iteration"])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        if start_iteration == 0 or not metrics_path.exists():
            with open(metrics_path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(METRIC_COLUMNS)
        else:
            _truncate_metrics(metrics_path, start_iteration)
    history = []
    for it in range(start_iteration, cfg.iterations):
        trajs = collect_rollouts(envs, actor, critic, cfg.trajectories_per_env, cfg.seed, it)
        rng = np.random.default_rng(episode_seed(cfg.seed, it, 7919))
        stats = ppo_update(actor, critic, trajs, cfg, actor_opt, critic_opt, rng)
        ls = actor.clamped_log_std()
        row = {
            "iteration": it,
            "mean_return": float(np.mean([tr.episode_return for tr in trajs])),
            "mean_final_phi": float(np.mean([tr.phi[-1] for tr in trajs])),
            **stats,
            "log_std_x": float(ls[0]),
            "log_std_y": float(ls[1]),
        }
        history.append(row)
        log.info("iter %d return %.4g phi %.4g", it, row["mean_return"], row["mean_final_phi"])
        if out is not None:
            with open(out / "metrics.csv", "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(
                    [row["iteration"]] + [repr(row[c]) for c in METRIC_COLUMNS[1:]])
            done = it + 1
            if done % cfg.checkpoint_every == 0 or done == cfg.iterations:
                save_checkpoint(out / "checkpoints" / f"ckpt_{done:05d}.json", actor, critic, done,
                                {"actor": actor_opt, "critic": critic_opt})
    return history


def _truncate_metrics(path, keep_iterations):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    kept = [rows[0]] + [r for r in rows[1:] if int(r[0]) < keep_iterations]
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(kept)
