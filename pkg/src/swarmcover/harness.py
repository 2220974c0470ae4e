"""Simulation, evaluation, training and export commands.

Each ``cmd_*`` function takes a plain dict (usually loaded from a JSON config
file) plus the command-line overrides, writes its artifacts under ``out`` and
returns a small summary dict. Errors surface as :class:`HarnessError` with a
message fit for the terminal.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from swarmcover import kernels
from swarmcover.config import ConfigError, TrainConfig, build_env, build_polygon, domain_name
from swarmcover.dynamics import SwarmState, clamp_norm
from swarmcover.env import (
    SUCCESS_THRESHOLD,
    CoverageEnv,
    EnvConfig,
    exact_grid,
    overshoots,
    read_potential_csv,
    success_and_convergence,
    write_potential_csv,
    write_trajectory_csv,
)
from swarmcover.geometry import GeometryError, Polygon, coverage_radius
from swarmcover.nets import build_actor, build_critic
from swarmcover.potentials import classical_control
from swarmcover.render import write_frames
from swarmcover.trainer import (
    ExpertDataset,
    TrainingDiverged,
    bc_pretrain,
    critic_pretrain,
    episode_seed,
    expert_rollouts,
    load_checkpoint,
    run_episode,
    save_checkpoint,
    train,
)

log = logging.getLogger(__name__)

TABLE_COLUMNS = ["controller", "domain", "n", "runs", "successes", "success_rate", "wilson_low",
                 "wilson_high", "mean_convergence_s", "median_convergence_s", "overshoot_fraction"]
RUN_COLUMNS = ["controller", "domain", "n", "seed", "success", "convergence_s", "overshoot",
               "final_phi"]


class HarnessError(RuntimeError):
    pass


# controllers

@dataclass(frozen=True)
class ControllerSpec:
    kind: str          # "classical", "zero" or "policy"
    path: str = ""

    @property
    def label(self) -> str:
        return Path(self.path).stem if self.kind == "policy" else self.kind


def parse_controller(value, base_dir=".") -> ControllerSpec:
    if value in ("classical", "zero"):
        return ControllerSpec(value)
    path = Path(value)
    if not path.is_absolute() and not path.exists() and (Path(base_dir) / path).exists():
        path = Path(base_dir) / path
    if not path.exists():
        raise HarnessError(f"controller checkpoint not found: {value}")
    return ControllerSpec("policy", str(path))


@lru_cache(maxsize=8)
def _load_actor(path: str):
    try:
        actor, _, _, _ = load_checkpoint(path)
    except (ValueError, KeyError) as exc:
        raise HarnessError(f"bad checkpoint {path}: {exc}") from exc
    return actor


def make_policy(spec: ControllerSpec, env: CoverageEnv, seed: int, deterministic: bool = True):
    """``act(own, others, swarm) -> raw accelerations`` for one episode."""
    cfg = env.cfg
    if spec.kind == "classical":
        return lambda own, oth, swarm: classical_control(swarm, cfg.poly, env.params,
                                                         cfg.dynamics.a_max)
    if spec.kind == "zero":
        return lambda own, oth, swarm: np.zeros((cfg.n, 2))
    actor = _load_actor(spec.path)
    std = np.exp(actor.clamped_log_std())
    rng = np.random.default_rng(episode_seed(seed, 1))

    def act(own, oth, swarm):
        mean = actor.forward(own, oth)
        return mean if deterministic else mean + std * rng.standard_normal(mean.shape)

    return act


def initial_state(spec, cfg: EnvConfig) -> SwarmState | None:
    """``None`` means the default line start."""
    if spec in (None, "line"):
        return None
    if spec == "subcover":
        state = exact_grid(cfg.poly, cfg.n)
        if state is None:
            raise HarnessError("the 'subcover' start needs a square domain and a square agent count")
        return state
    if isinstance(spec, dict) and "positions" in spec:
        p = np.asarray(spec["positions"], dtype=np.float64)
        v = np.asarray(spec.get("velocities", np.zeros_like(p)), dtype=np.float64)
        if p.shape != (cfg.n, 2) or v.shape != p.shape:
            raise HarnessError(f"initial_state must give {cfg.n} positions and velocities")
        return SwarmState(p, v)
    raise HarnessError(f"unknown initial_state {spec!r}")


# episodes

@dataclass
class EpisodeRecord:
    positions: np.ndarray
    velocities: np.ndarray
    accels: np.ndarray
    rewards: np.ndarray
    phi: np.ndarray
    inside_all: np.ndarray
    dt: float


def simulate_episode(cfg: EnvConfig, spec: ControllerSpec, seed: int, deterministic=True,
                     start=None) -> EpisodeRecord:
    env = CoverageEnv(cfg)
    tr = run_episode(env, make_policy(spec, env, seed, deterministic), seed,
                     state=initial_state(start, cfg), observe=spec.kind == "policy")
    inside = np.array([np.all(kernels.project_points(cfg.poly.vertices, p)[2] < 0)
                       for p in tr.positions])
    return EpisodeRecord(tr.positions, tr.velocities, clamp_norm(tr.actions, cfg.dynamics.a_max),
                         tr.rewards, tr.phi, inside, cfg.dynamics.dt)


def _env_spec(raw: dict) -> dict:
    spec = dict(raw.get("env", {}))
    for key in ("domain", "n", "horizon", "dynamics", "c"):
        if key in raw and key not in spec:
            spec[key] = raw[key]
    return spec


def _wrap_errors(fn):
    def inner(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, GeometryError, FileNotFoundError) as exc:
            raise HarnessError(str(exc)) from exc
        except KeyError as exc:
            raise HarnessError(f"missing config field {exc}") from exc
    inner.__name__ = fn.__name__
    inner.__doc__ = fn.__doc__
    return inner


@_wrap_errors
def cmd_simulate(raw: dict, out, seed: int | None = None, controller: str | None = None,
                 base_dir=".") -> dict:
    """One episode: trajectory.csv, potential.csv, polygon.json, meta.json and SVG frames."""
    cfg = build_env(_env_spec(raw), base_dir)
    seed = int(raw.get("seed", 0)) if seed is None else seed
    spec = parse_controller(controller or raw.get("controller", "classical"), base_dir)
    rec = simulate_episode(cfg, spec, seed, raw.get("deterministic", True), raw.get("initial_state"))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out / "trajectory.csv", rec.positions, rec.velocities, rec.accels,
                         rec.rewards)
    write_potential_csv(out / "potential.csv", rec.phi, rec.dt)
    (out / "polygon.json").write_text(cfg.poly.to_json())
    success, t_star = success_and_convergence(rec.phi, horizon=cfg.horizon)
    meta = {"controller": spec.label, "seed": seed, "n": cfg.n, "dt": rec.dt,
            "horizon": cfg.horizon, "success": success, "convergence_s": t_star,
            "overshoot": overshoots(rec.phi, rec.inside_all), "final_phi": float(rec.phi[-1])}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    frames = raw.get("frames", {})
    if frames.get("enabled", True):
        write_frames(out / "frames", cfg.poly, rec.positions, rec.dt, int(frames.get("every", 25)),
                     float(frames.get("trail_s", 10.0)), 0.5 * cfg.r_d)
    return meta


# evaluation

def wilson_interval(successes: int, runs: int, confidence: float = 0.95) -> tuple[float, float]:
    if runs == 0:
        return 0.0, 1.0
    ci = binomtest(successes, runs).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


def _seed_list(raw, base: int | None) -> list[int]:
    if raw is None:
        raw = 200
    if isinstance(raw, int):
        start = 0 if base is None else base
        return list(range(start, start + raw))
    if isinstance(raw, dict):
        start = int(raw.get("start", 0)) if base is None else base
        return list(range(start, start + int(raw["count"])))
    return [int(s) for s in raw]


def _eval_task(task):
    env_spec, base_dir, spec, seed, deterministic, start, threshold = task
    cfg = build_env(env_spec, base_dir)
    rec = simulate_episode(cfg, spec, seed, deterministic, start)
    success, t_star = success_and_convergence(rec.phi, threshold, horizon=cfg.horizon)
    return rec.phi, success, t_star, overshoots(rec.phi, rec.inside_all)


@_wrap_errors
def cmd_evaluate(raw: dict, out, seed: int | None = None, controller: str | None = None,
                 base_dir=".") -> list[dict]:
    """Success rate and convergence time per (controller, domain, n) cell."""
    controllers = [controller] if controller else raw.get("controllers", ["classical"])
    specs = [parse_controller(c, base_dir) for c in controllers]
    domains = raw.get("domains", ["square"])
    agents = raw.get("agents", [9])
    seeds = _seed_list(raw.get("seeds"), seed)
    threshold = float(raw.get("threshold", SUCCESS_THRESHOLD))
    deterministic = raw.get("deterministic", True)
    start = raw.get("initial_state")
    common = _env_spec(raw)
    for d in domains:
        build_polygon(d, base_dir)  # fail before any simulation runs

    cells, tasks = [], []
    for spec in specs:
        for d in domains:
            for n in agents:
                env_spec = {**common, "domain": d, "n": int(n)}
                cells.append((spec, d, int(n), env_spec))
                tasks.extend((env_spec, str(base_dir), spec, s, deterministic, start, threshold)
                             for s in seeds)
    workers = int(raw.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_eval_task, tasks, chunksize=8))
    else:
        results = [_eval_task(t) for t in tasks]

    out = Path(out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    rows = []
    with open(out / "runs.csv", "w", newline="") as fh:
        runs_w = csv.writer(fh, lineterminator="\n")
        runs_w.writerow(RUN_COLUMNS)
        for c, (spec, d, n, env_spec) in enumerate(cells):
            chunk = results[c * len(seeds):(c + 1) * len(seeds)]
            dname = domain_name(d)
            times = []
            for s, (phi, ok, t_star, over) in zip(seeds, chunk):
                runs_w.writerow([spec.label, dname, n, s, int(ok), "" if t_star is None else repr(t_star),
                                 int(over), repr(float(phi[-1]))])
                if ok:
                    times.append(t_star)
            successes = len(times)
            lo, hi = wilson_interval(successes, len(seeds))
            row = {"controller": spec.label, "domain": dname, "n": n, "runs": len(seeds),
                   "successes": successes, "success_rate": successes / len(seeds) if seeds else 0.0,
                   "wilson_low": lo, "wilson_high": hi,
                   "mean_convergence_s": float(np.mean(times)) if times else None,
                   "median_convergence_s": float(np.median(times)) if times else None,
                   "overshoot_fraction": (sum(r[3] for r in chunk) / len(chunk)) if chunk else 0.0}
            rows.append(row)
            dt = build_env(env_spec, base_dir).dynamics.dt
            _write_traces(out / "traces" / f"{spec.label}_{dname}_n{n}.csv", seeds,
                          [r[0] for r in chunk], dt)
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for row in rows:
            w.writerow(["" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                        for k in TABLE_COLUMNS])
    (out / "summary.txt").write_text(format_table(rows))
    return rows


def _write_traces(path, seeds, traces, dt):
    length = max((len(t) for t in traces), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "time_s"] + [f"seed_{s}" for s in seeds])
        for k in range(length):
            w.writerow([k, repr(k * dt)] + [repr(float(t[k])) if k < len(t) else "" for t in traces])


def read_traces(path):
    """``(times, {seed: phi})`` from a per-cell trace file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    times = np.array([float(r[1]) for r in rows])
    traces = {int(h[5:]): np.array([float(r[j]) for r in rows]) for j, h in enumerate(header)
              if h.startswith("seed_")}
    return times, traces


def format_table(rows) -> str:
    head = (f"{'controller':<16}{'domain':<14}{'n':>3}  {'success':>8}  {'95% CI':>15}  "
            f"{'mean t':>7}  {'median t':>8}  {'overshoot':>9}")
    lines = [head, "-" * len(head)]
    for r in rows:
        mean = "-" if r["mean_convergence_s"] is None else f"{r['mean_convergence_s']:.2f}"
        med = "-" if r["median_convergence_s"] is None else f"{r['median_convergence_s']:.2f}"
        ci = f"[{100 * r['wilson_low']:.1f}, {100 * r['wilson_high']:.1f}]"
        lines.append(f"{r['controller']:<16}{r['domain']:<14}{r['n']:>3}  "
                     f"{100 * r['success_rate']:>7.1f}%  {ci:>15}  {mean:>7}  {med:>8}  "
                     f"{100 * r['overshoot_fraction']:>8.1f}%")
    return "\n".join(lines) + "\n"


# training

def _latest_checkpoint(out: Path):
    ckpts = sorted((out / "checkpoints").glob("ckpt_*.json"))
    return ckpts[-1] if ckpts else None


def _write_curve(path, name, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", name])
        for k, v in enumerate(values):
            w.writerow([k, repr(float(v))])


@_wrap_errors
def cmd_train(raw: dict, out, seed: int | None = None, controller: str | None = None,
              base_dir=".", resume=None) -> dict:
    """Optional BC and critic pre-training followed by MAPPO."""
    data = dict(raw)
    if seed is not None:
        data["seed"] = seed
    cfg = TrainConfig.from_dict(data)
    envs = cfg.env_configs(base_dir)
    out = Path(out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    summary = {}

    if controller and controller != "classical":
        actor, critic, _, _ = load_checkpoint(parse_controller(controller, base_dir).path)
        critic = critic or build_critic(cfg.critic, seed=cfg.seed + 1)
    else:
        actor = build_actor(cfg.actor, seed=cfg.seed)
        critic = build_critic(cfg.critic, seed=cfg.seed + 1)

    if resume is None and cfg.bc_episodes > 0:
        trajs = expert_rollouts(envs, cfg.bc_episodes, cfg.seed)
        curve = bc_pretrain(actor, ExpertDataset.from_trajectories(trajs), cfg.bc_epochs,
                            cfg.bc_lr, cfg.bc_batch, cfg.seed, cfg.bc_optimizer)
        _write_curve(out / "bc_loss.csv", "loss", curve)
        summary["bc_loss_initial"], summary["bc_loss_final"] = curve[0], curve[-1]
        if cfg.critic_pretrain:
            ccurve = critic_pretrain(critic, trajs, cfg.gamma, cfg.critic_lr,
                                     cfg.critic_pretrain_epochs, seed=cfg.seed)
            _write_curve(out / "critic_pretrain_loss.csv", "loss", ccurve)
        save_checkpoint(out / "checkpoints" / "ckpt_00000.json", actor, critic, 0)

    try:
        history = train(cfg, actor, critic, envs, out, resume=resume)
    except TrainingDiverged as exc:
        last = _latest_checkpoint(out)
        raise HarnessError(f"training diverged ({exc}); last good checkpoint: "
                           f"{last if last else 'none'}") from exc
    if cfg.iterations == 0 and _latest_checkpoint(out) is None:
        save_checkpoint(out / "checkpoints" / "ckpt_00000.json", actor, critic, 0)
    summary["iterations"] = len(history)
    if history:
        summary["final_mean_return"] = history[-1]["mean_return"]
    summary["checkpoint"] = str(_latest_checkpoint(out))
    return summary


# export

def _load_run(directory: Path):
    missing = [f for f in ("trajectory.csv", "potential.csv", "polygon.json")
               if not (directory / f).exists()]
    if not directory.is_dir() or missing:
        raise HarnessError(f"{directory}: missing run artifacts {missing or '(not a directory)'}")
    times, phi = read_potential_csv(directory / "potential.csv")
    if len(times) == 0:
        raise HarnessError(f"{directory}: empty potential trace")
    poly = Polygon.from_json((directory / "polygon.json").read_text())
    with open(directory / "trajectory.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    steps = int(rows[-1]["step"]) + 1
    n = int(rows[-1]["agent"]) + 1
    pos = np.array([[float(r["p_x"]), float(r["p_y"])] for r in rows]).reshape(steps, n, 2)
    return times, phi, poly, pos


@_wrap_errors
def cmd_export(raw: dict, out, seed: int | None = None, controller: str | None = None,
               base_dir=".") -> dict:
    """Merge potential traces of several runs and re-render their frames."""
    inputs = [Path(base_dir) / p if not Path(p).is_absolute() else Path(p)
              for p in raw.get("inputs", [])]
    if not inputs:
        raise HarnessError("export needs at least one input run directory")
    labels = raw.get("labels") or [p.name for p in inputs]
    if len(labels) != len(inputs) or len(set(labels)) != len(labels):
        raise HarnessError("export labels must be unique, one per input")
    runs = [_load_run(p) for p in inputs]  # validate everything before writing

    out = Path(out)
    staging = out.with_name(out.name + ".partial")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    try:
        grid = sorted({float(t) for r in runs for t in r[0]})
        lookup = [{float(t): v for t, v in zip(r[0], r[1])} for r in runs]
        with open(staging / "potential_merged.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s"] + list(labels))
            for t in grid:
                w.writerow([repr(t)] + [repr(float(m[t])) if t in m else "" for m in lookup])
        frames = raw.get("frames", {})
        for label, (times, _, poly, pos) in zip(labels, runs):
            dt = float(times[1] - times[0]) if len(times) > 1 else 1.0
            r_d = coverage_radius(poly, pos.shape[1])
            write_frames(staging / label / "frames", poly, pos, dt, int(frames.get("every", 25)),
                         float(frames.get("trail_s", 10.0)), 0.5 * r_d)
        out.mkdir(parents=True, exist_ok=True)
        for item in staging.iterdir():
            target = out / item.name
            if target.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
            os.replace(item, target)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return {"runs": len(runs), "rows": len(grid)}
