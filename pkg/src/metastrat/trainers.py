"""Training procedures and test-time adaptation.

Three trainers share one random-search pipeline over flat parameter vectors:

* ``train_mso``    - alternates per-task latent search (strategy
  optimization against the current policy) with blocks of policy updates on
  the frozen (task, latent) pairs, so the policy experiences at training
  time exactly the adaptation procedure used at test time.
* ``train_dr``     - no latent input; tasks resampled every iteration.
* ``train_so_pup`` - policy plus a linear projection of the physics
  parameters trained jointly; the projection supplies the latent during
  training and is bypassed at adaptation time.

``adapt`` runs the same ``optimize_latent`` entry point as training-time
strategy selection (identical bounds and method, smaller budget) against a
frozen checkpoint and confirms the chosen latent with three repeat episodes.

All rollout work for perturbation evaluation runs through a lockstep batched
engine; every episode's numbers depend only on its own (seed, task, policy)
triple, so results are identical for any worker count.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import ars as ars_mod
from . import envs as envs_mod
from . import policy as policy_mod
from . import strategy_opt as so_mod
from .ars import ArsConfig
from .envs import BatchTasks, RangeSpec, TaskParams, get_env, sample_task
from .errors import ConfigError, ValidationError
from .policy import (
    ObsFilter,
    PolicyNet,
    ProjectionParams,
    WelfordBatch,
    center_latent,
    clip_latent,
    decode_array,
    encode_array,
    latent_bounds,
)
from .seeding import derive_seed, rng_from
from .strategy_opt import SoBudget, SoResult, optimize_latent

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "metastrat-checkpoint"
CHECKPOINT_VERSION = 1
CHECKPOINT_EVERY = 50  # ARS iterations between mid-training snapshots

METHODS = ("mso", "dr", "so_pup")
METHOD_TAGS = {"mso": "MSO", "dr": "DR", "so_pup": "SOPUP"}
CONFIRM_REPEATS = 3


@dataclass(frozen=True)
class MsoConfig:
    """Complete training description (shared by all three trainers)."""

    method: str = "mso"
    env_name: str = "sliding_mass"
    n_tasks: int = 5
    inner_updates: int = 30  # policy updates per block of frozen pairs
    outer_iterations: int = 50  # blocks; total ARS iterations = k * h
    so_budget_train: int = 25  # episodes per training-time latent search
    so_init_samples: int = 5
    so_method: str = "bo"
    latent_dim: int = 2
    gamma: float = 1.0
    ars: ArsConfig = field(default_factory=ArsConfig)
    range_spec: RangeSpec = field(default_factory=RangeSpec.training)
    seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; valid: {METHODS}")
        get_env(self.env_name)
        for name in ("n_tasks", "inner_updates", "outer_iterations", "so_budget_train", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.so_method not in so_mod.SO_METHODS:
            raise ConfigError(f"unknown strategy-optimization method {self.so_method!r}")
        if not 0 < self.gamma <= 1.0:
            raise ConfigError("gamma must be in (0, 1]")
        self.ars.validate()
        self.range_spec.validate()

    @property
    def total_iterations(self) -> int:
        return self.outer_iterations * self.inner_updates

    def policy_net(self) -> PolicyNet:
        env = get_env(self.env_name)
        aux = 0 if self.method == "dr" else self.latent_dim
        return PolicyNet(obs_dim=env.obs_dim, action_dim=env.action_dim, latent_dim=aux)


@dataclass
class Checkpoint:
    method: str  # MSO | DR | SOPUP
    env_name: str
    net: PolicyNet
    theta: np.ndarray
    filt: ObsFilter
    projection: ProjectionParams | None
    config: dict  # resolved training-config snapshot
    history: dict
    train_state: dict | None = None  # mid-training resume info


@dataclass
class AdaptedStrategy:
    method: str
    best_latent: np.ndarray
    so_result: SoResult
    confirmed_return: float  # mean of CONFIRM_REPEATS repeats at the best latent
    episodes_used: int


# ---------------------------------------------------------------------------
# config <-> plain-dict snapshots
# ---------------------------------------------------------------------------

def config_to_dict(cfg: MsoConfig) -> dict:
    # worker count is an execution detail: it never affects results and is
    # deliberately absent, so checkpoints are byte-identical across pools
    return {
        "method": cfg.method,
        "env_name": cfg.env_name,
        "n_tasks": cfg.n_tasks,
        "inner_updates": cfg.inner_updates,
        "outer_iterations": cfg.outer_iterations,
        "so_budget_train": cfg.so_budget_train,
        "so_init_samples": cfg.so_init_samples,
        "so_method": cfg.so_method,
        "latent_dim": cfg.latent_dim,
        "gamma": cfg.gamma,
        "ars": {
            "num_perturbations": cfg.ars.num_perturbations,
            "top_b": cfg.ars.top_b,
            "step_size": cfg.ars.step_size,
            "noise_std": cfg.ars.noise_std,
            "episodes_per_eval": cfg.ars.episodes_per_eval,
        },
        "range_spec": {
            "bounds": {k: list(v) for k, v in cfg.range_spec.bounds.items()},
            "extension_factor": cfg.range_spec.extension_factor,
            "base_bounds": None
            if cfg.range_spec.base_bounds is None
            else {k: list(v) for k, v in cfg.range_spec.base_bounds.items()},
        },
        "seed": cfg.seed,
    }


def config_from_dict(doc: dict) -> MsoConfig:
    rs = doc["range_spec"]
    return MsoConfig(
        method=doc["method"],
        env_name=doc["env_name"],
        n_tasks=doc["n_tasks"],
        inner_updates=doc["inner_updates"],
        outer_iterations=doc["outer_iterations"],
        so_budget_train=doc["so_budget_train"],
        so_init_samples=doc["so_init_samples"],
        so_method=doc["so_method"],
        latent_dim=doc["latent_dim"],
        gamma=doc["gamma"],
        ars=ArsConfig(**doc["ars"]),
        range_spec=RangeSpec(
            bounds={k: tuple(v) for k, v in rs["bounds"].items()},
            extension_factor=rs["extension_factor"],
            base_bounds=None if rs["base_bounds"] is None else {k: tuple(v) for k, v in rs["base_bounds"].items()},
        ),
        seed=doc["seed"],
        workers=int(doc.get("workers", 1)),
    )


def _task_to_dict(task: TaskParams) -> dict:
    return {
        "mass_scale": task.mass_scale,
        "actuator_gain": task.actuator_gain,
        "contact_friction": task.contact_friction,
        "joint_friction": task.joint_friction,
        "latency_steps": task.latency_steps,
        "supply_scale": task.supply_scale,
        "inertia_scale": task.inertia_scale,
        "sensor_offset": task.sensor_offset,
        "slope_angle": task.slope_angle,
        "carry_mode": task.carry_mode,
    }


def task_from_dict(doc: dict) -> TaskParams:
    return TaskParams(**doc)


# ---------------------------------------------------------------------------
# checkpoint document
# ---------------------------------------------------------------------------

def checkpoint_to_json(ckpt: Checkpoint) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "method": ckpt.method,
        "env": ckpt.env_name,
        "architecture": {
            "obs_dim": ckpt.net.obs_dim,
            "action_dim": ckpt.net.action_dim,
            "latent_dim": ckpt.net.latent_dim,
            "hidden": list(ckpt.net.hidden),
        },
        "theta": encode_array(ckpt.theta),
        "filter": {
            "count": ckpt.filt.count,
            "mean": encode_array(ckpt.filt.mean),
            "m2": encode_array(ckpt.filt.m2),
        },
        "projection": None
        if ckpt.projection is None
        else {"weights": encode_array(ckpt.projection.weights), "bias": encode_array(ckpt.projection.bias)},
        "config": ckpt.config,
        "history": ckpt.history,
        "train_state": _encode_train_state(ckpt.train_state),
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def _encode_train_state(state: dict | None):
    if state is None:
        return None
    out = dict(state)
    if "pairs" in out and out["pairs"] is not None:
        out["pairs"] = [
            {"task": _task_to_dict(task), "latent": None if latent is None else encode_array(latent)}
            for task, latent in out["pairs"]
        ]
    return out


def _decode_train_state(doc):
    if doc is None:
        return None
    out = dict(doc)
    if out.get("pairs") is not None:
        out["pairs"] = [
            (task_from_dict(p["task"]), None if p["latent"] is None else decode_array(p["latent"]))
            for p in out["pairs"]
        ]
    return out


def checkpoint_from_json(text: str) -> Checkpoint:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError("not a checkpoint document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {doc.get('version')}")
    arch = doc["architecture"]
    net = PolicyNet(
        obs_dim=arch["obs_dim"],
        action_dim=arch["action_dim"],
        latent_dim=arch["latent_dim"],
        hidden=tuple(arch["hidden"]),
    )
    proj = doc["projection"]
    return Checkpoint(
        method=doc["method"],
        env_name=doc["env"],
        net=net,
        theta=decode_array(doc["theta"]),
        filt=ObsFilter(
            count=float(doc["filter"]["count"]),
            mean=decode_array(doc["filter"]["mean"]),
            m2=decode_array(doc["filter"]["m2"]),
        ),
        projection=None
        if proj is None
        else ProjectionParams(weights=decode_array(proj["weights"]), bias=decode_array(proj["bias"])),
        config=doc["config"],
        history=doc["history"],
        train_state=_decode_train_state(doc["train_state"]),
    )


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(checkpoint_to_json(ckpt))
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path) as fh:
        return checkpoint_from_json(fh.read())


# ---------------------------------------------------------------------------
# batched rollout engine
# ---------------------------------------------------------------------------

def _evaluate_block(env, net, thetas, latents, tasks, filt_mean, filt_den, seeds, gamma):
    """Lockstep evaluation of m parameter vectors on n tasks each.

    thetas: (m, P); latents: (m, n, l) or None; seeds: (m, n).
    Returns (returns (m, n), WelfordBatch over the m*n episodes).
    """
    m, n = seeds.shape
    rows = m * n
    btasks = BatchTasks.from_tasks([tasks[r % n] for r in range(rows)])
    bstate = env.batch_reset(btasks, seeds.reshape(-1))
    welford = WelfordBatch(rows, env.obs_dim)
    returns = np.zeros(rows)
    discount = 1.0
    for _ in range(envs_mod.HORIZON):
        active = ~bstate.done
        if not active.any():
            break
        obs_raw = env._observe_batch(bstate, btasks)
        welford.update(obs_raw, active)
        obs_n = (obs_raw - filt_mean) / filt_den
        xs = obs_n.reshape(m, n, env.obs_dim)
        if latents is not None:
            xs = np.concatenate([xs, latents], axis=2)
        acts = net.forward_batch(thetas, xs).reshape(rows, env.action_dim)
        rewards, _ = env.batch_step(bstate, btasks, acts)
        returns += discount * rewards
        discount *= gamma
    return returns.reshape(m, n), welford


def _worker_eval(payload):
    env = get_env(payload["env_name"])
    net = payload["net"]
    returns, welford = _evaluate_block(
        env,
        net,
        payload["thetas"],
        payload["latents"],
        payload["tasks"],
        payload["filt_mean"],
        payload["filt_den"],
        payload["seeds"],
        payload["gamma"],
    )
    return returns, welford.count, welford.mean, welford.m2


def rollout_return(env, net, theta, filt, task, latent, seed, gamma=1.0) -> float:
    """Single-episode return via the batch engine (bit-identical to the
    scalar rollout; substantially less per-step overhead)."""
    latents = None if net.latent_dim == 0 else np.asarray(latent, dtype=np.float64).reshape(1, 1, -1)
    den = np.maximum(filt.std, policy_mod.STD_FLOOR)
    returns, _ = _evaluate_block(
        env, net, theta[None, :], latents, [task], filt.mean, den, np.array([[seed]], dtype=np.int64), gamma
    )
    return float(returns[0, 0])


class _TrainingEngine:
    """Owns the evaluator closure handed to ars_step, the filter, and the
    optional worker pool."""

    def __init__(self, cfg: MsoConfig):
        self.cfg = cfg
        self.env = get_env(cfg.env_name)
        self.net = cfg.policy_net()
        self.filt = ObsFilter.create(self.env.obs_dim)
        self.pool = None
        if cfg.workers > 1:
            self.pool = ProcessPoolExecutor(max_workers=cfg.workers)

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None

    def n_proj_params(self) -> int:
        if self.cfg.method != "so_pup":
            return 0
        return ProjectionParams.zeros(self.cfg.latent_dim).n_params

    def split_theta(self, theta_all: np.ndarray):
        n_pol = self.net.n_params
        if self.cfg.method != "so_pup":
            return theta_all, None
        return theta_all[:n_pol], theta_all[n_pol:]

    def _job_latents(self, thetas_all: np.ndarray, pairs) -> tuple[np.ndarray, np.ndarray | None]:
        """Per-(job, pair) latent inputs and the policy slice of each theta."""
        cfg = self.cfg
        m = thetas_all.shape[0]
        n = len(pairs)
        if cfg.method == "dr":
            return thetas_all, None
        if cfg.method == "mso":
            lat = np.stack([latent for _, latent in pairs])  # (n, l)
            return thetas_all, np.broadcast_to(lat, (m, n, cfg.latent_dim)).copy()
        # so_pup: latent = clip(W mu + b) from each job's own projection slice
        n_pol = self.net.n_params
        pol = thetas_all[:, :n_pol]
        proj = thetas_all[:, n_pol:]
        n_w = cfg.latent_dim * len(envs_mod.MU_FIELDS)
        w = proj[:, :n_w].reshape(m, cfg.latent_dim, len(envs_mod.MU_FIELDS))
        b = proj[:, n_w:]
        mus = np.stack([task.to_vector() for task, _ in pairs])  # (n, mu)
        lat = np.matmul(w, mus.T).transpose(0, 2, 1) + b[:, None, :]
        return pol, np.clip(lat, -policy_mod.LATENT_BOUND, policy_mod.LATENT_BOUND)

    def evaluate_many(self, jobs, pairs, global_iter: int):
        """Evaluate perturbation jobs on all pairs; mean return per job.

        Also folds each episode's observation statistics into the filter, in
        (job, pair) order, after all evaluations are in.
        """
        cfg = self.cfg
        m, n = len(jobs), len(pairs)
        thetas_all = np.stack([theta for theta, _, _ in jobs])
        thetas, latents = self._job_latents(thetas_all, pairs)
        seeds = np.empty((m, n), dtype=np.int64)
        for j, (_, direction, sign) in enumerate(jobs):
            for p in range(n):
                seeds[j, p] = derive_seed(cfg.seed, "roll", global_iter, direction, sign, p)
        snapshot = self.filt.copy(frozen=True)
        den = np.maximum(snapshot.std, policy_mod.STD_FLOOR)

        chunks = self._chunk_ranges(m)
        results = []
        if self.pool is None or len(chunks) == 1:
            for lo, hi in chunks:
                returns, welford = _evaluate_block(
                    self.env,
                    self.net,
                    thetas[lo:hi],
                    None if latents is None else latents[lo:hi],
                    [task for task, _ in pairs],
                    snapshot.mean,
                    den,
                    seeds[lo:hi],
                    cfg.gamma,
                )
                results.append((returns, welford.count, welford.mean, welford.m2))
        else:
            payloads = [
                {
                    "env_name": cfg.env_name,
                    "net": self.net,
                    "thetas": thetas[lo:hi],
                    "latents": None if latents is None else latents[lo:hi],
                    "tasks": [task for task, _ in pairs],
                    "filt_mean": snapshot.mean,
                    "filt_den": den,
                    "seeds": seeds[lo:hi],
                    "gamma": cfg.gamma,
                }
                for lo, hi in chunks
            ]
            results = list(self.pool.map(_worker_eval, payloads))

        all_returns = np.concatenate([r[0] for r in results], axis=0)
        # deterministic (job, pair)-ordered merge of per-episode accumulators
        for returns, count, mean, m2 in results:
            for row in range(len(count)):
                self.filt.merge(ObsFilter(count=float(count[row]), mean=mean[row], m2=m2[row]))
        return [float(v) for v in all_returns.mean(axis=1)]

    def _chunk_ranges(self, m: int):
        w = min(self.cfg.workers, m)
        bounds = np.linspace(0, m, w + 1, dtype=int)
        return [(int(bounds[i]), int(bounds[i + 1])) for i in range(w) if bounds[i + 1] > bounds[i]]


# ---------------------------------------------------------------------------
# strategy optimization against a fixed policy (shared by training and adapt)
# ---------------------------------------------------------------------------

def solve_strategy(env, net, theta, filt, task: TaskParams, episodes: int, init_samples: int, method: str, seed: int, gamma: float = 1.0) -> SoResult:
    """One latent search on one task: one rollout per evaluator call, frozen
    observation filter, bounds fixed by the latent box."""
    frozen = filt.copy(frozen=True)
    counter = {"i": 0}

    def evaluator(latent):
        idx = counter["i"]
        counter["i"] += 1
        return rollout_return(env, net, theta, frozen, task, latent, derive_seed(seed, "ep", idx), gamma)

    return optimize_latent(
        evaluator,
        latent_bounds(net.latent_dim),
        SoBudget(max_episodes=episodes, init_samples=init_samples),
        method=method,
        seed=seed,
    )


def _so_stalled(result: SoResult) -> bool:
    # a single-sample search (budget 1) is a legitimate random strategy, not a stall
    values = [v for _, v in result.history]
    return len(values) >= 2 and max(values) == min(values)


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _initial_theta(cfg: MsoConfig, engine: _TrainingEngine) -> np.ndarray:
    theta = engine.net.init_params(rng_from(cfg.seed, "init"))
    if cfg.method == "so_pup":
        theta = np.concatenate([theta, np.zeros(engine.n_proj_params())])
    return theta


def _sample_block_tasks(cfg: MsoConfig, block: int) -> list[TaskParams]:
    rng = rng_from(cfg.seed, "tasks", block)
    return [sample_task(cfg.range_spec, rng) for _ in range(cfg.n_tasks)]


def _train(cfg: MsoConfig, progress_cb=None, checkpoint_cb=None, resume: Checkpoint | None = None) -> Checkpoint:
    cfg.validate()
    engine = _TrainingEngine(cfg)
    try:
        stall_count = 0
        so_fallbacks = 0
        start_iter = 0
        pairs = None
        curve_rows: list[str] = []
        theta = _initial_theta(cfg, engine)

        if resume is not None:
            state = resume.train_state or {}
            if resume.method != METHOD_TAGS[cfg.method] or resume.env_name != cfg.env_name:
                raise ConfigError("checkpoint does not match the training configuration")
            theta = resume.theta.copy()
            if resume.projection is not None:
                theta = np.concatenate([resume.theta, resume.projection.flatten()])
            engine.filt = resume.filt.copy(frozen=False)
            start_iter = int(state.get("global_iter", cfg.total_iterations))
            pairs = state.get("pairs")
            stall_count = int(state.get("stall_count", 0))
            so_fallbacks = int(state.get("so_fallbacks", 0))
            curve_rows = list(state.get("curve", []))[:start_iter]

        for global_iter in range(start_iter, cfg.total_iterations):
            block, inner = divmod(global_iter, cfg.inner_updates)
            if cfg.method == "mso":
                if inner == 0 or pairs is None:
                    tasks = _sample_block_tasks(cfg, block)
                    pairs = []
                    pol_theta, _ = engine.split_theta(theta)
                    for i, task in enumerate(tasks):
                        result = solve_strategy(
                            engine.env,
                            engine.net,
                            pol_theta,
                            engine.filt,
                            task,
                            episodes=cfg.so_budget_train,
                            init_samples=cfg.so_init_samples,
                            method=cfg.so_method,
                            seed=derive_seed(cfg.seed, "so", block, i),
                            gamma=cfg.gamma,
                        )
                        if _so_stalled(result):
                            so_fallbacks += 1
                            log.info("strategy search stalled on block %d task %d; using box-center latent", block, i)
                            pairs.append((task, center_latent(cfg.latent_dim)))
                        else:
                            pairs.append((task, result.best_latent))
            else:
                tasks = _sample_block_tasks(cfg, global_iter)
                pairs = [(task, None) for task in tasks]

            step = ars_mod.ars_step(
                theta,
                cfg.ars,
                derive_seed(cfg.seed, "ars", global_iter),
                lambda jobs: engine.evaluate_many(jobs, pairs, global_iter),
            )
            theta = step.theta
            if step.stalled:
                stall_count += 1
            curve_rows.append(ars_mod.progress_line(global_iter, step.mean_return, step.sigma_r, step.stalled))
            if progress_cb is not None:
                progress_cb(global_iter, step.mean_return, step.sigma_r, step.stalled)

            done_iter = global_iter + 1
            if checkpoint_cb is not None and (done_iter % CHECKPOINT_EVERY == 0 or done_iter == cfg.total_iterations):
                checkpoint_cb(
                    _make_checkpoint(cfg, engine, theta, curve_rows, stall_count, so_fallbacks, done_iter, pairs)
                )

        return _make_checkpoint(cfg, engine, theta, curve_rows, stall_count, so_fallbacks, cfg.total_iterations, pairs)
    finally:
        engine.close()


def _decile_mean(curve: list[float], last: bool) -> float:
    if not curve:
        return math.nan
    k = max(1, len(curve) // 10)
    part = curve[-k:] if last else curve[:k]
    return float(np.mean(part))


def _make_checkpoint(cfg, engine, theta, curve_rows, stall_count, so_fallbacks, done_iter, pairs) -> Checkpoint:
    pol_theta, proj_vec = engine.split_theta(theta)
    projection = None
    if cfg.method == "so_pup":
        projection = ProjectionParams.unflatten(proj_vec, cfg.latent_dim)
    mean_curve = [float(row.split(",")[1]) for row in curve_rows]
    history = {
        "iterations": done_iter,
        "stall_count": stall_count,
        "so_fallbacks": so_fallbacks,
        "final_mean_return": mean_curve[-1] if mean_curve else None,
        "first_decile_mean": _decile_mean(mean_curve, last=False),
        "last_decile_mean": _decile_mean(mean_curve, last=True),
    }
    train_state = {
        "global_iter": done_iter,
        "stall_count": stall_count,
        "so_fallbacks": so_fallbacks,
        "curve": list(curve_rows),
        "pairs": [(t, l) for t, l in pairs] if (cfg.method == "mso" and pairs is not None) else None,
    }
    return Checkpoint(
        method=METHOD_TAGS[cfg.method],
        env_name=cfg.env_name,
        net=engine.net,
        theta=pol_theta.copy(),
        filt=engine.filt.copy(),
        projection=projection,
        config=config_to_dict(cfg),
        history=history,
        train_state=train_state,
    )


def train_mso(cfg: MsoConfig, progress_cb=None, checkpoint_cb=None, resume: Checkpoint | None = None) -> Checkpoint:
    if cfg.method != "mso":
        cfg = replace(cfg, method="mso")
    return _train(cfg, progress_cb, checkpoint_cb, resume)


def train_dr(cfg: MsoConfig, progress_cb=None, checkpoint_cb=None, resume: Checkpoint | None = None) -> Checkpoint:
    if cfg.method != "dr":
        cfg = replace(cfg, method="dr")
    return _train(cfg, progress_cb, checkpoint_cb, resume)


def train_so_pup(cfg: MsoConfig, progress_cb=None, checkpoint_cb=None, resume: Checkpoint | None = None) -> Checkpoint:
    if cfg.method != "so_pup":
        cfg = replace(cfg, method="so_pup")
    return _train(cfg, progress_cb, checkpoint_cb, resume)


def train(cfg: MsoConfig, progress_cb=None, checkpoint_cb=None, resume: Checkpoint | None = None) -> Checkpoint:
    return {"mso": train_mso, "dr": train_dr, "so_pup": train_so_pup}[cfg.method](
        cfg, progress_cb, checkpoint_cb, resume
    )


# ---------------------------------------------------------------------------
# adaptation
# ---------------------------------------------------------------------------

def adapt(ckpt: Checkpoint, task: TaskParams, episodes: int = 15, method: str | None = None, seed: int = 0) -> AdaptedStrategy:
    """Adapt a trained checkpoint to one target task.

    Latent-conditioned checkpoints run the shared latent search with the
    frozen policy and filter, then confirm the best latent with three repeat
    episodes; plain robust checkpoints skip the search and only run the
    confirmation episodes.
    """
    if episodes < 1:
        raise ConfigError("adaptation needs at least 1 episode")
    task.validate()
    env = get_env(ckpt.env_name)
    frozen = ckpt.filt.copy(frozen=True)
    gamma = float(ckpt.config.get("gamma", 1.0))
    method = method or ckpt.config.get("so_method", "bo")

    if ckpt.method == "DR":
        log.warning("plain robust checkpoint: no latent to adapt; running confirmation episodes only")
        best_latent = np.zeros(0)
        so_result = SoResult(best_latent=best_latent, best_return=math.nan, history=[])
        episodes_used = 0
    else:
        so_result = solve_strategy(
            env,
            ckpt.net,
            ckpt.theta,
            frozen,
            task,
            episodes=episodes,
            init_samples=int(ckpt.config.get("so_init_samples", 5)),
            method=method,
            seed=derive_seed(seed, "adapt"),
            gamma=gamma,
        )
        best_latent = so_result.best_latent
        episodes_used = len(so_result.history)

    latent_arg = best_latent if ckpt.net.latent_dim else None
    confirms = [
        rollout_return(env, ckpt.net, ckpt.theta, frozen, task, latent_arg, derive_seed(seed, "confirm", i), gamma)
        for i in range(CONFIRM_REPEATS)
    ]
    return AdaptedStrategy(
        method=ckpt.method,
        best_latent=best_latent,
        so_result=so_result,
        confirmed_return=float(np.mean(confirms)),
        episodes_used=episodes_used,
    )


def evaluate_at_latent(ckpt: Checkpoint, task: TaskParams, latent, seed: int = 0) -> float:
    """Mean confirmation-protocol return at a fixed latent (same seeds adapt
    uses for its confirmation repeats)."""
    env = get_env(ckpt.env_name)
    frozen = ckpt.filt.copy(frozen=True)
    gamma = float(ckpt.config.get("gamma", 1.0))
    latent_arg = None if ckpt.net.latent_dim == 0 else clip_latent(latent)
    vals = [
        rollout_return(env, ckpt.net, ckpt.theta, frozen, task, latent_arg, derive_seed(seed, "confirm", i), gamma)
        for i in range(CONFIRM_REPEATS)
    ]
    return float(np.mean(vals))
