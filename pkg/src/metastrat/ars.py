"""Augmented Random Search over flat parameter vectors.

The V2-t flavor: antithetic Gaussian perturbations, observation
normalization handled by the caller's evaluator, ranking by the better of
each direction pair, update from the top-b directions scaled by the standard
deviation of the returns actually used.

``ars_step`` only orchestrates; the update arithmetic lives in pure
functions so its symmetry and ranking properties can be checked directly.
Perturbation directions are derived from per-direction seeds, so any number
of workers reproduces the same step bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import EnvFamily, TaskParams, rollout
from .errors import ValidationError
from .policy import ObsFilter, PolicyNet, forward
from .seeding import derive_seed

SIGMA_R_FLOOR = 1e-6


@dataclass(frozen=True)
class ArsConfig:
    num_perturbations: int = 92
    top_b: int = 23
    step_size: float = 0.02
    noise_std: float = 0.025
    episodes_per_eval: int = 1

    def validate(self) -> None:
        if not 1 <= self.top_b <= self.num_perturbations:
            raise ValidationError("top_b must be in [1, num_perturbations]")
        if self.step_size <= 0 or self.noise_std <= 0:
            raise ValidationError("step_size and noise_std must be > 0")
        if self.episodes_per_eval < 1:
            raise ValidationError("episodes_per_eval must be >= 1")


@dataclass
class PerturbationEval:
    direction_index: int
    delta_seed: int
    r_plus: float
    r_minus: float


@dataclass
class ArsStepResult:
    theta: np.ndarray
    sigma_r: float
    stalled: bool
    mean_return: float  # mean over all 2d perturbation returns
    evals: list


def perturbation_delta(n_params: int, delta_seed: int) -> np.ndarray:
    return np.random.default_rng(delta_seed).standard_normal(n_params)


def rank_directions(r_plus: np.ndarray, r_minus: np.ndarray, top_b: int) -> np.ndarray:
    """Indices of the top_b directions by max(r+, r-), best first."""
    score = np.maximum(r_plus, r_minus)
    return np.argsort(-score, kind="stable")[:top_b]


def ars_update(theta: np.ndarray, deltas: np.ndarray, r_plus: np.ndarray, r_minus: np.ndarray, cfg: ArsConfig):
    """Pure ARS parameter update; returns (new_theta, sigma_r, stalled, top)."""
    top = rank_directions(r_plus, r_minus, cfg.top_b)
    # sorted before the reduction so sigma_r is exactly invariant to the
    # antithetic relabeling (r+, r-) -> (r-, r+)
    used = np.sort(np.concatenate([r_plus[top], r_minus[top]]))
    sigma_r = float(np.std(used))
    if sigma_r < SIGMA_R_FLOOR:
        return theta, sigma_r, True, top
    step = (cfg.step_size / (cfg.top_b * sigma_r)) * ((r_plus[top] - r_minus[top]) @ deltas[top])
    new_theta = theta + step
    if not np.all(np.isfinite(new_theta)):
        raise ValidationError("ARS update produced non-finite parameters")
    return new_theta, sigma_r, False, top


def ars_step(theta: np.ndarray, cfg: ArsConfig, step_seed: int, evaluate_many) -> ArsStepResult:
    """One ARS iteration.

    ``evaluate_many(jobs)`` receives ``[(theta_perturbed, direction_index,
    sign), ...]`` in a fixed order and must return the matching list of
    returns; it may fan the jobs out to workers as long as order is kept.
    """
    cfg.validate()
    d = cfg.num_perturbations
    delta_seeds = [derive_seed(step_seed, "delta", i) for i in range(d)]
    deltas = np.stack([perturbation_delta(len(theta), s) for s in delta_seeds])
    jobs = []
    for i in range(d):
        jobs.append((theta + cfg.noise_std * deltas[i], i, +1))
        jobs.append((theta - cfg.noise_std * deltas[i], i, -1))
    returns = np.asarray(evaluate_many(jobs), dtype=np.float64)
    if returns.shape != (2 * d,):
        raise ValidationError(f"evaluator returned {returns.shape}, expected ({2 * d},)")
    if not np.all(np.isfinite(returns)):
        raise ValidationError("evaluator returned non-finite returns")
    r_plus, r_minus = returns[0::2], returns[1::2]
    new_theta, sigma_r, stalled, _ = ars_update(theta, deltas, r_plus, r_minus, cfg)
    evals = [
        PerturbationEval(direction_index=i, delta_seed=delta_seeds[i], r_plus=float(r_plus[i]), r_minus=float(r_minus[i]))
        for i in range(d)
    ]
    return ArsStepResult(
        theta=new_theta,
        sigma_r=sigma_r,
        stalled=stalled,
        mean_return=float(returns.mean()),
        evals=evals,
    )


def evaluate(
    env: type[EnvFamily],
    net: PolicyNet,
    theta: np.ndarray,
    filt: ObsFilter,
    task: TaskParams,
    latent,
    episodes: int,
    seed: int,
    gamma: float = 1.0,
) -> float:
    """Mean return over ``episodes`` rollouts with per-episode derived seeds."""
    if episodes < 1:
        raise ValidationError("episodes must be >= 1")
    frozen = filt.copy(frozen=True)

    def policy_eval(obs):
        return forward(net, theta, frozen, obs, latent=latent)

    totals = [
        rollout(env, policy_eval, task, derive_seed(seed, ep), gamma=gamma).total_return
        for ep in range(episodes)
    ]
    return float(np.mean(totals))


def progress_line(iteration: int, mean_return: float, sigma_r: float, stalled: bool) -> str:
    """One run-log row: iteration, mean return, sigma_R, stall flag."""
    return f"{iteration},{mean_return!r},{sigma_r!r},{int(stalled)}"
