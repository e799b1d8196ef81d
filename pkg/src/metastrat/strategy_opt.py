"""Budgeted black-box search over the latent box.

The same entry point, ``optimize_latent``, serves training-time strategy
selection and test-time adaptation; only the episode budget differs. Three
methods are available:

* ``bo``     - Gaussian-process Bayesian optimization with expected
               improvement (the default). Quasi-random initialization, then
               argmax-EI proposals found by a scrambled low-discrepancy scan
               plus local coordinate refinement.
* ``cmaes``  - a compact (mu_w, lambda) CMA-ES with cumulative step-size
               adaptation and rank-1 + rank-mu covariance updates, box
               constraint handled by resampling.
* ``random`` - uniform sampling (the budget-1 / ablation baseline).

Every method spends at most ``budget.max_episodes`` evaluator calls and
returns the incumbent best of the evaluated history.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import ConfigError, ValidationError
from .seeding import derive_seed, rng_from

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class SoBudget:
    """Episode budget for one strategy-optimization run."""

    max_episodes: int
    init_samples: int = 5

    def validate(self) -> None:
        if self.max_episodes < 1:
            raise ConfigError("strategy optimization budget must be >= 1 episode")
        if self.init_samples < 1:
            raise ConfigError("init_samples must be >= 1")


@dataclass
class SoResult:
    best_latent: np.ndarray
    best_return: float
    history: list  # [(latent, return)] in evaluation order

    def trace_lines(self) -> list[str]:
        """CSV rows: evaluation index, latent components, return."""
        return [
            ",".join([str(i)] + [repr(float(c)) for c in latent] + [repr(float(ret))])
            for i, (latent, ret) in enumerate(self.history)
        ]


# ---------------------------------------------------------------------------
# Gaussian process regression (squared-exponential kernel)
# ---------------------------------------------------------------------------

_JITTERS = (1e-10, 1e-8, 1e-6)


@dataclass
class GpModel:
    x: np.ndarray  # (n, d) observed latents
    y: np.ndarray  # (n,) observed returns
    length_scales: np.ndarray  # (d,)
    signal_var: float
    noise_var: float
    y_mean: float = 0.0
    chol: np.ndarray | None = None
    alpha: np.ndarray | None = None


def _kernel(xa: np.ndarray, xb: np.ndarray, length_scales: np.ndarray, signal_var: float) -> np.ndarray:
    da = xa[:, None, :] / length_scales
    db = xb[None, :, :] / length_scales
    sq = np.sum((da - db) ** 2, axis=2)
    return signal_var * np.exp(-0.5 * sq)


def fit_gp(x: np.ndarray, y: np.ndarray, length_scales, signal_var: float, noise_var: float) -> GpModel:
    """Factorize the kernel matrix, escalating jitter if Cholesky fails."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 1:
        raise ValidationError("GP needs at least one observation")
    length_scales = np.asarray(length_scales, dtype=np.float64)
    y_mean = float(y.mean())
    k = _kernel(x, x, length_scales, signal_var)
    last_err = None
    for jitter in _JITTERS:
        try:
            chol = np.linalg.cholesky(k + (noise_var + jitter) * np.eye(len(x)))
            tmp = np.linalg.solve(chol, y - y_mean)
            alpha = np.linalg.solve(chol.T, tmp)
            return GpModel(
                x=x,
                y=y,
                length_scales=length_scales,
                signal_var=signal_var,
                noise_var=noise_var,
                y_mean=y_mean,
                chol=chol,
                alpha=alpha,
            )
        except np.linalg.LinAlgError as err:  # pragma: no cover - needs degenerate kernel
            last_err = err
    raise ValidationError(f"kernel matrix not positive definite even with jitter: {last_err}")


def _posterior_batch(model: GpModel, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ks = _kernel(queries, model.x, model.length_scales, model.signal_var)  # (q, n)
    means = model.y_mean + ks @ model.alpha
    v = np.linalg.solve(model.chol, ks.T)  # (n, q)
    variances = model.signal_var - np.sum(v * v, axis=0)
    variances = np.where(variances > -1e-10, np.maximum(variances, 0.0), variances)
    if np.any(variances < 0):
        raise ValidationError("GP posterior variance fell below the clamping tolerance")
    return means, variances


def gp_posterior(model: GpModel, query) -> tuple[float, float]:
    """Posterior (mean, variance) at one query point."""
    q = np.atleast_2d(np.asarray(query, dtype=np.float64))
    means, variances = _posterior_batch(model, q)
    return float(means[0]), float(variances[0])


def _log_marginal_likelihood(model: GpModel) -> float:
    yc = model.y - model.y_mean
    return float(
        -0.5 * yc @ model.alpha - np.sum(np.log(np.diag(model.chol))) - 0.5 * len(model.y) * math.log(2 * math.pi)
    )


_LS_GRID = np.geomspace(0.05, 2.0, 16)  # length scale as a fraction of box width
_NOISE_GRID = (1e-6, 0.01, 0.05)  # noise std as a fraction of the return range
_ML_FIT_MIN_POINTS = 8
_NOISE_FRACTION = 0.05


def fit_gp_auto(x: np.ndarray, y: np.ndarray, bounds: tuple[np.ndarray, np.ndarray]) -> GpModel:
    """Fit with package conventions.

    Below ``_ML_FIT_MIN_POINTS`` observations: length scale pinned to half
    the box width and a conservative noise level sized to the observed return
    range. With enough data both hyperparameters come from a marginal-
    likelihood grid search, so noise-free objectives are interpolated while
    noisy rollout returns keep their regularization.
    """
    lo, hi = bounds
    widths = hi - lo
    y = np.asarray(y, dtype=np.float64)
    signal_var = max(float(np.var(y)), 1e-12)
    y_range = float(y.max() - y.min())
    default_noise = (_NOISE_FRACTION * y_range) ** 2
    if len(y) < _ML_FIT_MIN_POINTS:
        return fit_gp(x, y, 0.5 * widths, signal_var, default_noise)
    best_model, best_ml = None, -np.inf
    for frac in _LS_GRID:
        for noise_frac in _NOISE_GRID:
            model = fit_gp(x, y, frac * widths, signal_var, (noise_frac * y_range) ** 2)
            ml = _log_marginal_likelihood(model)
            if ml > best_ml:
                best_model, best_ml = model, ml
    return best_model


# ---------------------------------------------------------------------------
# Expected improvement
# ---------------------------------------------------------------------------

def expected_improvement(mean: float, variance: float, incumbent_best: float) -> float:
    """EI for maximization; total on variance >= 0 and always >= 0."""
    if variance < 0:
        raise ValidationError("variance must be >= 0")
    s = math.sqrt(variance)
    gap = mean - incumbent_best
    if s == 0.0:
        return max(gap, 0.0)
    z = gap / s
    phi_cdf = 0.5 * (1.0 + math.erf(z / SQRT2))
    phi_pdf = math.exp(-0.5 * z * z) / SQRT2PI
    return max(gap * phi_cdf + s * phi_pdf, 0.0)


def _expected_improvement_vec(means: np.ndarray, variances: np.ndarray, incumbent: float) -> np.ndarray:
    from scipy.special import erf

    s = np.sqrt(np.maximum(variances, 0.0))
    gap = means - incumbent
    out = np.maximum(gap, 0.0)
    pos = s > 0
    z = np.zeros_like(gap)
    np.divide(gap, s, out=z, where=pos)
    cdf = 0.5 * (1.0 + erf(z / SQRT2))
    pdf = np.exp(-0.5 * z * z) / SQRT2PI
    ei = gap * cdf + s * pdf
    return np.where(pos, np.maximum(ei, 0.0), out)


# ---------------------------------------------------------------------------
# CMA-ES
# ---------------------------------------------------------------------------

@dataclass
class CmaState:
    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    bounds: tuple[np.ndarray, np.ndarray]
    lam: int
    generation: int = 0
    counteval: int = 0

    @property
    def dim(self) -> int:
        return len(self.mean)


def default_lambda(dim: int) -> int:
    return 4 + int(3 * math.log(dim))


def cma_init(mean, sigma: float, bounds, lam: int | None = None) -> CmaState:
    mean = np.asarray(mean, dtype=np.float64)
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    if np.any(lo >= hi):
        raise ConfigError("bounds must satisfy lo < hi")
    d = len(mean)
    return CmaState(
        mean=mean.copy(),
        sigma=float(sigma),
        cov=np.eye(d),
        p_sigma=np.zeros(d),
        p_c=np.zeros(d),
        bounds=(lo, hi),
        lam=lam or default_lambda(d),
    )


def cma_ask(state: CmaState, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    """Sample mirrored candidate pairs inside the box.

    Draws come in antithetic pairs (z, -z), which sharpens recombination at
    the small populations used here; out-of-box draws are resampled (up to a
    cap, then clipped).
    """
    lo, hi = state.bounds
    d = state.dim
    vals, vecs = np.linalg.eigh(state.cov)
    root = vecs @ np.diag(np.sqrt(np.maximum(vals, 0.0)))
    n = count if count is not None else state.lam
    zs = []
    for _ in range((n + 1) // 2):
        z = rng.standard_normal(d)
        zs.extend([z, -z])
    points = np.empty((n, d))
    for i in range(n):
        x = state.mean + state.sigma * (root @ zs[i])
        tries = 0
        while not (np.all(x >= lo) and np.all(x <= hi)) and tries < 100:
            x = state.mean + state.sigma * (root @ rng.standard_normal(d))
            tries += 1
        points[i] = np.clip(x, lo, hi)
    return points


def _cma_weights(n: int, d: int, c_1: float, c_mu: float):
    """Positive (recombination) and scaled negative (active) weights."""
    raw = np.log((n + 1) / 2) - np.log(np.arange(1, n + 1))
    mu = n // 2
    w_pos = raw[:mu] / raw[:mu].sum()
    mueff = float(w_pos.sum() ** 2 / np.sum(w_pos**2))
    w_neg = raw[mu:]
    if len(w_neg) and c_mu > 0:
        mueff_neg = float(w_neg.sum() ** 2 / np.sum(w_neg**2))
        scale = min(
            1 + c_1 / c_mu,
            1 + 2 * mueff_neg / (mueff + 2),
            (1 - c_1 - c_mu) / (d * c_mu),
        )
        w_neg = w_neg / abs(w_neg.sum()) * scale
    else:
        w_neg = np.zeros(0)
    return w_pos, w_neg, mu, mueff


def cma_step(state: CmaState, evaluations: list) -> CmaState:
    """(mu_w, lambda) update of mean, step size (CSA), and covariance
    (rank-1 plus active rank-mu).

    ``evaluations`` is a list of (point, fitness) pairs with fitness
    maximized. Selection is purely rank based, so any monotone fitness
    transform yields the identical update. If every fitness ties there is no
    selection signal: the mean and covariance stay put and the step size
    contracts.
    """
    if len(evaluations) < 2:
        raise ValidationError("cma_step needs at least 2 evaluations")
    d = state.dim
    xs = np.stack([np.asarray(x, dtype=np.float64) for x, _ in evaluations])
    fs = np.array([float(f) for _, f in evaluations])
    new = CmaState(
        mean=state.mean.copy(),
        sigma=state.sigma,
        cov=state.cov.copy(),
        p_sigma=state.p_sigma.copy(),
        p_c=state.p_c.copy(),
        bounds=state.bounds,
        lam=state.lam,
        generation=state.generation + 1,
        counteval=state.counteval + len(evaluations),
    )

    n = len(evaluations)
    raw = np.log((n + 1) / 2) - np.log(np.arange(1, n // 2 + 1))
    w0 = raw / raw.sum()
    mueff = float(w0.sum() ** 2 / np.sum(w0**2))
    c_sigma = (mueff + 2) / (d + mueff + 5)
    d_sigma = 1 + c_sigma + 2 * max(0.0, math.sqrt((mueff - 1) / (d + 1)) - 1)
    c_c = (4 + mueff / d) / (d + 4 + 2 * mueff / d)
    c_1 = 2 / ((d + 1.3) ** 2 + mueff)
    c_mu = min(1 - c_1, 2 * (mueff - 2 + 1 / mueff) / ((d + 2) ** 2 + mueff))
    chi_n = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))
    w_pos, w_neg, mu, _ = _cma_weights(n, d, c_1, c_mu)

    if fs.max() == fs.min():
        new.p_sigma = (1 - c_sigma) * new.p_sigma
        arg = (c_sigma / d_sigma) * (np.linalg.norm(new.p_sigma) / chi_n - 1)
        new.sigma = state.sigma * math.exp(max(min(arg, 1.0), -1.0))
        return new

    order = np.argsort(-fs, kind="stable")
    ys = (xs[order] - state.mean) / state.sigma  # (n, d) best first
    y_w = w_pos @ ys[:mu]

    vals, vecs = np.linalg.eigh(state.cov)
    vals = np.maximum(vals, 1e-20)
    inv_sqrt = vecs @ np.diag(vals**-0.5) @ vecs.T
    z_w = inv_sqrt @ y_w

    new.mean = state.mean + state.sigma * y_w
    new.p_sigma = (1 - c_sigma) * state.p_sigma + math.sqrt(c_sigma * (2 - c_sigma) * mueff) * z_w
    ps_norm = float(np.linalg.norm(new.p_sigma))
    expected = math.sqrt(1 - (1 - c_sigma) ** (2 * new.generation))
    h_sigma = 1.0 if ps_norm / expected < (1.4 + 2 / (d + 1)) * chi_n else 0.0
    new.p_c = (1 - c_c) * state.p_c + h_sigma * math.sqrt(c_c * (2 - c_c) * mueff) * y_w

    rank_mu = sum(wi * np.outer(yi, yi) for wi, yi in zip(w_pos, ys[:mu]))
    for wi, yi in zip(w_neg, ys[mu:]):
        zi = inv_sqrt @ yi
        rank_mu = rank_mu + wi * (d / max(float(zi @ zi), 1e-12)) * np.outer(yi, yi)
    w_sum = float(w_pos.sum() + w_neg.sum())
    new.cov = (
        (1 - c_1 - c_mu * w_sum) * state.cov
        + c_1 * (np.outer(new.p_c, new.p_c) + (1 - h_sigma) * c_c * (2 - c_c) * state.cov)
        + c_mu * rank_mu
    )
    arg = (c_sigma / d_sigma) * (ps_norm / (chi_n * expected) - 1)
    new.sigma = state.sigma * math.exp(max(min(arg, 1.0), -1.0))

    eigvals = np.linalg.eigvalsh(new.cov)
    if not np.all(np.isfinite(new.cov)) or eigvals.min() <= 1e-14:
        log.warning("CMA covariance lost positive definiteness; resetting to identity")
        new.cov = np.eye(d)
        new.p_c = np.zeros(d)
    return new


# ---------------------------------------------------------------------------
# optimize_latent
# ---------------------------------------------------------------------------

SO_METHODS = ("bo", "cmaes", "random")

_SCAN_BITS = 10  # 2^10 = 1024 quasi-random scan points for the EI argmax
_REFINE_ROUNDS = 24


def _sobol_points(dim: int, m_bits: int, seed: int, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    unit = sampler.random_base2(m=m_bits)
    return lo + unit * (hi - lo)


def _argmax_ei(model: GpModel, incumbent: float, lo: np.ndarray, hi: np.ndarray, seed: int) -> np.ndarray:
    cands = _sobol_points(len(lo), _SCAN_BITS, seed, lo, hi)
    means, variances = _posterior_batch(model, cands)
    ei = _expected_improvement_vec(means, variances, incumbent)
    if ei.max() <= 1e-15:
        # flat acquisition (e.g. constant objective): take the scan point
        # farthest from the data for pure exploration
        d2 = ((cands[:, None, :] - model.x[None, :, :]) ** 2).sum(axis=2).min(axis=1)
        return cands[int(np.argmax(d2))]
    best = cands[int(np.argmax(ei))].copy()
    best_ei = float(ei.max())
    step = (hi - lo) / 32.0
    for _ in range(_REFINE_ROUNDS):
        improved = False
        for dim in range(len(lo)):
            for sign in (+1.0, -1.0):
                trial = best.copy()
                trial[dim] = float(np.clip(trial[dim] + sign * step[dim], lo[dim], hi[dim]))
                m, v = _posterior_batch(model, trial[None, :])
                cand_ei = float(_expected_improvement_vec(m, v, incumbent)[0])
                if cand_ei > best_ei:
                    best, best_ei = trial, cand_ei
                    improved = True
        if not improved:
            step = step / 2.0
            if np.all(step < 1e-6):
                break
    return best


def optimize_latent(evaluator, bounds, budget: SoBudget, method: str = "bo", seed: int = 0) -> SoResult:
    """Search the latent box for the best evaluator value within the budget.

    ``evaluator(latent) -> float`` is called at most ``budget.max_episodes``
    times; a non-finite value is recorded as -inf and excluded from any
    surrogate fit. Returns the incumbent best of the evaluated history.
    """
    budget.validate()
    if method not in SO_METHODS:
        raise ConfigError(f"unknown strategy-optimization method {method!r}; valid: {SO_METHODS}")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    if lo.shape != hi.shape or np.any(lo >= hi):
        raise ConfigError("bounds must be equal-shape vectors with lo < hi")
    dim = len(lo)
    history: list[tuple[np.ndarray, float]] = []

    def probe(point: np.ndarray) -> float:
        point = np.clip(np.asarray(point, dtype=np.float64), lo, hi)
        value = float(evaluator(point))
        if not math.isfinite(value):
            value = -math.inf
        history.append((point.copy(), value))
        return value

    remaining = budget.max_episodes
    if method == "random":
        rng = rng_from(seed, "so_random")
        for _ in range(remaining):
            probe(rng.uniform(lo, hi))
    elif method == "bo":
        n_init = min(budget.init_samples, remaining)
        for point in _sobol_points(dim, max(1, math.ceil(math.log2(max(n_init, 2)))), derive_seed(seed, "so_init"), lo, hi)[:n_init]:
            probe(point)
        remaining -= n_init
        rng = rng_from(seed, "so_bo_fallback")
        for k in range(remaining):
            finite = [(p, v) for p, v in history if math.isfinite(v)]
            if not finite:
                probe(rng.uniform(lo, hi))
                continue
            xs = np.stack([p for p, _ in finite])
            ys = np.array([v for _, v in finite])
            model = fit_gp_auto(xs, ys, (lo, hi))
            probe(_argmax_ei(model, float(ys.max()), lo, hi, derive_seed(seed, "so_scan", k)))
    else:  # cmaes
        rng = rng_from(seed, "so_cma")
        # small populations buy more generations out of tiny budgets
        lam = 4 if dim <= 3 else default_lambda(dim)
        state = cma_init(0.5 * (lo + hi), 0.3 * float(np.max(hi - lo)) / 2.0, (lo, hi), lam=lam)
        while remaining > 0:
            n = min(state.lam, remaining)
            points = cma_ask(state, rng, count=n)
            evals = [(p, probe(p)) for p in points]
            remaining -= n
            finite = [(p, v) for p, v in evals if math.isfinite(v)]
            if len(finite) >= 2:
                state = cma_step(state, finite)

    best_idx = int(np.argmax([v for _, v in history]))
    best_latent, best_return = history[best_idx]
    return SoResult(best_latent=best_latent.copy(), best_return=float(best_return), history=history)
