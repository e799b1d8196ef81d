"""Deterministic tanh policies with running observation normalization.

One architecture serves three wirings:

* plain robust policy: no auxiliary input (``latent_dim = 0``);
* latent-conditioned policy: a low-dimensional context vector is appended
  to the normalized observation and adapted by strategy optimization;
* projected policy: the context is produced by a learned linear projection
  of the physics parameters instead of being free.

Parameters live in a single flat float64 vector (the shape random-search
optimizers want); ``flatten``/``unflatten`` round-trip bit-exactly.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .envs import MU_FIELDS

LATENT_BOUND = 2.0  # latent context box is [-LATENT_BOUND, LATENT_BOUND]^l
STD_FLOOR = 1e-8


def latent_bounds(latent_dim: int) -> tuple[np.ndarray, np.ndarray]:
    return (-LATENT_BOUND * np.ones(latent_dim), LATENT_BOUND * np.ones(latent_dim))


def center_latent(latent_dim: int) -> np.ndarray:
    return np.zeros(latent_dim, dtype=np.float64)


def clip_latent(latent: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(latent, dtype=np.float64), -LATENT_BOUND, LATENT_BOUND)


@dataclass(frozen=True)
class PolicyNet:
    """Feed-forward tanh network [obs + aux] -> hidden -> hidden -> action."""

    obs_dim: int
    action_dim: int
    latent_dim: int = 0
    hidden: tuple = (64, 64)

    @property
    def in_dim(self) -> int:
        return self.obs_dim + self.latent_dim

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        sizes = (self.in_dim, *self.hidden, self.action_dim)
        return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]

    @property
    def n_params(self) -> int:
        return sum(din * dout + dout for din, dout in self.layer_dims)

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Small random hidden layers, zero output layer (neutral initial action)."""
        chunks = []
        for i, (din, dout) in enumerate(self.layer_dims):
            last = i == len(self.layer_dims) - 1
            if last:
                w = np.zeros((din, dout))
            else:
                w = rng.standard_normal((din, dout)) / np.sqrt(din)
            chunks.append(w.ravel())
            chunks.append(np.zeros(dout))
        return np.concatenate(chunks)

    def unflatten(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValidationError(f"parameter vector has shape {theta.shape}, expected ({self.n_params},)")
        layers, ofs = [], 0
        for din, dout in self.layer_dims:
            w = theta[ofs : ofs + din * dout].reshape(din, dout)
            ofs += din * dout
            b = theta[ofs : ofs + dout]
            ofs += dout
            layers.append((w, b))
        return layers

    def flatten(self, layers) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])

    def forward_batch(self, thetas: np.ndarray, xs: np.ndarray) -> np.ndarray:
        """Evaluate m parameter vectors on m stacks of inputs.

        thetas: (m, n_params); xs: (m, rows, in_dim) -> (m, rows, action_dim).
        Each batch slice is computed independently, so results do not depend
        on how a larger batch was split.
        """
        m = thetas.shape[0]
        h = xs
        ofs = 0
        for i, (din, dout) in enumerate(self.layer_dims):
            w = thetas[:, ofs : ofs + din * dout].reshape(m, din, dout)
            ofs += din * dout
            b = thetas[:, ofs : ofs + dout]
            ofs += dout
            h = np.tanh(np.matmul(h, w) + b[:, None, :])
        return h

    def forward(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        if x.shape != (self.in_dim,):
            raise ValidationError(f"policy input has shape {x.shape}, expected ({self.in_dim},)")
        return self.forward_batch(theta[None, :], x[None, None, :])[0, 0]


@dataclass
class ObsFilter:
    """Welford running mean/second-moment normalizer for observations.

    With no data the filter is the identity (mean 0, std 1). Once frozen,
    ``normalize`` is a pure function and the accumulators never move.
    """

    count: float
    mean: np.ndarray
    m2: np.ndarray
    frozen: bool = False

    @classmethod
    def create(cls, dim: int) -> "ObsFilter":
        return cls(count=0.0, mean=np.zeros(dim), m2=np.zeros(dim))

    @property
    def std(self) -> np.ndarray:
        if self.count < 1:
            return np.ones_like(self.mean)
        return np.sqrt(np.maximum(self.m2 / self.count, 0.0))

    def normalize(self, obs: np.ndarray, update: bool = False) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if update and not self.frozen:
            self.count += 1.0
            delta = obs - self.mean
            self.mean = self.mean + delta / self.count
            self.m2 = self.m2 + delta * (obs - self.mean)
        return (obs - self.mean) / np.maximum(self.std, STD_FLOOR)

    def merge(self, other: "ObsFilter") -> None:
        """Fold another accumulator into this one (parallel Welford merge)."""
        if self.frozen:
            raise ValidationError("cannot merge into a frozen filter")
        if other.count == 0:
            return
        if self.count == 0:
            self.count, self.mean, self.m2 = float(other.count), other.mean.copy(), other.m2.copy()
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / total)
        self.m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / total)
        self.count = total

    def copy(self, frozen: bool | None = None) -> "ObsFilter":
        return ObsFilter(
            count=self.count,
            mean=self.mean.copy(),
            m2=self.m2.copy(),
            frozen=self.frozen if frozen is None else frozen,
        )


class WelfordBatch:
    """Per-row Welford accumulators for lockstep rollouts.

    Row r sees exactly the sequence of observations episode r saw, so its
    final state matches a scalar rollout of that episode bit for bit.
    """

    def __init__(self, rows: int, dim: int):
        self.count = np.zeros(rows)
        self.mean = np.zeros((rows, dim))
        self.m2 = np.zeros((rows, dim))

    def update(self, obs: np.ndarray, active: np.ndarray) -> None:
        self.count[active] += 1.0
        delta = obs[active] - self.mean[active]
        new_mean = self.mean[active] + delta / self.count[active, None]
        self.m2[active] += delta * (obs[active] - new_mean)
        self.mean[active] = new_mean

    def row_filter(self, r: int) -> ObsFilter:
        return ObsFilter(count=float(self.count[r]), mean=self.mean[r].copy(), m2=self.m2[r].copy())


@dataclass
class ProjectionParams:
    """Affine map from the physics-parameter vector to the latent box."""

    weights: np.ndarray  # (latent_dim, len(MU_FIELDS))
    bias: np.ndarray  # (latent_dim,)

    @classmethod
    def zeros(cls, latent_dim: int) -> "ProjectionParams":
        return cls(weights=np.zeros((latent_dim, len(MU_FIELDS))), bias=np.zeros(latent_dim))

    @property
    def latent_dim(self) -> int:
        return self.weights.shape[0]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    @classmethod
    def unflatten(cls, vec: np.ndarray, latent_dim: int) -> "ProjectionParams":
        n_w = latent_dim * len(MU_FIELDS)
        if vec.shape != (n_w + latent_dim,):
            raise ValidationError(f"projection vector has shape {vec.shape}, expected ({n_w + latent_dim},)")
        return cls(weights=vec[:n_w].reshape(latent_dim, len(MU_FIELDS)).copy(), bias=vec[n_w:].copy())

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size


def project(proj: ProjectionParams, mu: np.ndarray) -> np.ndarray:
    """Map physics parameters to a latent context, clamped to the latent box."""
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (len(MU_FIELDS),):
        raise ValidationError(f"physics vector has shape {mu.shape}, expected ({len(MU_FIELDS)},)")
    return clip_latent(proj.weights @ mu + proj.bias)


def forward(net: PolicyNet, theta: np.ndarray, filt: ObsFilter, obs: np.ndarray, latent=None, update_filter: bool = False) -> np.ndarray:
    """Normalize the observation, append the latent context, run the network."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (net.obs_dim,):
        raise ValidationError(f"observation has shape {obs.shape}, expected ({net.obs_dim},)")
    if not np.all(np.isfinite(obs)):
        raise ValidationError("observation contains non-finite values")
    x = filt.normalize(obs, update=update_filter)
    if net.latent_dim:
        latent = np.asarray(latent, dtype=np.float64) if latent is not None else None
        if latent is None or latent.shape != (net.latent_dim,):
            raise ValidationError(f"latent must have shape ({net.latent_dim},)")
        x = np.concatenate([x, latent])
    elif latent is not None and np.asarray(latent).size:
        raise ValidationError("this policy takes no latent input")
    return net.forward(theta, x)


# --- array codec for the checkpoint document -------------------------------

def encode_array(a: np.ndarray) -> dict:
    """Base64 little-endian float64 encoding; round-trips bit-exactly."""
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(doc: dict) -> np.ndarray:
    raw = base64.b64decode(doc["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(doc["shape"]).copy()
