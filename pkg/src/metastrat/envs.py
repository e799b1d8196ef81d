"""Desk-scale randomized-dynamics environments.

Two scratch-built families expose the same randomization axes a legged-robot
simulator would (mass, motor strength, frictions, control latency, supply
voltage, inertia, sensor bias, slope, carried payload), but with closed-form
dynamics that an independent integrator can verify:

* ``SlidingMass``  - 1-D point mass driven by a lagged force actuator against
  dry + viscous friction, optionally on a slope.
* ``CartPole``     - cart on a (possibly inclined) rail balancing a pole while
  moving forward; tipping the pole past a threshold ends the episode early.

Both families run at 50 Hz (dt = 0.02 s) for at most 250 steps and pay a
per-step reward equal to the forward velocity clipped to +/- 1 m/s, so every
episode return lies in [-250, 250].

The simulation core is vectorized: a batch of (task, state) rows is stepped
in lockstep, and the scalar API wraps a batch of one row. Every per-row
computation depends only on that row, so results are identical no matter how
a batch is chunked across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EnvStepError, ValidationError

DT = 0.02  # control timestep, seconds
V_BAR = 1.0  # reward velocity clip, m/s
HORIZON = 250  # max episode length, steps
REWARD_WEIGHT = 1.0
GRAVITY = 9.81
INIT_NOISE = 0.005  # uniform +/- perturbation on each initial state variable

CARRY_ACCEL_LIMIT = 8.0  # m/s^2; payload is dropped past this
CARRY_MASS_FACTOR = 1.25  # effective body-mass multiplier while loaded

MAX_LATENCY = 10

# Order of the physics-parameter vector fed to projected policies.
MU_FIELDS = (
    "mass_scale",
    "actuator_gain",
    "contact_friction",
    "joint_friction",
    "latency_steps",
    "supply_scale",
    "inertia_scale",
    "sensor_offset",
)

_MULTIPLIER_FIELDS = ("mass_scale", "actuator_gain", "supply_scale", "inertia_scale")


@dataclass(frozen=True)
class TaskParams:
    """One concrete environment instance (the randomized dynamics vector)."""

    mass_scale: float = 1.0
    actuator_gain: float = 1.0
    contact_friction: float = 0.7
    joint_friction: float = 0.1
    latency_steps: int = 0
    supply_scale: float = 1.0
    inertia_scale: float = 1.0
    sensor_offset: float = 0.0
    slope_angle: float = 0.0
    carry_mode: bool = False

    def validate(self) -> None:
        for name in _MULTIPLIER_FIELDS:
            if not math.isfinite(getattr(self, name)) or getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be a positive finite multiplier")
        for name in ("contact_friction", "joint_friction"):
            if not math.isfinite(getattr(self, name)) or getattr(self, name) < 0:
                raise ValidationError(f"{name} must be finite and >= 0")
        if not 0 <= int(self.latency_steps) <= MAX_LATENCY:
            raise ValidationError(f"latency_steps must be in [0, {MAX_LATENCY}]")
        if not math.isfinite(self.sensor_offset):
            raise ValidationError("sensor_offset must be finite")
        if not 0.0 <= self.slope_angle <= math.pi / 4:
            raise ValidationError("slope_angle must be in [0, pi/4]")

    def to_vector(self) -> np.ndarray:
        """Physics parameters as the 8-dim vector consumed by projections."""
        return np.array([float(getattr(self, f)) for f in MU_FIELDS], dtype=np.float64)

    @classmethod
    def nominal(cls) -> "TaskParams":
        return cls()


# Training-time randomization bounds, in environment-native units.
# Slope and sensor offset stay pinned at zero during training; the
# adaptation suites draw them from their own out-of-training intervals.
TRAINING_BOUNDS: dict[str, tuple[float, float]] = {
    "mass_scale": (0.6, 1.6),
    "actuator_gain": (0.5, 1.5),
    "contact_friction": (0.2, 1.25),
    "joint_friction": (0.0, 0.2),
    "latency_steps": (0.0, 4.0),
    "supply_scale": (10.0 / 14.0, 18.0 / 14.0),
    "inertia_scale": (0.25, 2.0),
    "sensor_offset": (0.0, 0.0),
    "slope_angle": (0.0, 0.0),
}

_BOUND_FIELDS = tuple(TRAINING_BOUNDS)
_MULT_FLOOR = 0.05


@dataclass(frozen=True)
class RangeSpec:
    """Per-parameter sampling box, optionally an extension of a base box.

    An extended spec remembers the box it widened so that sampling can
    reject draws that fall entirely inside the original range.
    """

    bounds: dict[str, tuple[float, float]]
    extension_factor: float = 0.0
    base_bounds: dict[str, tuple[float, float]] | None = None

    def validate(self) -> None:
        for name in _BOUND_FIELDS:
            if name not in self.bounds:
                raise ValidationError(f"range spec missing bounds for {name}")
            lo, hi = self.bounds[name]
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValidationError(f"invalid bounds for {name}: ({lo}, {hi})")
        if self.extension_factor < 0:
            raise ValidationError("extension_factor must be >= 0")
        if self.extension_factor > 0 and self.base_bounds is None:
            raise ValidationError("extended spec must carry its base bounds")

    @classmethod
    def training(cls, overrides: dict[str, tuple[float, float]] | None = None) -> "RangeSpec":
        bounds = dict(TRAINING_BOUNDS)
        if overrides:
            for name, pair in overrides.items():
                if name not in bounds:
                    raise ConfigError(f"unknown range parameter {name!r}")
                bounds[name] = (float(pair[0]), float(pair[1]))
        spec = cls(bounds=bounds)
        spec.validate()
        return spec

    def extended(self, factor: float = 0.3) -> "RangeSpec":
        """Widen every bound by ``factor`` of its half-width on both sides."""
        if factor <= 0:
            raise ConfigError("extension factor must be > 0")
        widened = {}
        for name, (lo, hi) in self.bounds.items():
            pad = factor * 0.5 * (hi - lo)
            new_lo, new_hi = lo - pad, hi + pad
            if name in _MULTIPLIER_FIELDS:
                new_lo = max(new_lo, _MULT_FLOOR)
            elif name in ("contact_friction", "joint_friction"):
                new_lo = max(new_lo, 0.0)
            elif name == "latency_steps":
                new_lo, new_hi = max(new_lo, 0.0), min(new_hi, float(MAX_LATENCY))
            elif name == "slope_angle":
                new_lo, new_hi = max(new_lo, 0.0), min(new_hi, math.pi / 4)
            widened[name] = (new_lo, new_hi)
        spec = RangeSpec(bounds=widened, extension_factor=factor, base_bounds=dict(self.bounds))
        spec.validate()
        return spec

    def contains(self, task: TaskParams, bounds: dict | None = None) -> bool:
        """True when every bounded field of ``task`` lies inside the box."""
        box = self.bounds if bounds is None else bounds
        for name in _BOUND_FIELDS:
            lo, hi = box[name]
            value = float(getattr(task, name))
            if value < lo or value > hi:
                return False
        return True

    def _can_escape_base(self) -> bool:
        assert self.base_bounds is not None
        for name in _BOUND_FIELDS:
            lo, hi = self.bounds[name]
            blo, bhi = self.base_bounds[name]
            if name == "latency_steps":
                if math.ceil(lo) < math.ceil(blo) or math.floor(hi) > math.floor(bhi):
                    return True
            elif lo < blo or hi > bhi:
                return True
        return False


def sample_task(spec: RangeSpec, rng: np.random.Generator) -> TaskParams:
    """Draw a task uniformly from ``spec``.

    For an extended spec, draws are rejected until at least one parameter
    falls outside the base (training) box.
    """
    spec.validate()
    if spec.extension_factor > 0 and not spec._can_escape_base():
        raise ConfigError("extended spec adds no volume outside its base; rejection would not terminate")
    while True:
        values = {}
        for name in _BOUND_FIELDS:
            lo, hi = spec.bounds[name]
            if name == "latency_steps":
                ilo, ihi = math.ceil(lo), math.floor(hi)
                values[name] = int(rng.integers(ilo, ihi + 1))
            else:
                values[name] = float(rng.uniform(lo, hi))
        task = TaskParams(**values, carry_mode=False)
        if spec.extension_factor == 0:
            return task
        if not spec.contains(task, bounds=spec.base_bounds):
            return task


@dataclass(eq=False)
class EnvState:
    """Full simulator state for one episode.

    ``action_queue`` holds the last ``latency_steps`` commanded actions
    (oldest first); the action executed at step t was commanded at t - k.
    """

    phys: np.ndarray
    action_queue: np.ndarray  # (latency_steps, action_dim)
    last_action: np.ndarray  # (action_dim,) previously commanded action
    step_index: int
    carried_flag: bool
    done: bool
    rng_state: dict

    def to_bytes(self) -> bytes:
        head = f"{self.step_index}|{int(self.carried_flag)}|{int(self.done)}|{self.action_queue.shape[0]}|{sorted(self.rng_state['state'].items())!r}"
        return head.encode() + self.phys.tobytes() + self.action_queue.tobytes() + self.last_action.tobytes()


@dataclass
class StepResult:
    next_observation: np.ndarray
    reward: float
    done: bool
    info: dict


@dataclass
class Rollout:
    """One episode: per-step states/actions/rewards plus the total return."""

    states: np.ndarray  # (T+1, phys_dim)
    actions: np.ndarray  # (T, action_dim)
    rewards: np.ndarray  # (T,)
    early_terminated: bool
    total_return: float

    @property
    def length(self) -> int:
        return len(self.rewards)


def reward(prev_pos, pos, direction, dt: float = DT, v_bar: float = V_BAR) -> float:
    """Clipped forward velocity: clip((pos - prev_pos) . direction / dt, -v_bar, v_bar)."""
    if dt <= 0:
        raise ValidationError("dt must be > 0")
    direction = np.atleast_1d(np.asarray(direction, dtype=np.float64))
    norm = float(np.linalg.norm(direction))
    if abs(norm - 1.0) > 1e-9:
        raise ValidationError("direction must be a unit vector")
    disp = float(np.dot(np.atleast_1d(pos) - np.atleast_1d(prev_pos), direction))
    return float(np.clip(disp / dt, -v_bar, v_bar))


@dataclass
class BatchTasks:
    """Struct-of-arrays view over a list of tasks, one row per episode."""

    mass_scale: np.ndarray
    actuator_gain: np.ndarray
    contact_friction: np.ndarray
    joint_friction: np.ndarray
    latency_steps: np.ndarray
    supply_scale: np.ndarray
    inertia_scale: np.ndarray
    sensor_offset: np.ndarray
    slope_angle: np.ndarray
    carry_mode: np.ndarray

    @classmethod
    def from_tasks(cls, tasks: list[TaskParams]) -> "BatchTasks":
        def arr(name, dtype=np.float64):
            return np.array([getattr(t, name) for t in tasks], dtype=dtype)

        return cls(
            mass_scale=arr("mass_scale"),
            actuator_gain=arr("actuator_gain"),
            contact_friction=arr("contact_friction"),
            joint_friction=arr("joint_friction"),
            latency_steps=arr("latency_steps", np.int64),
            supply_scale=arr("supply_scale"),
            inertia_scale=arr("inertia_scale"),
            sensor_offset=arr("sensor_offset"),
            slope_angle=arr("slope_angle"),
            carry_mode=arr("carry_mode", bool),
        )

    def __len__(self) -> int:
        return len(self.mass_scale)


@dataclass
class BatchState:
    """Lockstep state for a batch of episodes (see module docstring)."""

    phys: np.ndarray  # (R, phys_dim)
    queue: np.ndarray  # (R, QW, action_dim), right-aligned FIFO
    last_action: np.ndarray  # (R, action_dim)
    step_index: np.ndarray  # (R,)
    carried: np.ndarray  # (R,)
    done: np.ndarray  # (R,)


class EnvFamily:
    """Shared mechanics: latency queue, reward, carry rule, episode clock."""

    name: str = ""
    obs_dim: int = 0
    action_dim: int = 1
    phys_dim: int = 0

    # --- family-specific hooks -------------------------------------------
    @classmethod
    def _accelerations(cls, phys, tasks, executed):
        """Return (new_phys, body_accel, fell) after one dt of dynamics.

        ``executed`` is the raw clipped command actually applied this step
        (after the latency queue); each family composes its own force law.
        """
        raise NotImplementedError

    @classmethod
    def _observe_batch(cls, state: BatchState, tasks: BatchTasks) -> np.ndarray:
        raise NotImplementedError

    # --- batch engine -----------------------------------------------------
    @classmethod
    def batch_reset(cls, tasks: BatchTasks, seeds) -> BatchState:
        n = len(tasks)
        qw = max(1, int(tasks.latency_steps.max()) if n else 1)
        phys = np.zeros((n, cls.phys_dim), dtype=np.float64)
        for r in range(n):
            rng = np.random.default_rng(int(seeds[r]))
            phys[r] = rng.uniform(-INIT_NOISE, INIT_NOISE, size=cls.phys_dim)
        return BatchState(
            phys=phys,
            queue=np.zeros((n, qw, cls.action_dim), dtype=np.float64),
            last_action=np.zeros((n, cls.action_dim), dtype=np.float64),
            step_index=np.zeros(n, dtype=np.int64),
            carried=np.ones(n, dtype=bool),
            done=np.zeros(n, dtype=bool),
        )

    @classmethod
    def batch_step(cls, state: BatchState, tasks: BatchTasks, actions: np.ndarray):
        """Advance all non-done rows one step; returns (rewards, info arrays)."""
        if not np.all(np.isfinite(actions)):
            raise EnvStepError("non-finite action")
        if actions.shape != (len(tasks), cls.action_dim):
            raise EnvStepError(f"action batch shape {actions.shape} does not match ({len(tasks)}, {cls.action_dim})")
        active = ~state.done
        clipped = np.clip(actions, -1.0, 1.0)

        # Latency: executed action was commanded latency_steps ago (zero-padded).
        qw = state.queue.shape[1]
        k = tasks.latency_steps
        cols = np.clip(qw - k, 0, qw - 1)
        delayed = state.queue[np.arange(len(tasks)), cols]  # (R, action_dim)
        executed = np.where((k == 0)[:, None], clipped, delayed)
        state.queue[active, :-1] = state.queue[active, 1:]
        state.queue[active, -1] = clipped[active]
        state.last_action[active] = clipped[active]

        new_phys, accel, fell = cls._accelerations(state.phys, tasks, executed[:, 0])

        prev_pos = state.phys[:, 0].copy()
        state.phys[active] = new_phys[active]
        displacement = state.phys[:, 0] - prev_pos

        dropped_now = tasks.carry_mode & (np.abs(accel) > CARRY_ACCEL_LIMIT)
        state.carried[active & dropped_now] = False
        reward_scale = np.where(tasks.carry_mode, state.carried.astype(np.float64), 1.0)
        rewards = np.clip(displacement / DT, -V_BAR, V_BAR) * REWARD_WEIGHT * reward_scale
        rewards[~active] = 0.0

        state.step_index[active] += 1
        newly_done = active & (fell | (state.step_index >= HORIZON))
        state.done[newly_done] = True
        info = {
            "displacement": displacement,
            "fell": fell & active,
            "dropped_object": tasks.carry_mode & ~state.carried,
        }
        return rewards, info

    # --- scalar contract API ----------------------------------------------
    @classmethod
    def reset(cls, task: TaskParams, seed: int) -> EnvState:
        task.validate()
        rng = np.random.default_rng(int(seed))
        phys = rng.uniform(-INIT_NOISE, INIT_NOISE, size=cls.phys_dim)
        k = int(task.latency_steps)
        return EnvState(
            phys=phys,
            action_queue=np.zeros((k, cls.action_dim), dtype=np.float64),
            last_action=np.zeros(cls.action_dim, dtype=np.float64),
            step_index=0,
            carried_flag=True,
            done=False,
            rng_state=rng.bit_generator.state,
        )

    @classmethod
    def observe(cls, state: EnvState, task: TaskParams) -> np.ndarray:
        bs, bt = cls._pack(state, task)
        return cls._observe_batch(bs, bt)[0]

    @classmethod
    def step(cls, state: EnvState, task: TaskParams, action) -> tuple[EnvState, StepResult]:
        """Pure transition: returns the successor state and the step result."""
        if state.done:
            raise EnvStepError("cannot step a done episode")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape[0] != cls.action_dim:
            raise EnvStepError(f"action length {action.shape[0]} != {cls.action_dim}")
        bs, bt = cls._pack(state, task)
        rewards, info = cls.batch_step(bs, bt, action[None, :])
        new_state = cls._unpack(bs, task, state.rng_state)
        obs = cls._observe_batch(bs, bt)[0]
        return new_state, StepResult(
            next_observation=obs,
            reward=float(rewards[0]),
            done=bool(new_state.done),
            info={key: (float(val[0]) if val.dtype.kind == "f" else bool(val[0])) for key, val in info.items()},
        )

    @classmethod
    def _pack(cls, state: EnvState, task: TaskParams) -> tuple[BatchState, BatchTasks]:
        k = int(task.latency_steps)
        qw = max(1, k)
        queue = np.zeros((1, qw, cls.action_dim), dtype=np.float64)
        if k > 0:
            queue[0, qw - k :] = state.action_queue
        bs = BatchState(
            phys=state.phys[None, :].copy(),
            queue=queue,
            last_action=state.last_action[None, :].copy(),
            step_index=np.array([state.step_index], dtype=np.int64),
            carried=np.array([state.carried_flag]),
            done=np.array([state.done]),
        )
        return bs, BatchTasks.from_tasks([task])

    @classmethod
    def _unpack(cls, bs: BatchState, task: TaskParams, rng_state: dict) -> EnvState:
        k = int(task.latency_steps)
        qw = bs.queue.shape[1]
        return EnvState(
            phys=bs.phys[0].copy(),
            action_queue=bs.queue[0, qw - k :].copy() if k > 0 else np.zeros((0, cls.action_dim)),
            last_action=bs.last_action[0].copy(),
            step_index=int(bs.step_index[0]),
            carried_flag=bool(bs.carried[0]),
            done=bool(bs.done[0]),
            rng_state=rng_state,
        )


class SlidingMass(EnvFamily):
    """1-D mass pushed by a first-order force actuator off a sagging supply.

    Forces on the body: the lagged actuator force, smooth Coulomb friction
    against the ground, linear drag, and the gravity component along the
    slope. The supply (battery analog) is a recovering reservoir drained in
    proportion to the squared drive command, so delivered force collapses
    under sustained full throttle: the best drive level is an interior value
    that depends on the task's supply, friction, and mass. The charge state
    is not observed (no voltage sensor). The observed pitch channel mixes
    the true slope with the body acceleration (an accelerometer-style
    estimate), plus any sensor bias.
    """

    name = "sliding_mass"
    obs_dim = 3
    action_dim = 1
    phys_dim = 4  # [position, velocity, actuator force, supply charge - 1]

    M0 = 1.0  # kg
    F_MAX = 14.0  # N at gain = supply = charge = action = 1
    MU_DRY = 0.06  # Coulomb coefficient per unit contact_friction
    C_DRAG = 1.1  # N s/m baseline linear drag
    K_JOINT = 4.0  # N s/m per unit joint_friction
    V_EPS = 0.01  # m/s smoothing of the Coulomb sign
    TAU0 = 0.08  # s actuator time constant per unit inertia_scale
    PITCH_ACCEL_GAIN = 0.3  # pitch estimate per unit (accel / g)
    CHG_RECOVER = 2.0  # 1/s supply recovery rate
    CHG_DRAIN = 8.0  # 1/s drain rate per squared command at supply_scale 1
    CHG_MIN = 0.05

    @classmethod
    def _net_accel(cls, v, tasks, force):
        m = cls.M0 * tasks.mass_scale * np.where(tasks.carry_mode, CARRY_MASS_FACTOR, 1.0)
        dry = cls.MU_DRY * tasks.contact_friction * m * GRAVITY * np.cos(tasks.slope_angle) * np.tanh(v / cls.V_EPS)
        drag = (cls.C_DRAG + cls.K_JOINT * tasks.joint_friction) * v
        return (force - dry - drag) / m - GRAVITY * np.sin(tasks.slope_angle)

    @classmethod
    def _accelerations(cls, phys, tasks, executed):
        x, v, f = phys[:, 0], phys[:, 1], phys[:, 2]
        charge = 1.0 + phys[:, 3]
        drain = (cls.CHG_DRAIN / tasks.supply_scale**2) * executed * executed
        charge_new = charge + DT * (cls.CHG_RECOVER * (1.0 - charge) - drain * charge)
        charge_new = np.clip(charge_new, cls.CHG_MIN, 1.2)
        target = tasks.actuator_gain * tasks.supply_scale * executed * charge_new * cls.F_MAX
        tau = cls.TAU0 * tasks.inertia_scale
        f_new = target + (f - target) * np.exp(-DT / tau)
        accel = cls._net_accel(v, tasks, f_new)
        new_phys = np.empty_like(phys)
        new_phys[:, 3] = charge_new - 1.0
        new_phys[:, 2] = f_new
        new_phys[:, 1] = v + DT * accel
        new_phys[:, 0] = x + DT * new_phys[:, 1]
        fell = np.zeros(len(tasks), dtype=bool)
        return new_phys, accel, fell

    @classmethod
    def _observe_batch(cls, state: BatchState, tasks: BatchTasks) -> np.ndarray:
        accel = cls._net_accel(state.phys[:, 1], tasks, state.phys[:, 2])
        pitch = tasks.slope_angle + tasks.sensor_offset + cls.PITCH_ACCEL_GAIN * accel / GRAVITY
        return np.stack([state.phys[:, 1], state.last_action[:, 0], pitch], axis=1)


class CartPole(EnvFamily):
    """Cart on a rail keeping a pole near upright while driving forward.

    The pole angle is integrated in the rail frame; the fall test and the
    observed angle use the world-vertical angle (rail angle + slope). The
    episode ends early once the pole tips past ``PHI_MAX``.
    """

    name = "cart_pole"
    obs_dim = 5
    action_dim = 1
    phys_dim = 4  # [position, velocity, pole angle (rail frame), pole rate]

    MC0 = 1.0  # kg cart
    MP0 = 0.1  # kg pole
    L0 = 0.5  # m pole half-length at inertia_scale = 1
    F_MAX = 10.0  # N
    MU_C = 0.03  # Coulomb coefficient per unit contact_friction
    C_DRAG = 0.1  # N s/m baseline drag on the cart
    PIVOT_DAMP = 0.02  # N m s/rad per unit joint_friction
    V_EPS = 0.01
    PHI_MAX = 0.65  # rad from world vertical; beyond this the pole has fallen

    @classmethod
    def _accelerations(cls, phys, tasks, executed):
        x, xd, th, thd = phys[:, 0], phys[:, 1], phys[:, 2], phys[:, 3]
        m_cart = cls.MC0 * tasks.mass_scale * np.where(tasks.carry_mode, CARRY_MASS_FACTOR, 1.0)
        m_pole = cls.MP0 * tasks.mass_scale
        length = cls.L0 * np.sqrt(tasks.inertia_scale)
        total_m = m_cart + m_pole
        pml = m_pole * length
        force = tasks.actuator_gain * tasks.supply_scale * executed * cls.F_MAX

        sin_th, cos_th = np.sin(th), np.cos(th)
        fric = (
            cls.MU_C * tasks.contact_friction * total_m * GRAVITY * np.cos(tasks.slope_angle) * np.tanh(xd / cls.V_EPS)
            + cls.C_DRAG * xd
        )
        temp = (force - fric + pml * thd * thd * sin_th) / total_m - GRAVITY * np.sin(tasks.slope_angle)
        pivot = cls.PIVOT_DAMP * tasks.joint_friction * thd / pml
        th_acc = (GRAVITY * np.sin(th + tasks.slope_angle) - cos_th * temp - pivot) / (
            length * (4.0 / 3.0 - m_pole * cos_th * cos_th / total_m)
        )
        x_acc = temp - pml * th_acc * cos_th / total_m

        new_phys = np.empty_like(phys)
        new_phys[:, 3] = thd + DT * th_acc
        new_phys[:, 1] = xd + DT * x_acc
        new_phys[:, 2] = th + DT * new_phys[:, 3]
        new_phys[:, 0] = x + DT * new_phys[:, 1]
        fell = np.abs(new_phys[:, 2] + tasks.slope_angle) > cls.PHI_MAX
        return new_phys, x_acc, fell

    @classmethod
    def _observe_batch(cls, state: BatchState, tasks: BatchTasks) -> np.ndarray:
        phi = state.phys[:, 2] + tasks.slope_angle + tasks.sensor_offset
        return np.stack(
            [state.phys[:, 0], state.phys[:, 1], np.sin(phi), np.cos(phi), state.phys[:, 3]],
            axis=1,
        )


ENV_FAMILIES: dict[str, type[EnvFamily]] = {
    SlidingMass.name: SlidingMass,
    CartPole.name: CartPole,
}


def get_env(name: str) -> type[EnvFamily]:
    try:
        return ENV_FAMILIES[name]
    except KeyError:
        raise ConfigError(f"unknown environment family {name!r}; valid: {sorted(ENV_FAMILIES)}") from None


def rollout(env: type[EnvFamily], policy_eval, task: TaskParams, seed: int, gamma: float = 1.0) -> Rollout:
    """Run one episode under ``policy_eval`` (observation -> action)."""
    state = env.reset(task, seed)
    states = [state.phys.copy()]
    actions, rewards = [], []
    obs = env.observe(state, task)
    while not state.done:
        action = policy_eval(obs)
        state, result = env.step(state, task, action)
        obs = result.next_observation
        states.append(state.phys.copy())
        actions.append(np.asarray(action, dtype=np.float64).reshape(-1))
        rewards.append(result.reward)
    rewards_arr = np.asarray(rewards, dtype=np.float64)
    # sequential accumulation, matching the batched engine bit for bit
    total, discount = 0.0, 1.0
    for r in rewards:
        total += discount * r
        discount *= gamma
    return Rollout(
        states=np.asarray(states),
        actions=np.asarray(actions),
        rewards=rewards_arr,
        early_terminated=bool(len(rewards_arr) < HORIZON),
        total_return=total,
    )
