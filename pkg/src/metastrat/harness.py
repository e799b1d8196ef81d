"""Adaptation-task suites, batched evaluation campaigns, and CSV reports.

A suite is a deterministic list of concrete tasks. Four suites stress axes
the policy never saw during training (wider dynamics, slopes, sensor bias,
a carried payload); the fifth draws from the training range itself as the
in-distribution reference. A campaign adapts each checkpoint to each task,
records the confirmed returns, and aggregates per method.

CSV schemas (column names are versioned in the header comment line):

* records:   suite, method, policy_seed, task_seed, adapted_return,
             episodes_used, failure_flag
* histogram: method, bin_left, bin_right, count
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import RangeSpec, TaskParams, sample_task
from .errors import ConfigError, MetastratError, ValidationError
from .seeding import derive_seed, rng_from
from .trainers import Checkpoint, adapt

SUITE_TAGS = ("TRAINING_RANGE", "EXTENDED", "SLOPE", "SENSOR_OFFSET", "CARRY")

SLOPE_RANGE = (math.radians(5.0), math.radians(20.0))
OFFSET_RANGE = (-math.radians(35.0), math.radians(35.0))

RECORDS_SCHEMA = "metastrat-records v1"
HISTOGRAM_SCHEMA = "metastrat-histogram v1"
RECORD_COLUMNS = ("suite", "method", "policy_seed", "task_seed", "adapted_return", "episodes_used", "failure_flag")
HISTOGRAM_COLUMNS = ("method", "bin_left", "bin_right", "count")
HISTOGRAM_BINS = 30


@dataclass(frozen=True)
class TaskSpec:
    suite: str
    task: TaskParams
    seed: int

    def validate(self, base_range: RangeSpec) -> None:
        self.task.validate()
        if self.suite not in SUITE_TAGS:
            raise ValidationError(f"unknown suite tag {self.suite!r}")
        if self.suite == "EXTENDED" and base_range.contains(self.task):
            raise ValidationError("extended-suite task lies inside the training box")
        if self.suite == "SLOPE" and not SLOPE_RANGE[0] <= self.task.slope_angle <= SLOPE_RANGE[1]:
            raise ValidationError("slope-suite task outside the slope interval")
        if self.suite == "SENSOR_OFFSET" and not OFFSET_RANGE[0] <= self.task.sensor_offset <= OFFSET_RANGE[1]:
            raise ValidationError("offset-suite task outside the offset interval")
        if self.suite == "CARRY" and not self.task.carry_mode:
            raise ValidationError("carry-suite task must set carry_mode")


def build_suite(tag: str, n_tasks: int, base_range: RangeSpec, seed: int) -> list[TaskSpec]:
    """Deterministic task list for one suite.

    The suite-defining parameter is drawn from its own out-of-training
    interval; all other physics parameters come from the training range.
    """
    if tag not in SUITE_TAGS:
        raise ConfigError(f"unknown suite tag {tag!r}; valid: {SUITE_TAGS}")
    if n_tasks < 1:
        raise ConfigError("n_tasks must be >= 1")
    extended = base_range.extended(0.3) if tag == "EXTENDED" else None
    specs = []
    for i in range(n_tasks):
        rng = rng_from(seed, "suite", tag, i)
        if tag == "EXTENDED":
            task = sample_task(extended, rng)
        else:
            task = sample_task(base_range, rng)
            if tag == "SLOPE":
                task = TaskParams(**{**_fields(task), "slope_angle": float(rng.uniform(*SLOPE_RANGE))})
            elif tag == "SENSOR_OFFSET":
                task = TaskParams(**{**_fields(task), "sensor_offset": float(rng.uniform(*OFFSET_RANGE))})
            elif tag == "CARRY":
                task = TaskParams(**{**_fields(task), "carry_mode": True})
        spec = TaskSpec(suite=tag, task=task, seed=derive_seed(seed, "task", tag, i))
        spec.validate(base_range)
        specs.append(spec)
    return specs


def _fields(task: TaskParams) -> dict:
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


@dataclass(frozen=True)
class EvalRecord:
    suite: str
    method: str
    policy_seed: int
    task_seed: int
    adapted_return: float
    episodes_used: int
    failure_flag: int


@dataclass
class EvalReport:
    records: list[EvalRecord]
    aggregates: dict  # method -> {mean, std, count, failures}
    bin_edges: np.ndarray
    histogram: dict  # method -> list of counts per bin

    @classmethod
    def from_records(cls, records: list[EvalRecord], bins: int = HISTOGRAM_BINS, value_range=None) -> "EvalReport":
        if not records:
            raise ValidationError("report needs at least one record")
        ok = [r for r in records if not r.failure_flag]
        values = np.array([r.adapted_return for r in ok], dtype=np.float64)
        if value_range is None:
            if len(values):
                lo, hi = float(values.min()), float(values.max())
            else:
                lo, hi = 0.0, 1.0
            if lo == hi:
                lo, hi = lo - 0.5, hi + 0.5
        else:
            lo, hi = (float(v) for v in value_range)
        edges = np.linspace(lo, hi, bins + 1)
        methods = sorted({r.method for r in records})
        histogram = {}
        for method in methods:
            vals = np.array([r.adapted_return for r in ok if r.method == method])
            counts, _ = np.histogram(vals, bins=edges)
            histogram[method] = [int(c) for c in counts]
        return cls(records=list(records), aggregates=aggregate_records(records), bin_edges=edges, histogram=histogram)


def aggregate_records(records: list[EvalRecord]) -> dict:
    out = {}
    for method in sorted({r.method for r in records}):
        ok = np.array([r.adapted_return for r in records if r.method == method and not r.failure_flag])
        failures = sum(1 for r in records if r.method == method and r.failure_flag)
        out[method] = {
            "mean": float(ok.mean()) if len(ok) else math.nan,
            "std": float(ok.std()) if len(ok) else math.nan,
            "count": int(len(ok)),
            "failures": int(failures),
        }
    return out


def run_campaign(ckpts: list[Checkpoint], suite: list[TaskSpec], episodes: int = 15, seed: int = 0) -> EvalReport:
    """Adapt every checkpoint to every suite task and aggregate per method.

    Cell seeds derive from (campaign seed, method, policy seed, task index),
    so results do not depend on evaluation order. A failed cell is recorded
    with a failure marker rather than dropped.
    """
    if not ckpts or not suite:
        raise ConfigError("campaign needs at least one checkpoint and one task")
    records = []
    for ckpt in ckpts:
        policy_seed = int(ckpt.config.get("seed", -1))
        for idx, spec in enumerate(suite):
            cell_seed = derive_seed(seed, "cell", ckpt.method, policy_seed, spec.suite, idx)
            try:
                strat = adapt(ckpt, spec.task, episodes=episodes, seed=cell_seed)
                records.append(
                    EvalRecord(
                        suite=spec.suite,
                        method=ckpt.method,
                        policy_seed=policy_seed,
                        task_seed=spec.seed,
                        adapted_return=strat.confirmed_return,
                        episodes_used=strat.episodes_used,
                        failure_flag=0,
                    )
                )
            except MetastratError:
                records.append(
                    EvalRecord(
                        suite=spec.suite,
                        method=ckpt.method,
                        policy_seed=policy_seed,
                        task_seed=spec.seed,
                        adapted_return=math.nan,
                        episodes_used=0,
                        failure_flag=1,
                    )
                )
    return EvalReport.from_records(records)


# ---------------------------------------------------------------------------
# CSV emission / parsing
# ---------------------------------------------------------------------------

def emit_report(report: EvalReport, fmt: str, path: str) -> str:
    """Write the report in one of the two CSV formats; returns the path."""
    if not report.records:
        raise ValidationError("cannot emit an empty report")
    lines = []
    if fmt == "CSV":
        lines.append(f"# {RECORDS_SCHEMA}")
        lines.append(",".join(RECORD_COLUMNS))
        for r in report.records:
            lines.append(
                ",".join(
                    [
                        r.suite,
                        r.method,
                        str(r.policy_seed),
                        str(r.task_seed),
                        repr(float(r.adapted_return)),
                        str(r.episodes_used),
                        str(r.failure_flag),
                    ]
                )
            )
    elif fmt == "HISTOGRAM_CSV":
        lines.append(f"# {HISTOGRAM_SCHEMA}")
        lines.append(",".join(HISTOGRAM_COLUMNS))
        edges = report.bin_edges
        for method in sorted(report.histogram):
            for b, count in enumerate(report.histogram[method]):
                lines.append(f"{method},{edges[b]!r},{edges[b + 1]!r},{count}")
    else:
        raise ConfigError(f"unknown report format {fmt!r}; valid: CSV, HISTOGRAM_CSV")
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as err:
        raise MetastratError(f"failed to write report to {path}: {err}") from err
    return path


def load_records(path: str) -> list[EvalRecord]:
    """Parse a records CSV back into memory (round-trip exact)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith(f"# {RECORDS_SCHEMA}"):
        raise ValidationError(f"{path} is not a records CSV (expected header '# {RECORDS_SCHEMA}')")
    if lines[1] != ",".join(RECORD_COLUMNS):
        raise ValidationError(f"{path} has unexpected columns")
    records = []
    for ln in lines[2:]:
        suite, method, pseed, tseed, ret, eps, fail = ln.split(",")
        records.append(
            EvalRecord(
                suite=suite,
                method=method,
                policy_seed=int(pseed),
                task_seed=int(tseed),
                adapted_return=float(ret),
                episodes_used=int(eps),
                failure_flag=int(fail),
            )
        )
    return records


def bootstrap_mean_diff(a: np.ndarray, b: np.ndarray, n_boot: int = 2000, seed: int = 0, alpha: float = 0.05):
    """Percentile bootstrap CI for mean(a) - mean(b) over independent samples."""
    rng = rng_from(seed, "bootstrap")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diffs = np.empty(n_boot)
    for i in range(n_boot):
        diffs[i] = rng.choice(a, size=len(a)).mean() - rng.choice(b, size=len(b)).mean()
    lo, hi = np.quantile(diffs, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)
