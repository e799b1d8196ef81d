import math

import numpy as np
import pytest

from metastrat.ars import ArsConfig
from metastrat.envs import RangeSpec
from metastrat.errors import ConfigError, ValidationError
from metastrat.harness import (
    SLOPE_RANGE,
    EvalRecord,
    EvalReport,
    aggregate_records,
    bootstrap_mean_diff,
    build_suite,
    emit_report,
    load_records,
    run_campaign,
)
from metastrat.trainers import MsoConfig, train_dr, train_mso

BASE = RangeSpec.training()


@pytest.fixture(scope="module")
def tiny_ckpts():
    ars = ArsConfig(num_perturbations=2, top_b=1, step_size=0.05, noise_std=0.05)
    shared = dict(n_tasks=1, inner_updates=1, outer_iterations=1, so_budget_train=2, so_init_samples=1, ars=ars)
    mso = train_mso(MsoConfig(method="mso", seed=0, **shared))
    dr = train_dr(MsoConfig(method="dr", seed=1, **shared))
    return mso, dr


def test_slope_suite_bounds_and_background():
    specs = build_suite("SLOPE", 100, BASE, seed=0)
    for spec in specs:
        assert SLOPE_RANGE[0] <= spec.task.slope_angle <= SLOPE_RANGE[1]
        flat = {**spec.task.__dict__, "slope_angle": 0.0}
        from metastrat.envs import TaskParams

        assert BASE.contains(TaskParams(**flat))


def test_extended_suite_escapes_training_box():
    specs = build_suite("EXTENDED", 200, BASE, seed=1)
    assert all(not BASE.contains(spec.task) for spec in specs)


def test_sensor_offset_suite_interval():
    specs = build_suite("SENSOR_OFFSET", 50, BASE, seed=2)
    assert all(abs(spec.task.sensor_offset) <= math.radians(35.0) + 1e-12 for spec in specs)


def test_carry_suite_sets_flag():
    specs = build_suite("CARRY", 20, BASE, seed=3)
    assert all(spec.task.carry_mode for spec in specs)


def test_suites_are_deterministic():
    a = build_suite("EXTENDED", 30, BASE, seed=9)
    b = build_suite("EXTENDED", 30, BASE, seed=9)
    assert a == b
    c = build_suite("EXTENDED", 30, BASE, seed=10)
    assert a != c


def test_unknown_suite_tag_rejected():
    with pytest.raises(ConfigError, match="TRAINING_RANGE"):
        build_suite("WATER", 5, BASE, seed=0)


def test_campaign_single_cell(tiny_ckpts):
    mso, _ = tiny_ckpts
    suite = build_suite("TRAINING_RANGE", 1, BASE, seed=4)
    report = run_campaign([mso], suite, episodes=3, seed=0)
    assert len(report.records) == 1
    rec = report.records[0]
    assert report.aggregates["MSO"]["mean"] == rec.adapted_return
    assert report.aggregates["MSO"]["count"] == 1


def test_campaign_aggregates_match_records(tiny_ckpts):
    mso, dr = tiny_ckpts
    suite = build_suite("TRAINING_RANGE", 4, BASE, seed=5)
    report = run_campaign([mso, dr], suite, episodes=3, seed=1)
    assert len(report.records) == 8
    recomputed = aggregate_records(report.records)
    assert recomputed == report.aggregates
    for method, counts in report.histogram.items():
        assert sum(counts) == report.aggregates[method]["count"]


def test_campaign_is_deterministic(tiny_ckpts):
    mso, _ = tiny_ckpts
    suite = build_suite("EXTENDED", 3, BASE, seed=6)
    a = run_campaign([mso], suite, episodes=3, seed=2)
    b = run_campaign([mso], suite, episodes=3, seed=2)
    assert a.records == b.records


def test_report_csv_round_trip(tmp_path, tiny_ckpts):
    mso, dr = tiny_ckpts
    suite = build_suite("TRAINING_RANGE", 3, BASE, seed=7)
    report = run_campaign([mso, dr], suite, episodes=2, seed=3)
    path = emit_report(report, "CSV", str(tmp_path / "records.csv"))
    with open(path) as fh:
        lines = fh.read().strip().split("\n")
    assert len(lines) == 2 + len(report.records)  # schema comment + header + rows
    back = load_records(path)
    assert back == report.records
    re_agg = aggregate_records(back)
    for method in report.aggregates:
        assert re_agg[method]["mean"] == pytest.approx(report.aggregates[method]["mean"], abs=1e-9)


def test_histogram_csv_partition(tmp_path):
    rng = np.random.default_rng(0)
    records = [
        EvalRecord("EXTENDED", "MSO", 0, i, float(rng.uniform(-250, 250)), 15, 0) for i in range(100)
    ]
    report = EvalReport.from_records(records, bins=30, value_range=(-250.0, 250.0))
    assert report.bin_edges[0] == -250.0 and report.bin_edges[-1] == 250.0
    assert len(report.bin_edges) == 31
    assert sum(report.histogram["MSO"]) == 100
    path = emit_report(report, "HISTOGRAM_CSV", str(tmp_path / "hist.csv"))
    with open(path) as fh:
        lines = fh.read().strip().split("\n")
    assert lines[1] == "method,bin_left,bin_right,count"
    assert len(lines) == 2 + 30


def test_failure_records_are_kept():
    records = [
        EvalRecord("SLOPE", "MSO", 0, 1, 10.0, 15, 0),
        EvalRecord("SLOPE", "MSO", 0, 2, math.nan, 0, 1),
    ]
    agg = aggregate_records(records)
    assert agg["MSO"]["count"] == 1
    assert agg["MSO"]["failures"] == 1
    assert agg["MSO"]["mean"] == 10.0


def test_empty_report_rejected():
    with pytest.raises(ValidationError):
        EvalReport.from_records([])


def test_bootstrap_interval_detects_clear_gap():
    rng = np.random.default_rng(1)
    a = 5.0 + rng.standard_normal(200)
    b = rng.standard_normal(200)
    lo, hi = bootstrap_mean_diff(a, b, seed=0)
    assert lo > 0
    lo2, hi2 = bootstrap_mean_diff(b, a, seed=0)
    assert hi2 < 0
