"""
Multi-seed trend checks on the reference synthetic task. Minutes of CPU time; run with `pytest -m slow`.
"""
import numpy as np
import pytest

from metalr.services import experiment_service
from metalr.services.config_service import apply_overrides, load_config

from conftest import CONFIG_DIR

pytestmark = pytest.mark.slow

SEEDS = list(range(10))


@pytest.fixture(scope="module")
def reference_config():
    return apply_overrides(load_config(CONFIG_DIR / "reference.cfg"), seeds=SEEDS)


@pytest.fixture(scope="module")
def reference_task(reference_config):
    return experiment_service.prepare_task(reference_config)


@pytest.fixture(scope="module")
def metalr_outcome(reference_config, reference_task):
    return experiment_service.execute(reference_config, reference_task)


@pytest.fixture(scope="module")
def baseline_outcome(reference_config, reference_task):
    return experiment_service.execute(reference_config.with_scheme(kind="all_layers"), reference_task)


def test_every_logged_rate_inside_clamp(metalr_outcome):
    for trace in metalr_outcome.traces.values():
        frame = trace.to_frame()
        assert len(frame) == 2000 * 2
        assert frame["alpha"].between(1e-6, 1e-2).all()


def test_reinitialized_head_gets_larger_rate(metalr_outcome):
    wins = sum(seed.tail_alpha["fc2"] > seed.tail_alpha["fc1"] for seed in metalr_outcome.report.seeds)
    assert wins >= 8


def test_metalr_not_worse_than_all_layers(metalr_outcome, baseline_outcome):
    candidate = metalr_outcome.report.accuracies()
    reference = baseline_outcome.report.accuracies()
    assert np.mean(candidate) >= np.mean(reference)
    p_value = experiment_service.paired_test(candidate, reference)
    assert p_value is None or p_value < 0.1


def test_proportional_policy_is_more_stable(reference_config, reference_task, metalr_outcome):
    constant = experiment_service.execute(reference_config.with_scheme(policy="constant", eta=1e-3), reference_task)
    assert metalr_outcome.report.test_accuracy.std <= constant.report.test_accuracy.std


def test_wall_clock_ratio(metalr_outcome, baseline_outcome):
    ratio = metalr_outcome.report.wall_clock_s.mean / baseline_outcome.report.wall_clock_s.mean
    assert 1.5 <= ratio <= 3.0


def test_pass_counts(metalr_outcome, baseline_outcome):
    assert all(s.passes == {"forward": 4000, "backward": 4000} for s in metalr_outcome.report.seeds)
    assert all(s.passes == {"forward": 2000, "backward": 2000} for s in baseline_outcome.report.seeds)


def test_layerwise_sweep_costs_depth_runs(reference_config, reference_task, baseline_outcome):
    config = apply_overrides(reference_config.with_scheme(kind="layerwise"), seeds=[0])
    sweep = experiment_service.execute(config, reference_task).report.seeds[0].sweep
    single = baseline_outcome.report.seeds[0].wall_clock_s
    assert len(sweep.rows) == 2
    assert 1.6 <= sweep.total_wall_clock_s / single <= 2.4

