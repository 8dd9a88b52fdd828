import json

import numpy as np
import pytest

from metalr.core.errors import ConfigError, ReportIOError
from metalr.db import report_store
from metalr.services import experiment_service
from metalr.services.config_service import parse_config
from metalr.services.training_service import evaluate

from conftest import tiny_config


def tiny(tmp_path=None, **overrides):
    if tmp_path is not None:
        overrides.setdefault("run.out", str(tmp_path))
    return parse_config(tiny_config(**overrides))


class TestPipeline:
    def test_cnn_needs_square_input(self):
        with pytest.raises(ConfigError) as excinfo:
            experiment_service.prepare_task(tiny(**{"model.architecture": "cnn", "task.input_dim": 10}))
        assert excinfo.value.key_path == "task.input_dim"

    def test_cnn_task_is_image_shaped(self):
        config = tiny(**{"model.architecture": "cnn", "task.input_dim": 16, "model.padding": "same"})
        task = experiment_service.prepare_task(config)
        model = experiment_service.build_model(config, task, seed=0)
        assert task.input_shape == (1, 4, 4)
        assert model.group_names() == ["conv1", "fc1", "fc2"]

    def test_reinit_head_must_leave_transferred_layer(self):
        config = tiny(**{"transfer.reinit_head": 2})
        task = experiment_service.prepare_task(config)
        with pytest.raises(ConfigError) as excinfo:
            experiment_service.transfer_model(config, task, seed=0)
        assert excinfo.value.key_path == "transfer.reinit_head"

    @pytest.mark.parametrize("seed", [0, 1])
    def test_reinitialized_head_raises_initial_target_loss(self, seed):
        overrides = {"task.head_overlap": "0.98", "task.label_noise": "0.0", "pretrain.iterations": "400"}
        kept = tiny(**overrides, **{"transfer.reinit_head": "0"})
        reset = tiny(**overrides, **{"transfer.reinit_head": "1"})
        task = experiment_service.prepare_task(kept)
        before = evaluate(experiment_service.transfer_model(kept, task, seed), task.target_pool).loss
        after = evaluate(experiment_service.transfer_model(reset, task, seed), task.target_pool).loss
        assert after > before

    def test_pretraining_changes_parameters(self):
        config = tiny()
        task = experiment_service.prepare_task(config)
        fresh = experiment_service.build_model(config, task, seed=0)
        trained = experiment_service.pretrain(fresh, task, config, seed=0)
        assert not np.array_equal(fresh.params_for("fc1")["weight"], trained.params_for("fc1")["weight"])

    def test_no_pretraining(self):
        config = tiny(**{"pretrain.iterations": 0})
        task = experiment_service.prepare_task(config)
        model = experiment_service.build_model(config, task, seed=0)
        assert experiment_service.pretrain(model, task, config, seed=0) is model


class TestRun:
    def test_metalr_run_writes_reports(self, tmp_path):
        report = experiment_service.run(tiny(tmp_path))
        assert report.scheme == "metalr[proportional,separate]"
        assert [s.seed for s in report.seeds] == [0, 1]
        assert report.test_accuracy.n == 2
        assert report.output_dir == str(tmp_path)
        for name in ("metrics.csv", "summary.txt", "report.json", "traces/seed_0.csv", "traces/seed_1.csv"):
            assert (tmp_path / name).is_file()
        seed = report.seeds[0]
        assert seed.passes == {"forward": 40, "backward": 40}
        assert set(seed.tail_alpha) == {"fc1", "fc2"}
        assert seed.trace_path.endswith("seed_0.csv")

    def test_zero_beta_trainset_matches_all_layers_baseline(self):
        shared = {"run.seeds": "0", "scheme.alpha0": "2e-3"}
        metalr = experiment_service.execute(tiny(**shared, **{"scheme.beta": "0", "scheme.validation": "trainset"}))
        baseline = experiment_service.execute(tiny(**shared, **{"scheme.kind": "all_layers"}))
        assert metalr.report.scheme == "metalr[proportional,trainset]"
        assert metalr.report.seeds[0].metrics.test == baseline.report.seeds[0].metrics.test
        assert metalr.report.accuracies() == baseline.report.accuracies()

    def test_trace_can_be_disabled(self, tmp_path):
        experiment_service.run(tiny(tmp_path, **{"run.trace": "false"}))
        assert not (tmp_path / "traces").exists()

    def test_baseline_run_has_no_trace(self, tmp_path):
        report = experiment_service.run(tiny(tmp_path, **{"scheme.kind": "all_layers"}))
        assert report.scheme == "all_layers"
        assert report.seeds[0].tail_alpha == {}
        assert report.seeds[0].passes == {"forward": 20, "backward": 20}

    def test_layerwise_run_writes_sweeps(self, tmp_path):
        report = experiment_service.run(tiny(tmp_path, **{"scheme.kind": "layerwise", "run.seeds": "0"}))
        sweep = report.seeds[0].sweep
        assert [row.k for row in sweep.rows] == [0, 1]
        assert (tmp_path / "sweeps" / "seed_0.csv").is_file()

    def test_parallel_seeds_match_serial(self):
        serial = experiment_service.execute(tiny())
        parallel = experiment_service.execute(tiny(**{"run.workers": 2}))
        assert serial.report.accuracies() == parallel.report.accuracies()
        assert serial.report.fingerprint == parallel.report.fingerprint

    def test_emit_false_writes_nothing(self, tmp_path):
        report = experiment_service.run(tiny(tmp_path), emit=False)
        assert report.output_dir is None
        assert list(tmp_path.iterdir()) == []

    def test_default_output_dir_uses_fingerprint(self):
        config = tiny()
        path = experiment_service.default_output_dir(config, "metalr[proportional,separate]")
        assert path.name == f"metalr-proportional-separate-{config.fingerprint()[:12]}"


class TestAblation:
    def test_rows(self, tmp_path):
        table = experiment_service.ablation_grid(tiny(tmp_path, **{"run.seeds": "0"}))
        assert [row.name for row in table.rows] == [
            "all_layers", "metalr_basic", "metalr_proportional", "metalr_trainset", "metalr_proportional_trainset",
        ]
        assert table.rows[1].scheme == "metalr[constant,separate]"
        assert table.rows[4].scheme == "metalr[proportional,trainset]"
        assert (tmp_path / "ablation.csv").is_file()
        assert (tmp_path / "metalr_trainset" / "report.json").is_file()

    def test_needs_metalr_base(self):
        with pytest.raises(ConfigError):
            experiment_service.ablation_grid(tiny(**{"scheme.kind": "all_layers"}), emit=False)


class TestCompare:
    def test_paired_test(self):
        assert experiment_service.paired_test([0.9, 0.8, 0.85, 0.95], [0.5, 0.45, 0.55, 0.52]) < 0.01
        assert experiment_service.paired_test([0.5], [0.4]) is None
        assert experiment_service.paired_test([0.5, 0.6], [0.5, 0.6]) is None

    def test_compare_reports(self, tmp_path):
        baseline = experiment_service.run(tiny(tmp_path / "base", **{"scheme.kind": "all_layers"}))
        metalr = experiment_service.run(tiny(tmp_path / "meta"))
        rows = experiment_service.compare([tmp_path / "base" / "report.json", tmp_path / "meta" / "report.json"])
        assert [row.scheme for row in rows] == [baseline.scheme, metalr.scheme]
        assert rows[0].time_ratio == pytest.approx(1.0)
        assert rows[0].p_value is None
        text = experiment_service.render_comparison(rows)
        assert "all_layers" in text and "metalr[proportional,separate]" in text
        report_store.write_comparison(rows, tmp_path / "compare.csv")
        assert (tmp_path / "compare.csv").is_file()

    def test_missing_report(self, tmp_path):
        with pytest.raises(ReportIOError):
            experiment_service.compare([tmp_path / "absent.json"])

    def test_report_json_is_valid(self, tmp_path):
        experiment_service.run(tiny(tmp_path))
        payload = json.loads((tmp_path / "report.json").read_text())
        assert payload["fingerprint"] == tiny().fingerprint()
