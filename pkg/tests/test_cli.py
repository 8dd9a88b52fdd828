import pytest

from metalr.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main

from conftest import tiny_config


def write_config(path, flat):
    path.write_text("".join(f"{key} = {value}\n" for key, value in flat.items()))
    return path


@pytest.fixture
def tiny_cfg(tmp_path):
    return write_config(tmp_path / "tiny.cfg", tiny_config())


class TestCli:
    def test_run(self, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["--log-level", "WARNING", "run", str(tiny_cfg), "--seeds", "0", "--out", str(out)])
        assert code == EXIT_OK
        assert "test accuracy" in capsys.readouterr().out
        assert (out / "report.json").is_file()

    def test_no_trace_flag(self, tiny_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["--log-level", "WARNING", "run", str(tiny_cfg), "--seeds", "0", "--out", str(out),
                     "--no-trace"]) == EXIT_OK
        assert not (out / "traces").exists()

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "bad.cfg", {"train.bogus": 1})
        assert main(["run", str(cfg)]) == EXIT_CONFIG
        err = capsys.readouterr().err.strip().splitlines()
        assert err == ["error: ConfigError: train.bogus: Extra inputs are not permitted"]

    def test_missing_config_exits_2(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "absent.cfg")]) == EXIT_CONFIG
        assert capsys.readouterr().err.startswith("error: ConfigError: ")

    def test_alpha0_outside_clamp_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "bad.cfg", {"scheme.alpha0": 0.5})
        assert main(["run", str(cfg)]) == EXIT_CONFIG
        assert capsys.readouterr().err.startswith("error: ConfigError: scheme.alpha0: ")

    def test_runtime_failure_exits_1(self, tmp_path, capsys):
        assert main(["compare", str(tmp_path / "absent.json")]) == EXIT_FAILURE
        assert capsys.readouterr().err.startswith("error: ReportIOError: ")

    def test_oracle(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "oracle.cfg", {"oracle.problem": "convex", "oracle.iterations": 5,
                                                     "run.out": str(tmp_path / "oracle")})
        assert main(["--log-level", "WARNING", "oracle", str(cfg)]) == EXIT_OK
        assert "relative gap" in capsys.readouterr().out
        assert (tmp_path / "oracle" / "oracle.json").is_file()

    def test_compare(self, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "out"
        main(["--log-level", "WARNING", "run", str(tiny_cfg), "--out", str(out)])
        capsys.readouterr()
        code = main(["--log-level", "WARNING", "compare", str(out / "report.json"), "--out", str(tmp_path / "c.csv")])
        assert code == EXIT_OK
        assert "metalr[proportional,separate]" in capsys.readouterr().out
        assert (tmp_path / "c.csv").is_file()

    def test_bad_seed_list_is_usage_error(self, tiny_cfg):
        with pytest.raises(SystemExit) as excinfo:
            main(["run", str(tiny_cfg), "--seeds", "a,b"])
        assert excinfo.value.code == 2
