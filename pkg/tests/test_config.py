import pytest

from metalr.core.errors import ConfigError
from metalr.models.schemas import ValidationMode
from metalr.services.config_service import apply_overrides, load_config, parse_config

from conftest import CONFIG_DIR


class TestParseConfig:
    def test_values_are_decoded(self):
        config = parse_config({
            "scheme.beta": "0.2",
            "run.trace": "false",
            "run.seeds": "1,2",
            "scheme.validation": "trainset",
            "train.iterations": 10,
        })
        assert config.scheme.beta == 0.2
        assert config.run.trace is False
        assert config.run.seeds == [1, 2]
        assert config.scheme.validation == ValidationMode.HELD_OUT_TRAINING_BATCH
        assert config.train.iterations == 10

    def test_unknown_key_names_dotted_path(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config({"train.bogus": "1"})
        assert excinfo.value.key_path == "train.bogus"

    def test_bad_value_names_dotted_path(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config({"train.batch_size": "0"})
        assert excinfo.value.key_path == "train.batch_size"

    @pytest.mark.parametrize("key", ["seeds", "run.seeds.extra", ".seeds"])
    def test_key_must_be_section_dot_name(self, key):
        with pytest.raises(ConfigError):
            parse_config({key: "1"})

    def test_missing_value(self):
        with pytest.raises(ConfigError):
            parse_config({"train.iterations": None})

    def test_alpha0_outside_clamp_names_key(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config({"scheme.alpha0": "0.5"})
        assert excinfo.value.key_path == "scheme.alpha0"

    def test_baseline_alpha_outside_clamp_names_key(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config({"scheme.kind": "all_layers", "scheme.alpha0": "0.5", "scheme.hi": "1.0"})
        assert excinfo.value.key_path == "scheme.alpha0"

    @pytest.mark.parametrize("flat", [{"scheme.lo": "1e-3", "scheme.hi": "1e-4"}, {"scheme.lo": "0.5"}])
    def test_inverted_clamp_bounds_name_hi(self, flat):
        with pytest.raises(ConfigError) as excinfo:
            parse_config(flat)
        assert excinfo.value.key_path == "scheme.hi"


class TestLoadConfig:
    @pytest.mark.parametrize("name", ["reference.cfg", "baseline.cfg", "cnn.cfg", "oracle.cfg",
                                      "segmentation_defaults.cfg"])
    def test_shipped_configs_load(self, name):
        load_config(CONFIG_DIR / name)

    def test_reference_config(self):
        config = load_config(CONFIG_DIR / "reference.cfg")
        assert config.scheme.kind == "metalr"
        assert config.scheme.validation == ValidationMode.HELD_OUT_TRAINING_BATCH
        assert config.run.seeds == [0, 1, 2, 3, 4]
        assert config.model.hidden == [32]

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("# header\n\nscheme.kind = all_layers\nscheme.alpha0 = 2e-3\n")
        config = load_config(path)
        assert config.scheme.build().alpha == 2e-3

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.cfg")


class TestOverrides:
    def test_overrides_replace_run_fields(self):
        config = apply_overrides(parse_config({}), seeds=[7], out="somewhere", trace=False, workers=3)
        assert config.run.seeds == [7]
        assert config.run.out == "somewhere"
        assert config.run.trace is False
        assert config.run.workers == 3

    def test_no_overrides_returns_same_config(self):
        config = parse_config({})
        assert apply_overrides(config) is config

    def test_invalid_override(self):
        with pytest.raises(ConfigError) as excinfo:
            apply_overrides(parse_config({}), workers=0)
        assert excinfo.value.key_path == "run.workers"
