import pytest
from pydantic import ValidationError

from metalr.models.schemas import (
    Aggregate,
    ConstantHyperLR,
    ExperimentConfig,
    LearningRates,
    LRTrace,
    MetaLRScheme,
    MetaStepReport,
    OracleResult,
    ProportionalHyperLR,
    SchemeSection,
    ValidationMode,
    scheme_label,
)


def report(iteration, alpha):
    names = list(alpha)
    return MetaStepReport(
        iteration=iteration,
        hypergradient={name: 0.0 for name in names},
        alpha_before=dict(alpha),
        alpha_after=dict(alpha),
        train_loss=1.0,
        val_loss=1.0,
    )


class TestLearningRates:
    def test_uniform(self):
        lrs = LearningRates.uniform(["fc1", "fc2"], 1e-3)
        assert lrs.alpha == {"fc1": 1e-3, "fc2": 1e-3}
        assert lrs.layer_names() == ["fc1", "fc2"]
        assert lrs.within_bounds()

    def test_bounds_must_be_ordered_and_positive(self):
        with pytest.raises(ValidationError):
            LearningRates(alpha={"fc1": 1e-3}, lo=1e-2, hi=1e-3)
        with pytest.raises(ValidationError):
            LearningRates(alpha={"fc1": 1e-3}, lo=0.0)

    def test_frozen(self):
        lrs = LearningRates.uniform(["fc1"], 1e-3)
        with pytest.raises(ValidationError):
            lrs.iteration = 3


class TestPolicies:
    def test_negative_coefficients_rejected(self):
        with pytest.raises(ValidationError):
            ConstantHyperLR(eta=-1.0)
        with pytest.raises(ValidationError):
            ProportionalHyperLR(beta=-0.1)

    def test_zero_coefficient_allowed(self):
        assert ProportionalHyperLR(beta=0.0).beta == 0.0

    def test_scheme_alpha0_inside_clamp(self):
        with pytest.raises(ValidationError):
            MetaLRScheme(alpha0=0.5)

    def test_policy_discriminator(self):
        scheme = MetaLRScheme.model_validate({"policy": {"kind": "constant", "eta": 2e-3}})
        assert isinstance(scheme.policy, ConstantHyperLR)
        assert scheme_label(scheme) == "metalr[constant,separate]"


class TestStepReports:
    def test_layer_keys_must_agree(self):
        with pytest.raises(ValidationError):
            MetaStepReport(
                iteration=0,
                hypergradient={"fc1": 0.1},
                alpha_before={"fc1": 1e-3},
                alpha_after={"fc2": 1e-3},
                train_loss=1.0,
                val_loss=1.0,
            )

    def test_trace_frame_has_one_row_per_layer(self):
        trace = LRTrace()
        for t in range(3):
            trace.append(report(t, {"fc1": 1e-3, "fc2": 2e-3}))
        frame = trace.to_frame()
        assert list(frame.columns) == ["iteration", "layer", "alpha", "hypergradient", "train_loss", "val_loss"]
        assert len(frame) == 6

    def test_tail_alpha_averages_last_tenth(self):
        trace = LRTrace()
        for t in range(20):
            trace.append(report(t, {"fc1": float(t)}))
        assert trace.tail_alpha() == {"fc1": pytest.approx(18.5)}
        assert trace.final_alpha() == {"fc1": 19.0}

    def test_empty_trace(self):
        assert LRTrace().tail_alpha() == {}
        assert LRTrace().final_alpha() == {}


class TestExperimentConfig:
    def test_scheme_section_builds_metalr(self):
        scheme = SchemeSection(policy="constant", eta=5e-4, validation="trainset").build()
        assert isinstance(scheme, MetaLRScheme)
        assert scheme.policy == ConstantHyperLR(eta=5e-4)
        assert scheme.validation == ValidationMode.HELD_OUT_TRAINING_BATCH

    def test_scheme_section_builds_baselines(self):
        assert scheme_label(SchemeSection(kind="layerwise", alpha0=2e-3).build()) == "layerwise"
        assert SchemeSection(kind="all_layers", alpha0=2e-3).build().alpha == 2e-3

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError):
            ExperimentConfig.model_validate({"train": {"bogus": 1}})

    def test_fingerprint_ignores_output_fields(self):
        base = ExperimentConfig()
        moved = ExperimentConfig.model_validate({"run": {"out": "elsewhere", "workers": 4, "trace": False}})
        assert base.fingerprint() == moved.fingerprint()

    def test_fingerprint_tracks_scheme(self):
        base = ExperimentConfig()
        assert base.with_scheme(beta=0.2).fingerprint() != base.fingerprint()
        assert base.with_scheme(beta=0.2).scheme.beta == 0.2

    def test_comma_lists(self):
        config = ExperimentConfig.model_validate({"run": {"seeds": "3, 4,5"}, "model": {"hidden": "16,8"}})
        assert config.run.seeds == [3, 4, 5]
        assert config.model.hidden == [16, 8]


class TestResults:
    def test_aggregate_uses_sample_std(self):
        agg = Aggregate.of([1.0, 2.0, 3.0])
        assert agg.mean == pytest.approx(2.0)
        assert agg.std == pytest.approx(1.0)
        assert str(agg) == "2.0000 ± 1.0000"

    def test_aggregate_single_value(self):
        assert Aggregate.of([0.5]).std == 0.0

    def test_oracle_relative_gap(self):
        result = OracleResult(
            problem="p", layers=["fc1"], grid=[1e-3], points=[[1e-3]], losses=[2.0],
            best_alpha={"fc1": 1e-3}, best_val_loss=2.0, initial_val_loss=3.0,
            metalr_alpha={"fc1": 1e-3}, metalr_val_loss=2.1,
        )
        assert result.relative_gap == pytest.approx(0.05)
