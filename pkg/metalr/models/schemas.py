import hashlib
import json
from enum import Enum
from typing import Annotated, Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

LR_FLOOR = 1e-6
LR_CEILING = 1e-2


# Loss and optimizer models
class LossKind(str, Enum):
    CROSS_ENTROPY = "cross_entropy"
    MSE = "mse"


class ValidationMode(str, Enum):
    SEPARATE_SET = "separate"
    HELD_OUT_TRAINING_BATCH = "trainset"


class ConstantHyperLR(BaseModel):
    """alpha' = alpha - eta * h"""
    kind: Literal["constant"] = "constant"
    eta: float = Field(default=1e-3, ge=0)


class ProportionalHyperLR(BaseModel):
    """alpha' = alpha * (1 - beta * h)"""
    kind: Literal["proportional"] = "proportional"
    beta: float = Field(default=0.1, ge=0)


HyperLRPolicy = Annotated[Union[ConstantHyperLR, ProportionalHyperLR], Field(discriminator="kind")]


class LearningRates(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: Dict[str, float]
    lo: float = LR_FLOOR
    hi: float = LR_CEILING
    iteration: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_bounds(self):
        if not 0 < self.lo <= self.hi:
            raise ValueError(f"clamp bounds must satisfy 0 < lo <= hi, got lo={self.lo}, hi={self.hi}")
        return self

    @classmethod
    def uniform(cls, names: Sequence[str], alpha: float, lo: float = LR_FLOOR, hi: float = LR_CEILING) -> "LearningRates":
        return cls(alpha={name: float(alpha) for name in names}, lo=lo, hi=hi)

    def layer_names(self) -> List[str]:
        return list(self.alpha)

    def within_bounds(self) -> bool:
        return all(self.lo <= value <= self.hi for value in self.alpha.values())


class MetaStepReport(BaseModel):
    iteration: int
    hypergradient: Dict[str, float]
    alpha_before: Dict[str, float]
    alpha_after: Dict[str, float]
    train_loss: float
    val_loss: float

    @model_validator(mode="after")
    def check_layer_keys(self):
        keys = set(self.hypergradient)
        if set(self.alpha_before) != keys or set(self.alpha_after) != keys:
            raise ValueError(
                f"layer keys differ: hypergradient={sorted(keys)}, "
                f"alpha_before={sorted(self.alpha_before)}, alpha_after={sorted(self.alpha_after)}"
            )
        return self


TRACE_COLUMNS = ["iteration", "layer", "alpha", "hypergradient", "train_loss", "val_loss"]


class LRTrace(BaseModel):
    """Per-iteration MetaStepReports of one run; one frame row per (iteration, layer)."""
    reports: List[MetaStepReport] = Field(default_factory=list)

    def append(self, report: MetaStepReport) -> None:
        self.reports.append(report)

    def __len__(self) -> int:
        return len(self.reports)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (r.iteration, layer, r.alpha_after[layer], r.hypergradient[layer], r.train_loss, r.val_loss)
            for r in self.reports
            for layer in r.alpha_after
        ]
        return pd.DataFrame(rows, columns=TRACE_COLUMNS)

    def final_alpha(self) -> Dict[str, float]:
        return dict(self.reports[-1].alpha_after) if self.reports else {}

    def tail_alpha(self, fraction: float = 0.1) -> Dict[str, float]:
        """Mean alpha per layer over the last `fraction` of iterations (at least one)."""
        if not self.reports:
            return {}
        count = max(1, int(np.ceil(fraction * len(self.reports))))
        tail = self.reports[-count:]
        return {layer: float(np.mean([r.alpha_after[layer] for r in tail])) for layer in tail[0].alpha_after}


# Metrics models
class SplitMetrics(BaseModel):
    loss: float
    accuracy: Optional[float] = None


class RunMetrics(BaseModel):
    train: SplitMetrics
    val: Optional[SplitMetrics] = None
    test: SplitMetrics


# Scheme models
def _alpha_field(default: float = 1e-3):
    return Field(default=default, ge=LR_FLOOR, le=LR_CEILING)


class AllLayersScheme(BaseModel):
    kind: Literal["all_layers"] = "all_layers"
    alpha: float = _alpha_field()


class LastLayerScheme(BaseModel):
    kind: Literal["last_layer"] = "last_layer"
    alpha: float = _alpha_field()


class LayerwiseSweepScheme(BaseModel):
    kind: Literal["layerwise"] = "layerwise"
    alpha: float = _alpha_field()
    cut_points: Optional[List[int]] = None  # None means k = 0..d-1


BaselineScheme = Annotated[
    Union[AllLayersScheme, LastLayerScheme, LayerwiseSweepScheme], Field(discriminator="kind")
]


class MetaLRScheme(BaseModel):
    kind: Literal["metalr"] = "metalr"
    alpha0: float = 1e-3
    policy: HyperLRPolicy = Field(default_factory=ProportionalHyperLR)
    validation: ValidationMode = ValidationMode.SEPARATE_SET
    lo: float = LR_FLOOR
    hi: float = LR_CEILING

    @model_validator(mode="after")
    def check_alpha0(self):
        if not 0 < self.lo <= self.alpha0 <= self.hi:
            raise ValueError(f"alpha0={self.alpha0} must lie in [lo={self.lo}, hi={self.hi}] with lo > 0")
        return self


Scheme = Annotated[
    Union[MetaLRScheme, AllLayersScheme, LastLayerScheme, LayerwiseSweepScheme], Field(discriminator="kind")
]


def scheme_label(scheme: Any) -> str:
    if isinstance(scheme, MetaLRScheme):
        return f"metalr[{scheme.policy.kind},{scheme.validation.value}]"
    return scheme.kind


class TrainConfig(BaseModel):
    batch_size: int = Field(default=32, ge=1)
    iterations: int = Field(default=2000, ge=0)
    seed: int = 0
    log_every: int = Field(default=100, ge=1)
    loss: LossKind = LossKind.CROSS_ENTROPY


# Experiment config sections
def _comma_list(value: Any) -> Any:
    if isinstance(value, str):
        return [int(part) for part in value.replace(" ", "").split(",") if part]
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [int(value)]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TaskSection(_Section):
    seed: int = 0
    input_dim: int = Field(default=16, ge=2)
    latent_dim: int = Field(default=3, ge=1)
    num_classes: int = Field(default=4, ge=2)
    n_source: int = Field(default=4000, ge=1)
    n_target: int = Field(default=400, ge=2)
    n_test: int = Field(default=1000, ge=1)
    label_noise: float = Field(default=0.05, ge=0.0, le=1.0)
    head_overlap: float = Field(default=0.0, ge=0.0, le=1.0)
    validation_fraction: float = Field(default=0.25, gt=0.0, lt=1.0)


class ModelSection(_Section):
    architecture: Literal["mlp", "cnn"] = "mlp"
    hidden: List[int] = Field(default_factory=lambda: [32])
    conv_channels: int = Field(default=4, ge=1)
    kernel: int = Field(default=3, ge=1)
    padding: Literal["valid", "same"] = "same"
    pool: int = Field(default=2, ge=1)

    @field_validator("hidden", mode="before")
    @classmethod
    def split_hidden(cls, value: Any) -> Any:
        return _comma_list(value)


class PretrainSection(_Section):
    iterations: int = Field(default=1500, ge=0)
    lr: float = Field(default=0.05, gt=0)
    batch_size: int = Field(default=32, ge=1)


class TransferSection(_Section):
    reinit_head: int = Field(default=1, ge=0)


class SchemeSection(_Section):
    model_config = ConfigDict(extra="forbid", validate_default=True)

    kind: Literal["metalr", "all_layers", "last_layer", "layerwise"] = "metalr"
    lo: float = Field(default=LR_FLOOR, gt=0)
    hi: float = Field(default=LR_CEILING, gt=0)
    alpha0: float = Field(default=1e-3, gt=0)
    policy: Literal["proportional", "constant"] = "proportional"
    beta: float = Field(default=0.1, ge=0)
    eta: float = Field(default=1e-3, ge=0)
    validation: ValidationMode = ValidationMode.SEPARATE_SET

    # Fields validate in declaration order, so lo and hi are already in info.data.
    @field_validator("hi")
    @classmethod
    def check_hi(cls, value: float, info: ValidationInfo) -> float:
        lo = info.data.get("lo")
        if lo is not None and value < lo:
            raise ValueError(f"must be >= lo ({lo})")
        return value

    @field_validator("alpha0")
    @classmethod
    def check_alpha0(cls, value: float, info: ValidationInfo) -> float:
        lo, hi = info.data.get("lo"), info.data.get("hi")
        if lo is not None and hi is not None and not lo <= value <= hi:
            raise ValueError(f"must lie in [lo, hi] = [{lo}, {hi}]")
        if info.data.get("kind", "metalr") != "metalr" and not LR_FLOOR <= value <= LR_CEILING:
            raise ValueError(f"must lie in [{LR_FLOOR}, {LR_CEILING}] for baseline schemes")
        return value

    def build(self) -> Scheme:
        if self.kind == "metalr":
            policy = (ProportionalHyperLR(beta=self.beta) if self.policy == "proportional"
                      else ConstantHyperLR(eta=self.eta))
            return MetaLRScheme(alpha0=self.alpha0, policy=policy, validation=self.validation,
                                lo=self.lo, hi=self.hi)
        if self.kind == "all_layers":
            return AllLayersScheme(alpha=self.alpha0)
        if self.kind == "last_layer":
            return LastLayerScheme(alpha=self.alpha0)
        return LayerwiseSweepScheme(alpha=self.alpha0)


class TrainSection(_Section):
    batch_size: int = Field(default=32, ge=1)
    iterations: int = Field(default=2000, ge=0)
    log_every: int = Field(default=100, ge=1)


class RunSection(_Section):
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    out: Optional[str] = None
    trace: bool = True
    workers: int = Field(default=1, ge=1)

    @field_validator("seeds", mode="before")
    @classmethod
    def split_seeds(cls, value: Any) -> Any:
        return _comma_list(value)


class OracleSection(_Section):
    problem: Literal["reference", "symmetric", "convex"] = "reference"
    grid_low: float = Field(default=1e-4, gt=0)
    grid_high: float = Field(default=1e-2, gt=0)
    grid_points: int = Field(default=21, ge=2)
    iterations: int = Field(default=50, ge=1)
    seed: int = 0
    alpha0: float = Field(default=1e-3, gt=0)
    beta: float = Field(default=1e-3, ge=0)


class ExperimentConfig(_Section):
    task: TaskSection = Field(default_factory=TaskSection)
    model: ModelSection = Field(default_factory=ModelSection)
    pretrain: PretrainSection = Field(default_factory=PretrainSection)
    transfer: TransferSection = Field(default_factory=TransferSection)
    scheme: SchemeSection = Field(default_factory=SchemeSection)
    train: TrainSection = Field(default_factory=TrainSection)
    run: RunSection = Field(default_factory=RunSection)
    oracle: OracleSection = Field(default_factory=OracleSection)

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON config, ignoring output-only run fields."""
        payload = self.model_dump(mode="json", exclude={"run": {"out", "trace", "workers"}})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_scheme(self, **updates: Any) -> "ExperimentConfig":
        scheme = SchemeSection.model_validate({**self.scheme.model_dump(), **updates})
        return self.model_copy(update={"scheme": scheme})

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(batch_size=self.train.batch_size, iterations=self.train.iterations,
                           seed=seed, log_every=self.train.log_every)


# Result models
class Aggregate(BaseModel):
    mean: float
    std: float
    n: int

    @classmethod
    def of(cls, values: Sequence[float]) -> "Aggregate":
        data = np.asarray(values, dtype=np.float64)
        std = float(data.std(ddof=1)) if data.size > 1 else 0.0
        return cls(mean=float(data.mean()), std=std, n=int(data.size))

    def __str__(self) -> str:
        return f"{self.mean:.4f} ± {self.std:.4f}"


class SweepRow(BaseModel):
    k: int
    frozen: List[str]
    metrics: RunMetrics
    wall_clock_s: float


class SweepResult(BaseModel):
    rows: List[SweepRow]
    best_k: int
    total_wall_clock_s: float


class SeedResult(BaseModel):
    seed: int
    metrics: RunMetrics
    wall_clock_s: float
    passes: Dict[str, int] = Field(default_factory=dict)
    final_alpha: Dict[str, float] = Field(default_factory=dict)
    tail_alpha: Dict[str, float] = Field(default_factory=dict)
    trace_path: Optional[str] = None
    sweep: Optional[SweepResult] = None


class RunReport(BaseModel):
    fingerprint: str
    scheme: str
    seeds: List[SeedResult]
    test_accuracy: Aggregate
    test_loss: Aggregate
    wall_clock_s: Aggregate
    config: Dict[str, Any] = Field(default_factory=dict)
    output_dir: Optional[str] = None

    def accuracies(self) -> List[float]:
        return [s.metrics.test.accuracy for s in self.seeds]


class AblationRow(BaseModel):
    name: str
    scheme: str
    test_accuracy: Aggregate
    wall_clock_s: Aggregate
    accuracies: List[float]


class AblationTable(BaseModel):
    fingerprint: str
    rows: List[AblationRow]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {
                "name": row.name,
                "scheme": row.scheme,
                "test_accuracy_mean": row.test_accuracy.mean,
                "test_accuracy_std": row.test_accuracy.std,
                "wall_clock_mean": row.wall_clock_s.mean,
            }
            for row in self.rows
        ])


class OracleResult(BaseModel):
    problem: str
    layers: List[str]
    grid: List[float]
    points: List[List[float]]
    losses: List[Optional[float]]  # None where inner training diverged
    best_alpha: Dict[str, float]
    best_val_loss: float
    initial_val_loss: float
    metalr_alpha: Dict[str, float]
    metalr_val_loss: float

    @property
    def relative_gap(self) -> float:
        return (self.metalr_val_loss - self.best_val_loss) / max(abs(self.best_val_loss), 1e-12)


class CompareRow(BaseModel):
    path: str
    scheme: str
    test_accuracy: Aggregate
    wall_clock_mean: float
    time_ratio: float
    p_value: Optional[float] = None  # paired, one-sided, against the first report


# API request models
class ExperimentRequest(BaseModel):
    config: Dict[str, Any] = Field(default_factory=dict, description="Flat 'section.key' -> value mapping")
    emit: bool = False


class CompareRequest(BaseModel):
    reports: List[str] = Field(min_length=1)
