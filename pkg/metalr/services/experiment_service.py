import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from metalr.core.errors import ConfigError, MetaLRError
from metalr.core.settings import get_settings
from metalr.db import report_store
from metalr.db.tasks import TransferTask, synth_shared_features_task
from metalr.models.networks import ModelSpec, Network, build_cnn, build_mlp, reinit_head
from metalr.models.schemas import (
    AblationRow,
    AblationTable,
    Aggregate,
    AllLayersScheme,
    CompareRow,
    ExperimentConfig,
    LastLayerScheme,
    LRTrace,
    MetaLRScheme,
    RunReport,
    SeedResult,
    TrainConfig,
    scheme_label,
)
from metalr.services.baseline_service import finetune_constant, finetune_last_layer, layerwise_sweep
from metalr.services.training_service import PRETRAIN_SALT, fit_sgd, train

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class RunOutcome:
    report: RunReport
    traces: Dict[int, LRTrace] = field(default_factory=dict)


def prepare_task(config: ExperimentConfig) -> TransferTask:
    t = config.task
    image_side = None
    if config.model.architecture == "cnn":
        image_side = math.isqrt(t.input_dim)
        if image_side * image_side != t.input_dim:
            raise ConfigError("task.input_dim", f"cnn needs a square input_dim, got {t.input_dim}")
    return synth_shared_features_task(
        seed=t.seed,
        input_dim=t.input_dim,
        latent_dim=t.latent_dim,
        num_classes=t.num_classes,
        n_source=t.n_source,
        n_target=t.n_target,
        n_test=t.n_test,
        label_noise=t.label_noise,
        head_overlap=t.head_overlap,
        validation_fraction=t.validation_fraction,
        image_side=image_side,
    )


def build_model(config: ExperimentConfig, task: TransferTask, seed: int) -> Network:
    m = config.model
    if m.architecture == "mlp":
        return build_mlp(ModelSpec.mlp([task.input_shape[0], *m.hidden, task.num_classes], seed=seed))
    spec = ModelSpec.cnn(task.input_shape, [m.conv_channels], task.num_classes, kernel=m.kernel,
                         padding=m.padding, pool=m.pool, hidden=m.hidden, seed=seed)
    return build_cnn(spec)


def pretrain(model: Network, task: TransferTask, config: ExperimentConfig, seed: int) -> Network:
    """Plain SGD on the source domain."""
    p = config.pretrain
    if p.iterations == 0:
        return model
    rates = {name: p.lr for name in model.group_names()}
    train_config = TrainConfig(batch_size=p.batch_size, iterations=p.iterations, seed=seed,
                               log_every=config.train.log_every)
    result = fit_sgd(model, task.source, rates, train_config, salt=PRETRAIN_SALT)
    logger.info(f"Pretrained on {len(task.source)} source samples in {result.wall_clock_s:.2f}s")
    return result.model


def transfer_model(config: ExperimentConfig, task: TransferTask, seed: int) -> Network:
    model = pretrain(build_model(config, task, seed), task, config, seed)
    k = config.transfer.reinit_head
    if k:
        if k >= model.depth:
            raise ConfigError("transfer.reinit_head", f"must be below model depth {model.depth}, got {k}")
        model = reinit_head(model, k, seed=seed)
    return model


def run_seed(config: ExperimentConfig, task: TransferTask, seed: int) -> Tuple[SeedResult, Optional[LRTrace]]:
    model = transfer_model(config, task, seed)
    scheme = config.scheme.build()
    train_config = config.train_config(seed)

    sweep = None
    if isinstance(scheme, MetaLRScheme):
        result = train(model, task, train_config, scheme)
    elif isinstance(scheme, AllLayersScheme):
        result = finetune_constant(model, task, scheme.alpha, train_config)
    elif isinstance(scheme, LastLayerScheme):
        result = finetune_last_layer(model, task, scheme.alpha, train_config)
    else:
        sweep, result = layerwise_sweep(model, task, scheme.alpha, train_config, scheme.cut_points,
                                        workers=config.run.workers)

    trace = result.trace
    seed_result = SeedResult(
        seed=seed,
        metrics=result.metrics,
        wall_clock_s=sweep.total_wall_clock_s if sweep else result.wall_clock_s,
        passes=result.passes,
        final_alpha=trace.final_alpha() if trace else {},
        tail_alpha=trace.tail_alpha() if trace else {},
        sweep=sweep,
    )
    return seed_result, trace


def execute(config: ExperimentConfig, task: Optional[TransferTask] = None) -> RunOutcome:
    """Pretrain → optional head re-initialization → fine-tune → evaluate, once per seed."""
    task = task or prepare_task(config)
    seeds = list(config.run.seeds)
    label = scheme_label(config.scheme.build())
    logger.info(f"Running {label} over seeds {seeds}")

    def one(seed: int):
        try:
            return run_seed(config, task, seed)
        except MetaLRError as e:
            logger.error(f"Seed {seed} failed: {e}", exc_info=True)
            raise

    # Sweeps parallelize over k instead.
    workers = 1 if config.scheme.kind == "layerwise" else config.run.workers
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, seeds))
    else:
        outcomes = [one(seed) for seed in seeds]

    results = [result for result, _ in outcomes]
    traces = {result.seed: trace for result, trace in outcomes if trace is not None}
    report = RunReport(
        fingerprint=config.fingerprint(),
        scheme=label,
        seeds=results,
        test_accuracy=Aggregate.of([r.metrics.test.accuracy for r in results]),
        test_loss=Aggregate.of([r.metrics.test.loss for r in results]),
        wall_clock_s=Aggregate.of([r.wall_clock_s for r in results]),
        config=config.model_dump(mode="json"),
    )
    logger.info(f"{label}: test accuracy {report.test_accuracy} over {len(results)} seeds")
    return RunOutcome(report=report, traces=traces)


def default_output_dir(config: ExperimentConfig, label: str = "") -> Path:
    if config.run.out:
        return Path(config.run.out)
    slug = re.sub(r"[^A-Za-z0-9]+", "-", label).strip("-")
    name = f"{slug}-{config.fingerprint()[:12]}" if slug else config.fingerprint()[:12]
    return Path(get_settings().output_dir) / name


def emit_report(outcome: RunOutcome, out_dir: PathLike, trace: bool = True) -> List[Path]:
    """metrics.csv, summary.txt, report.json and, with `trace`, traces/seed_<s>.csv."""
    out_dir = Path(out_dir)
    report = outcome.report
    report.output_dir = str(out_dir)
    written: List[Path] = []
    if trace:
        for seed in report.seeds:
            if seed.seed in outcome.traces:
                path = report_store.write_trace(outcome.traces[seed.seed], out_dir / "traces" / f"seed_{seed.seed}.csv")
                seed.trace_path = str(path)
                written.append(path)
    for seed in report.seeds:
        if seed.sweep is not None:
            written.append(report_store.write_sweep(seed.sweep, out_dir / "sweeps" / f"seed_{seed.seed}.csv"))
    written.append(report_store.write_metrics(report, out_dir / "metrics.csv"))
    written.append(report_store.write_summary(report, out_dir / "summary.txt"))
    written.append(report_store.write_report_json(report, out_dir / "report.json"))
    logger.info(f"Wrote {len(written)} report files to {out_dir}")
    return written


def run(config: ExperimentConfig, emit: bool = True, task: Optional[TransferTask] = None) -> RunReport:
    outcome = execute(config, task)
    if emit:
        emit_report(outcome, default_output_dir(config, outcome.report.scheme), trace=config.run.trace)
    return outcome.report


ABLATION_ROWS = [
    ("all_layers", {"kind": "all_layers"}),
    ("metalr_basic", {"kind": "metalr", "policy": "constant", "validation": "separate"}),
    ("metalr_proportional", {"kind": "metalr", "policy": "proportional", "validation": "separate"}),
    ("metalr_trainset", {"kind": "metalr", "policy": "constant", "validation": "trainset"}),
    ("metalr_proportional_trainset", {"kind": "metalr", "policy": "proportional", "validation": "trainset"}),
]


def ablation_grid(base_config: ExperimentConfig, emit: bool = True) -> AblationTable:
    """The all-layers baseline plus MetaLR with each of {proportional hyper-LR, trainset validation} toggled."""
    if base_config.scheme.kind != "metalr":
        raise ConfigError("scheme.kind", f"ablation needs a metalr base config, got '{base_config.scheme.kind}'")
    task = prepare_task(base_config)
    out_dir = default_output_dir(base_config, "ablation")
    rows = []
    for name, updates in ABLATION_ROWS:
        config = base_config.with_scheme(**updates)
        outcome = execute(config, task)
        if emit:
            emit_report(outcome, out_dir / name, trace=config.run.trace)
        report = outcome.report
        rows.append(AblationRow(
            name=name,
            scheme=report.scheme,
            test_accuracy=report.test_accuracy,
            wall_clock_s=report.wall_clock_s,
            accuracies=report.accuracies(),
        ))
    table = AblationTable(fingerprint=base_config.fingerprint(), rows=rows)
    if emit:
        report_store.write_ablation(table, out_dir)
    return table


def paired_test(candidate: Sequence[float], reference: Sequence[float]) -> Optional[float]:
    """One-sided paired t-test p-value for mean(candidate) > mean(reference)."""
    if len(candidate) != len(reference) or len(candidate) < 2:
        return None
    p_value = stats.ttest_rel(candidate, reference, alternative="greater").pvalue
    return float(p_value) if np.isfinite(p_value) else None


def compare(paths: Sequence[PathLike]) -> List[CompareRow]:
    """One row per report; the first report is the reference for time ratios and paired tests."""
    if not paths:
        raise ValueError("compare needs at least one report")
    reports = [report_store.read_report_json(path) for path in paths]
    reference = reports[0]
    reference_by_seed = {s.seed: s.metrics.test.accuracy for s in reference.seeds}
    rows = []
    for path, report in zip(paths, reports):
        p_value = None
        if report is not reference:
            common = sorted(set(reference_by_seed) & {s.seed for s in report.seeds})
            own = {s.seed: s.metrics.test.accuracy for s in report.seeds}
            p_value = paired_test([own[s] for s in common], [reference_by_seed[s] for s in common])
        rows.append(CompareRow(
            path=str(path),
            scheme=report.scheme,
            test_accuracy=report.test_accuracy,
            wall_clock_mean=report.wall_clock_s.mean,
            time_ratio=report.wall_clock_s.mean / reference.wall_clock_s.mean if reference.wall_clock_s.mean else float("nan"),
            p_value=p_value,
        ))
    return rows


def render_comparison(rows: Sequence[CompareRow]) -> str:
    lines = [f"{'scheme':<34} {'test accuracy':<20} {'wall clock s':>12} {'ratio':>7} {'p (>ref)':>9}"]
    for row in rows:
        p_value = f"{row.p_value:.4f}" if row.p_value is not None else "-"
        lines.append(f"{row.scheme:<34} {str(row.test_accuracy):<20} {row.wall_clock_mean:>12.3f} "
                     f"{row.time_ratio:>7.2f} {p_value:>9}")
    return "\n".join(lines) + "\n"
