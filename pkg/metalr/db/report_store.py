# metalr/db/report_store.py
import logging
from pathlib import Path
from typing import List, Sequence, Union

import pandas as pd

from metalr.core.errors import ReportIOError
from metalr.models.schemas import AblationTable, CompareRow, LRTrace, OracleResult, RunReport, SweepResult

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"


def _write_text(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to write {path}: {e}", exc_info=True)
        raise ReportIOError(str(path), str(e)) from e
    return path


def _write_frame(frame: pd.DataFrame, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        logger.error(f"Failed to write {path}: {e}", exc_info=True)
        raise ReportIOError(str(path), str(e)) from e
    return path


def write_trace(trace: LRTrace, path: PathLike) -> Path:
    """iteration,layer,alpha,hypergradient,train_loss,val_loss; one row per (iteration, layer)."""
    return _write_frame(trace.to_frame(), Path(path))


def read_trace(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def metrics_frame(report: RunReport) -> pd.DataFrame:
    rows = []
    for seed in report.seeds:
        m = seed.metrics
        row = {
            "seed": seed.seed,
            "train_loss": m.train.loss,
            "train_accuracy": m.train.accuracy,
            "val_loss": m.val.loss if m.val else None,
            "val_accuracy": m.val.accuracy if m.val else None,
            "test_loss": m.test.loss,
            "test_accuracy": m.test.accuracy,
            "wall_clock_s": seed.wall_clock_s,
            "forward_passes": seed.passes.get("forward", 0),
            "backward_passes": seed.passes.get("backward", 0),
        }
        row.update({f"final_alpha_{layer}": value for layer, value in seed.final_alpha.items()})
        row.update({f"tail_alpha_{layer}": value for layer, value in seed.tail_alpha.items()})
        if seed.sweep is not None:
            row["best_k"] = seed.sweep.best_k
        rows.append(row)
    return pd.DataFrame(rows)


def write_metrics(report: RunReport, path: PathLike) -> Path:
    return _write_frame(metrics_frame(report), Path(path))


def sweep_frame(sweep: SweepResult) -> pd.DataFrame:
    return pd.DataFrame([
        {
            "k": row.k,
            "frozen": "|".join(row.frozen),
            "val_accuracy": row.metrics.val.accuracy if row.metrics.val else None,
            "test_accuracy": row.metrics.test.accuracy,
            "wall_clock_s": row.wall_clock_s,
            "selected": row.k == sweep.best_k,
        }
        for row in sweep.rows
    ])


def write_sweep(sweep: SweepResult, path: PathLike) -> Path:
    return _write_frame(sweep_frame(sweep), Path(path))


def render_summary(report: RunReport) -> str:
    lines = [
        f"scheme:        {report.scheme}",
        f"fingerprint:   {report.fingerprint}",
        f"seeds:         {', '.join(str(s.seed) for s in report.seeds)}",
        f"test accuracy: {report.test_accuracy}",
        f"test loss:     {report.test_loss}",
        f"wall clock s:  {report.wall_clock_s}",
        "",
        "seed  test_accuracy  test_loss  wall_clock_s",
    ]
    for seed in report.seeds:
        accuracy = seed.metrics.test.accuracy
        lines.append(
            f"{seed.seed:<4d}  {accuracy if accuracy is not None else float('nan'):.4f}"
            f"         {seed.metrics.test.loss:.4f}     {seed.wall_clock_s:.3f}"
        )
        if seed.tail_alpha:
            rates = ", ".join(f"{layer}={value:.3e}" for layer, value in seed.tail_alpha.items())
            lines.append(f"      tail alpha: {rates}")
    return "\n".join(lines) + "\n"


def write_summary(report: RunReport, path: PathLike) -> Path:
    return _write_text(Path(path), render_summary(report))


def write_report_json(report: RunReport, path: PathLike) -> Path:
    return _write_text(Path(path), report.model_dump_json(indent=2))


def read_report_json(path: PathLike) -> RunReport:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ReportIOError(str(path), f"cannot read report: {e}") from e
    return RunReport.model_validate_json(text)


def render_ablation(table: AblationTable) -> str:
    lines = [f"fingerprint: {table.fingerprint}", "", f"{'row':<30} {'test accuracy':<20} wall clock s"]
    for row in table.rows:
        lines.append(f"{row.name:<30} {str(row.test_accuracy):<20} {row.wall_clock_s.mean:.3f}")
    return "\n".join(lines) + "\n"


def write_ablation(table: AblationTable, out_dir: PathLike) -> List[Path]:
    out_dir = Path(out_dir)
    return [
        _write_frame(table.to_frame(), out_dir / "ablation.csv"),
        _write_text(out_dir / "ablation.txt", render_ablation(table)),
        _write_text(out_dir / "ablation.json", table.model_dump_json(indent=2)),
    ]


def write_oracle(result: OracleResult, out_dir: PathLike) -> List[Path]:
    out_dir = Path(out_dir)
    surface = pd.DataFrame(result.points, columns=[f"alpha_{layer}" for layer in result.layers])
    surface["val_loss"] = result.losses
    return [
        _write_frame(surface, out_dir / "oracle_surface.csv"),
        _write_text(out_dir / "oracle.json", result.model_dump_json(indent=2)),
    ]


def write_comparison(rows: Sequence[CompareRow], path: PathLike) -> Path:
    frame = pd.DataFrame([
        {
            "path": row.path,
            "scheme": row.scheme,
            "test_accuracy_mean": row.test_accuracy.mean,
            "test_accuracy_std": row.test_accuracy.std,
            "wall_clock_mean": row.wall_clock_mean,
            "time_ratio": row.time_ratio,
            "p_value": row.p_value,
        }
        for row in rows
    ])
    return _write_frame(frame, Path(path))
