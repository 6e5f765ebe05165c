"""Scoring, audit metrics and report artifacts.

delta_fp compares the decayed target department's mean reconstruction loss
at the in-scope experience against the worst non-target department: a
negative value means the target no longer tops the alert ranking (fewer
decay-induced false positives). anomaly_losses reports the mean losses of
the target, the injected local anomalies and the injected global anomalies;
delta_fn = target minus local (strongly negative means local anomalies
separate cleanly from the decayed department).
"""

import csv
import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from contaudit.errors import InputError
from contaudit.nn.model import Autoencoder
from contaudit.scenario import GLOBAL_ANOMALY, LOCAL_ANOMALY, Experience, ExperienceStream
from contaudit.strategies import STRATEGIES, RunResult

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6f"


@dataclass
class DeptCell:
    loss: float
    count: int
    shadow: bool = False  # scored on decay-removed rows kept aside for evaluation


def per_department_loss(
    model: Autoencoder, experience: Experience, n_departments: int
) -> dict[int, DeptCell]:
    """Mean per-row reconstruction error per department over normal rows.

    Anomaly-labeled rows never enter a department cell. A department with
    no remaining rows is scored on its shadow rows when the experience
    carries them (the decayed target), and is absent otherwise.
    """
    if experience.rows.shape[1] != model.input_dim:
        raise InputError(
            f"experience width {experience.rows.shape[1]} does not match "
            f"model input_dim {model.input_dim}"
        )
    normal = experience.normal_mask()
    scores = None
    if normal.any():
        scores = model.reconstruction_errors(experience.rows[normal])
    departments = experience.department_index[normal]
    cells: dict[int, DeptCell] = {}
    for dept_id in range(n_departments):
        mask = departments == dept_id
        count = int(mask.sum())
        if count > 0:
            cells[dept_id] = DeptCell(loss=float(scores[mask].mean()), count=count)
        elif experience.shadow_department == dept_id and experience.shadow_rows is not None:
            shadow_scores = model.reconstruction_errors(experience.shadow_rows)
            cells[dept_id] = DeptCell(
                loss=float(shadow_scores.mean()), count=len(shadow_scores), shadow=True
            )
    return cells


def delta_fp(cells: dict[int, DeptCell], target: int) -> float:
    """Target loss minus the highest non-target department loss."""
    if target not in cells:
        raise InputError(f"target department {target} absent from the loss table")
    others = [cell.loss for dept_id, cell in cells.items() if dept_id != target]
    if not others:
        raise InputError("delta_fp needs at least two departments")
    return cells[target].loss - max(others)


@dataclass
class AnomalyLosses:
    target: float
    local: float | None
    global_: float | None
    delta_fn: float | None
    counts: dict[str, int] = field(default_factory=dict)


def anomaly_losses(
    model: Autoencoder, experience: Experience, target: int, n_departments: int
) -> AnomalyLosses:
    """Mean losses of target-department normals and both anomaly classes at E_M."""
    cells = per_department_loss(model, experience, n_departments)
    if target not in cells:
        raise InputError(f"target department {target} absent from the final experience")
    target_cell = cells[target]

    def class_mean(label):
        mask = experience.anomaly_label == label
        if not mask.any():
            log.warning("no rows labeled %d in the final experience", label)
            return None, 0
        return float(model.reconstruction_errors(experience.rows[mask]).mean()), int(mask.sum())

    local, n_local = class_mean(LOCAL_ANOMALY)
    global_, n_global = class_mean(GLOBAL_ANOMALY)
    return AnomalyLosses(
        target=target_cell.loss,
        local=local,
        global_=global_,
        delta_fn=(target_cell.loss - local) if local is not None else None,
        counts={
            "target": target_cell.count,
            "local": n_local,
            "global": n_global,
            "rows": experience.n,
        },
    )


@dataclass
class RunMetrics:
    """Everything measured for one (strategy, seed) run on one scenario."""

    strategy: str
    seed: int
    scenario: str
    delta_fp: float
    target_loss: float
    local_loss: float | None
    global_loss: float | None
    delta_fn: float | None
    # curve data: per experience, per department cell of snapshot i scored on E_i
    curves: list[dict[int, DeptCell]] = field(default_factory=list)

    def metric_values(self) -> dict[str, float | None]:
        return {
            "delta_fp": self.delta_fp,
            "target_loss": self.target_loss,
            "local_loss": self.local_loss,
            "global_loss": self.global_loss,
            "delta_fn": self.delta_fn,
        }


def evaluate_run(stream: ExperienceStream, result: RunResult, scenario: str = "") -> RunMetrics:
    """Score every snapshot on its own experience and derive the audit metrics."""
    if stream.target_department is None:
        raise InputError("stream has no target department; apply a decay schedule first")
    if len(result.snapshots) != stream.m:
        raise InputError(
            f"run has {len(result.snapshots)} snapshots for a stream of {stream.m} experiences"
        )
    n = len(stream.departments)
    curves = [
        per_department_loss(snapshot, exp, n)
        for snapshot, exp in zip(result.snapshots, stream.experiences)
    ]
    final_cells = curves[-1]
    losses = anomaly_losses(result.snapshots[-1], stream.final, stream.target_department, n)
    return RunMetrics(
        strategy=result.strategy,
        seed=result.seed,
        scenario=scenario,
        delta_fp=delta_fp(final_cells, stream.target_department),
        target_loss=losses.target,
        local_loss=losses.local,
        global_loss=losses.global_,
        delta_fn=losses.delta_fn,
        curves=curves,
    )


@dataclass
class MetricSummary:
    mean: float
    stdev: float | None  # absent with a single seed
    values: list[float]


def aggregate_seeds(metric_sets: list[dict[str, float | None]]) -> dict[str, MetricSummary]:
    """Per-metric sample mean and n-1 standard deviation across seeds."""
    if not metric_sets:
        raise InputError("nothing to aggregate")
    keys = set(metric_sets[0])
    for ms in metric_sets[1:]:
        if set(ms) != keys:
            raise InputError("metric sets are inconsistent across seeds")
    out = {}
    for key in sorted(keys):
        values = [ms[key] for ms in metric_sets]
        if any(v is None for v in values):
            continue
        out[key] = MetricSummary(
            mean=float(statistics.fmean(values)),
            stdev=float(statistics.stdev(values)) if len(values) > 1 else None,
            values=[float(v) for v in values],
        )
    return out


def _fmt(value) -> str:
    return "" if value is None else FLOAT_FORMAT % value


def _round6(value):
    return None if value is None else round(float(value), 6)


def _ordered_strategies(metrics: list[RunMetrics]) -> list[str]:
    present = {m.strategy for m in metrics}
    return [s for s in STRATEGIES if s in present]


def emit_report(
    metrics: list[RunMetrics],
    out_dir: str | Path,
    dataset_name: str,
    departments: list[str],
    target: int,
    formats: tuple[str, ...] = ("json", "csv", "figures"),
    config_hash: str = "",
) -> list[Path]:
    """Write the report artifacts for one or more evaluated scenarios.

    Produces per-run JSON files, a delta_fp CSV (strategy rows, one column
    per scenario), a per-scenario anomaly-loss CSV, a tidy per-experience
    per-department loss-curve CSV, a plot-description JSON, and rendered
    figures. Outputs are byte-stable: sorted keys, fixed float formatting.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    scenarios = sorted({m.scenario for m in metrics})
    order = _ordered_strategies(metrics)

    if "json" in formats:
        for m in sorted(metrics, key=lambda m: (m.scenario, m.strategy, m.seed)):
            payload = {
                "config_hash": config_hash,
                "dataset": dataset_name,
                "scenario": m.scenario,
                "strategy": m.strategy,
                "seed": m.seed,
                "metrics": {k: _round6(v) for k, v in m.metric_values().items()},
                "department_losses": [
                    {
                        str(dept): {
                            "loss": _round6(cell.loss),
                            "count": cell.count,
                            "shadow": cell.shadow,
                        }
                        for dept, cell in sorted(cells.items())
                    }
                    for cells in m.curves
                ],
            }
            path = out_dir / f"{dataset_name}_{m.scenario}_{m.strategy}_{m.seed}.json"
            path.write_text(json.dumps(payload, sort_keys=True, indent=1))
            written.append(path)

    if "csv" in formats:
        written.append(
            _write_delta_fp_csv(metrics, out_dir, dataset_name, scenarios, order, config_hash)
        )
        for scenario in scenarios:
            written.append(
                _write_anomaly_csv(metrics, out_dir, dataset_name, scenario, order, config_hash)
            )
            written.append(
                _write_curves_csv(
                    metrics, out_dir, dataset_name, scenario, departments, config_hash
                )
            )
        written.append(
            _write_plot_description(
                metrics, out_dir, dataset_name, departments, target, scenarios, order, config_hash
            )
        )

    if "figures" in formats:
        from contaudit.figures import render_figures

        written.extend(
            render_figures(metrics, out_dir, dataset_name, departments, target, config_hash)
        )
    return written


def _group(metrics, scenario, strategy):
    return [m for m in metrics if m.scenario == scenario and m.strategy == strategy]


def _write_delta_fp_csv(metrics, out_dir, dataset_name, scenarios, order, config_hash) -> Path:
    path = out_dir / f"aggregate_{dataset_name}_delta_fp.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        writer = csv.writer(fh)
        header = ["strategy"]
        for scenario in scenarios:
            header += [f"delta_fp_{scenario}_mean", f"delta_fp_{scenario}_stdev"]
        writer.writerow(header)
        for strategy in order:
            row = [strategy]
            for scenario in scenarios:
                group = _group(metrics, scenario, strategy)
                summary = aggregate_seeds([m.metric_values() for m in group])["delta_fp"]
                row += [_fmt(summary.mean), _fmt(summary.stdev)]
            writer.writerow(row)
    return path


def _write_anomaly_csv(metrics, out_dir, dataset_name, scenario, order, config_hash) -> Path:
    path = out_dir / f"aggregate_{dataset_name}_{scenario}.csv"
    columns = ["target_loss", "local_loss", "global_loss", "delta_fn"]
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        writer = csv.writer(fh)
        header = ["strategy"]
        for col in columns:
            header += [f"{col}_mean", f"{col}_stdev"]
        writer.writerow(header)
        for strategy in order:
            group = _group(metrics, scenario, strategy)
            summary = aggregate_seeds([m.metric_values() for m in group])
            row = [strategy]
            for col in columns:
                if col in summary:
                    row += [_fmt(summary[col].mean), _fmt(summary[col].stdev)]
                else:
                    row += ["", ""]
            writer.writerow(row)
    return path


def _write_curves_csv(metrics, out_dir, dataset_name, scenario, departments, config_hash) -> Path:
    """Tidy per-experience per-department losses behind the line plots."""
    path = out_dir / f"curves_{dataset_name}_{scenario}.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["strategy", "seed", "experience", "department", "loss", "rows", "shadow"])
        for m in sorted(
            (m for m in metrics if m.scenario == scenario),
            key=lambda m: (m.strategy, m.seed),
        ):
            for exp_index, cells in enumerate(m.curves, start=1):
                for dept_id in sorted(cells):
                    cell = cells[dept_id]
                    writer.writerow(
                        [
                            m.strategy,
                            m.seed,
                            exp_index,
                            departments[dept_id],
                            _fmt(cell.loss),
                            cell.count,
                            int(cell.shadow),
                        ]
                    )
    return path


def _write_plot_description(
    metrics, out_dir, dataset_name, departments, target, scenarios, order, config_hash
) -> Path:
    """Plotting-tool-agnostic description of the figures (series, axes, labels)."""
    plots = []
    for scenario in scenarios:
        for strategy in order:
            group = _group(metrics, scenario, strategy)
            series = []
            for dept_id, name in enumerate(departments):
                points = []
                for exp_index in range(1, len(group[0].curves) + 1):
                    values = [
                        m.curves[exp_index - 1][dept_id].loss
                        for m in group
                        if dept_id in m.curves[exp_index - 1]
                    ]
                    if values:
                        points.append({"x": exp_index, "y": _round6(np.mean(values))})
                series.append({"label": name, "target": dept_id == target, "points": points})
            plots.append(
                {
                    "kind": "line",
                    "title": f"{strategy} per-department loss over experiences ({scenario})",
                    "x_axis": "experience",
                    "y_axis": "mean reconstruction loss",
                    "scenario": scenario,
                    "strategy": strategy,
                    "series": series,
                }
            )
    path = out_dir / f"plots_{dataset_name}.json"
    path.write_text(
        json.dumps({"config_hash": config_hash, "plots": plots}, sort_keys=True, indent=1)
    )
    return path
