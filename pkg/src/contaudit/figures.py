"""Matplotlib rendering of the report figures.

Two figure families per (scenario, strategy), averaged over seeds:
a bar chart of final-experience department losses with the target
highlighted against the worst other departments, and a line chart of
per-department losses over the experience stream. Rendering is
deterministic so repeated runs produce byte-identical files.
"""

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

log = logging.getLogger(__name__)

TARGET_COLOR = "#7b2d8b"
OTHER_COLOR = "#4878cf"
DPI = 120
BAR_TOP_OTHERS = 4  # target bar plus the four worst non-target departments


def _png_metadata(config_hash: str) -> dict:
    # fixed metadata keeps the PNG byte-stable across runs and embeds provenance
    return {"Software": "contaudit", "Description": f"config_hash={config_hash}"}


def _seed_mean_curves(group, n_departments):
    """Mean loss per (experience, department) across seeds; NaN where absent."""
    m = len(group[0].curves)
    out = np.full((m, n_departments), np.nan)
    for exp_index in range(m):
        for dept_id in range(n_departments):
            values = [
                metrics.curves[exp_index][dept_id].loss
                for metrics in group
                if dept_id in metrics.curves[exp_index]
            ]
            if values:
                out[exp_index, dept_id] = float(np.mean(values))
    return out


def render_figures(
    metrics,
    out_dir: str | Path,
    dataset_name: str,
    departments: list[str],
    target: int,
    config_hash: str = "",
) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    scenarios = sorted({m.scenario for m in metrics})
    for scenario in scenarios:
        strategies = sorted(
            {m.strategy for m in metrics if m.scenario == scenario}
        )
        for strategy in strategies:
            group = [m for m in metrics if m.scenario == scenario and m.strategy == strategy]
            curves = _seed_mean_curves(group, len(departments))
            written.append(
                _bar_figure(
                    curves[-1], departments, target,
                    out_dir / f"bars_{dataset_name}_{scenario}_{strategy}.png",
                    f"{strategy} department losses at the in-scope experience ({scenario})",
                    config_hash,
                )
            )
            written.append(
                _line_figure(
                    curves, departments, target,
                    out_dir / f"curves_{dataset_name}_{scenario}_{strategy}.png",
                    f"{strategy} department losses over experiences ({scenario})",
                    config_hash,
                )
            )
    return written


def _bar_figure(final_losses, departments, target, path, title, config_hash) -> Path:
    others = [
        (loss, dept_id)
        for dept_id, loss in enumerate(final_losses)
        if dept_id != target and not np.isnan(loss)
    ]
    top = sorted(others, reverse=True)[:BAR_TOP_OTHERS]
    bars = [(departments[target], final_losses[target], TARGET_COLOR)]
    bars += [(departments[dept_id], loss, OTHER_COLOR) for loss, dept_id in top]

    fig, ax = plt.subplots(figsize=(6, 3.2))
    labels = [name for name, _, _ in bars]
    values = [0.0 if np.isnan(v) else v for _, v, _ in bars]
    colors = [c for _, _, c in bars]
    ax.bar(range(len(bars)), values, color=colors)
    ax.set_xticks(range(len(bars)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("mean reconstruction loss")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI, metadata=_png_metadata(config_hash))
    plt.close(fig)
    return path


def _line_figure(curves, departments, target, path, title, config_hash) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    xs = np.arange(1, curves.shape[0] + 1)
    for dept_id, name in enumerate(departments):
        ys = curves[:, dept_id]
        if np.all(np.isnan(ys)):
            continue
        if dept_id == target:
            ax.plot(xs, ys, "--", color=TARGET_COLOR, linewidth=2.0, label=f"{name} (target)")
        else:
            ax.plot(xs, ys, color=OTHER_COLOR, alpha=0.45, linewidth=1.0)
    ax.set_xlabel("experience")
    ax.set_ylabel("mean reconstruction loss")
    ax.set_xticks(xs)
    ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8, loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI, metadata=_png_metadata(config_hash))
    plt.close(fig)
    return path
