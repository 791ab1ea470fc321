"""Optional figures rendered from a study's results CSV.

The CSV stays the contract; these plots are a convenience for a quick look.
"""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .studies import read_results_csv  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}
COLORS = {"constrained": "#1f77b4", "standard": "#d62728"}


def _collect(rows, column):
    data = defaultdict(lambda: defaultdict(list))
    order = []
    for r in rows:
        v = float(r[column])
        if r["setting"] not in order:
            order.append(r["setting"])
        if not math.isnan(v):
            data[r["model_family"]][r["setting"]].append(v)
    return data, order


def _boxes(ax, data, order, ylabel):
    fams = [f for f in COLORS if f in data]
    width = 0.8 / max(len(fams), 1)
    for k, fam in enumerate(fams):
        pos = [i + (k - (len(fams) - 1) / 2) * width for i in range(len(order))]
        vals = [data[fam].get(s, []) or [math.nan] for s in order]
        bp = ax.boxplot(vals, positions=pos, widths=width * 0.9, patch_artist=True,
                        showfliers=False, manage_ticks=False)
        for patch in bp["boxes"]:
            patch.set_facecolor(COLORS[fam])
            patch.set_alpha(0.5)
        ax.plot([], [], color=COLORS[fam], lw=6, alpha=0.5, label=fam)
    ax.set_xticks(range(len(order)))
    ax.set_xticklabels(order, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_yscale("log")
    ax.legend(frameon=False)


def _lambda_panels(rows, out: Path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, column, label in zip(axes, ("rmse", "mean_abs_constraint_violation"),
                                 ("RMSE", "mean |constraint violation|")):
        data, order = _collect(rows, column)
        lam = [s for s in order if s != "reference"]
        _boxes(ax, {"standard": data["standard"]}, lam, label)
        ref = data["constrained"].get("reference")
        if ref and column == "rmse":
            ref = sorted(ref)
            ax.axhline(ref[len(ref) // 2], color=COLORS["constrained"], ls="--",
                       label="constrained (median)")
            ax.legend(frameon=False)
    path = out / "lambda_sweep.png"
    fig.savefig(path)
    plt.close(fig)
    return path


def render_figures(results_csv, out_dir) -> list[Path]:
    """Write PNG summaries of ``results_csv`` into ``out_dir``; returns the paths."""
    rows = read_results_csv(results_csv)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not rows:
        return []
    study = rows[0]["study"]
    with plt.rc_context(STYLE):
        if study == "lambda-sweep":
            return [_lambda_panels(rows, out)]
        paths = []
        for column, label in (("rmse", "RMSE"), ("mean_abs_constraint_violation",
                                                  "mean |constraint violation|")):
            data, order = _collect(rows, column)
            if not any(data.values()) or all(v <= 0 for f in data.values()
                                             for vs in f.values() for v in vs):
                continue
            fig, ax = plt.subplots(figsize=(6, 3.5))
            _boxes(ax, data, order, label)
            ax.set_title(study)
            path = out / f"{study}_{column}.png"
            fig.savefig(path)
            plt.close(fig)
            paths.append(path)
        return paths
