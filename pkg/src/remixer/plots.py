"""Figure rendering for evaluation reports.

Renders the knob-sweep curves (remix quality and loudness difference
against the manipulated source's gain) to PNG files next to the CSV
output. One figure per source with one line per variant, matching how the
curve CSVs are grouped.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["render_curve_figures"]


def _plot_metric(curves_for_source, metric_key, ylabel, title, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    plotted = 0
    for variant, rows in sorted(curves_for_source.items()):
        gains = [row["gain_db"] for row in rows]
        values = [row[metric_key] for row in rows]
        points = [(g, v) for g, v in zip(gains, values) if not math.isnan(v)]
        if not points:
            continue
        ax.plot([p[0] for p in points], [p[1] for p in points], marker="o", label=variant)
        plotted += 1
    ax.set_xlabel("gain (dB)")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if plotted:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_curve_figures(
    curve_data: dict[tuple[str, str], list[dict]], out_dir
) -> dict[str, Path]:
    """Render minSDR and LD knob curves.

    ``curve_data`` maps (variant, source label) to 17 sweep rows as built
    by the report path. Returns artifact-name -> path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = sorted({source for _, source in curve_data})
    artifacts: dict[str, Path] = {}
    for source in sources:
        per_variant = {
            variant: rows for (variant, s), rows in curve_data.items() if s == source
        }
        sdr_path = out_dir / f"min_sdr_{source}.png"
        _plot_metric(
            per_variant,
            "mean_min_sdr_db",
            "mean minSDR (dB)",
            f"remix quality vs {source} gain",
            sdr_path,
        )
        artifacts[f"figure:min_sdr:{source}"] = sdr_path
        ld_path = out_dir / f"ld_{source}.png"
        _plot_metric(
            per_variant,
            "mean_ld_db",
            "mean loudness difference (dB)",
            f"loudness error vs {source} gain",
            ld_path,
        )
        artifacts[f"figure:ld:{source}"] = ld_path
    return artifacts
