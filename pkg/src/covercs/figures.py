"""Render the accuracy-versus-computation report as matplotlib figures."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["render_report_figures"]

_METRICS = [("final_mse", "normalized solution MSE"),
            ("t1_mae", "T1 MAE (ms)"),
            ("t2_mae", "T2 MAE (ms)")]


def render_report_figures(rows, out_dir) -> list:
    """One figure per sampling ratio: the three accuracy metrics against the
    cumulative projection distance count.  Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ratios = sorted({r["ratio"] for r in rows})
    written = []
    for ratio in ratios:
        sub = [r for r in rows if r["ratio"] == ratio]
        fig, axes = plt.subplots(1, 3, figsize=(13, 4))
        for ax, (key, label) in zip(axes, _METRICS):
            for row in sub:
                ax.scatter(row["cum_distances"], max(row[key], 1e-16),
                           label=f"{row['method']} eps={row['epsilon']:g}")
                ax.annotate(f"{row['epsilon']:g}", (row["cum_distances"],
                            max(row[key], 1e-16)), fontsize=7,
                            textcoords="offset points", xytext=(3, 3))
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax.set_xlabel("cumulative distance evaluations")
            ax.set_ylabel(label)
            ax.grid(True, which="both", alpha=0.3)
        handles, labels = axes[0].get_legend_handles_labels()
        fig.legend(handles, labels, loc="lower center", ncol=min(len(sub), 4),
                   fontsize=7)
        fig.suptitle(f"subsampling ratio {ratio}:1")
        fig.tight_layout(rect=(0, 0.12, 1, 1))
        path = out_dir / f"report_ratio{ratio}.png"
        fig.savefig(path, dpi=130)
        plt.close(fig)
        written.append(path)
    return written
