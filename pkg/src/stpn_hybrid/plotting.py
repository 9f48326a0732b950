"""Curve figures for analysis results (opt-in, used by ``--plot``)."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .engine import AnalysisResult  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "font.size": 9,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


def plot_curves(results: Sequence[AnalysisResult], path: str, logy: bool | None = None,
                title: str | None = None) -> str:
    """Estimate with its clamped CI band, one line per result."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for r in results:
            t = [e.t for e in r.curve]
            m = [e.mean for e in r.curve]
            lo = [e.ci_low for e in r.curve]
            hi = [e.ci_high for e in r.curve]
            label = r.method if r.depth is None or r.method != "hybrid" else f"hybrid d={int(r.depth)}"
            (line,) = ax.plot(t, m, lw=1.0, label=label)
            if any(h > l for l, h in zip(lo, hi)):
                ax.fill_between(t, lo, hi, color=line.get_color(), alpha=0.2, lw=0)
        positive = [e.mean for r in results for e in r.curve if e.mean > 0]
        if logy or (logy is None and positive and min(positive) < 1e-4):
            ax.set_yscale("log")
        ax.set_xlabel("time")
        ax.set_ylabel("probability")
        if title:
            ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path
