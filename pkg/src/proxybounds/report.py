"""Figures drawn from a branch and bound trace.

matplotlib is imported on first use with the non-interactive Agg backend, so
the solver itself never pays for it.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

from .engine import TraceRow


def figure_path(trace_path: Union[str, Path]) -> Path:
    """The figure written next to a trace: t.csv -> t.png."""
    return Path(trace_path).with_suffix(".png")


def plot_trace(rows: Sequence[TraceRow], path: Union[str, Path], title: str = "") -> Path:
    """Bound and incumbent per iteration (top) and the certified error on a
    log scale (bottom). Returns the written path."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    it = [r.iter for r in rows]
    fig, (ax_b, ax_e) = plt.subplots(2, 1, figsize=(6.4, 5.6), sharex=True,
                                     gridspec_kw={"height_ratios": [3, 2]})
    ax_b.plot(it, [r.best_bound for r in rows], lw=1.5, label="bound")
    ax_b.plot(it, [r.incumbent for r in rows], lw=1.0, ls="--", label="incumbent")
    ax_b.set_ylabel("objective")
    ax_b.legend(frameon=False)
    if title:
        ax_b.set_title(title)
    err = [r.certified_error for r in rows]
    if any(e > 0 for e in err):
        ax_e.semilogy(it, err, lw=1.2, color="C2", label="certified error")
    ax_e.plot(it, [r.geometric_factor for r in rows], lw=1.0, color="C3",
              label="geometric factor")
    ax_e.set_yscale("log")
    ax_e.set_xlabel("iteration")
    ax_e.legend(frameon=False)
    for ax in (ax_b, ax_e):
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
