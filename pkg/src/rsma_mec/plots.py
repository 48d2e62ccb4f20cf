"""Figure rendering for sweep and convergence reports.

Figures are written next to the delimited output; rendering is optional and
never affects the numerical results.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import InstanceResult, cell_means

_MARKERS = ["o", "s", "^", "v", "D", "p", "*", "x", "+", "."]


def plot_sweep(results: list[InstanceResult], out_path: str | Path) -> Path:
    """Mean MCOR (with stddev band) against the swept parameter, per algorithm."""
    out_path = Path(out_path)
    means = cell_means(results)
    param = results[0].param if results else "?"
    algos = sorted({res.algo for res in results}, key=lambda a: a.value)
    values = sorted({res.value for res in results})

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for idx, algo in enumerate(algos):
        ys = np.array([means[(v, algo)]["mcor_mean"] for v in values]) / 1e6
        err = np.array([means[(v, algo)]["mcor_std"] for v in values]) / 1e6
        xs = np.arange(len(values))
        ax.errorbar(
            xs, ys, yerr=err, label=algo.value,
            marker=_MARKERS[idx % len(_MARKERS)], capsize=3,
        )
    ax.set_xticks(np.arange(len(values)))
    ax.set_xticklabels([str(v) for v in values])
    ax.set_xlabel(param)
    ax.set_ylabel("mean MCOR (Mbps)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_convergence(stats: dict[str, np.ndarray], out_path: str | Path) -> Path:
    """Empirical CDFs of SCA iteration counts and swap counts."""
    out_path = Path(out_path)
    panels = []
    if "sca_iters" in stats:
        panels.append(("SCA iterations per invocation", stats["sca_iters"], stats["sca_cdf"]))
    if "swaps" in stats:
        panels.append(("swap operations per instance", stats["swaps"], stats["swap_cdf"]))
    fig, axes = plt.subplots(1, max(len(panels), 1), figsize=(5 * max(len(panels), 1), 4))
    if len(panels) <= 1:
        axes = [axes]
    for ax, (label, xs, cdf) in zip(axes, panels):
        ax.step(xs, cdf, where="post")
        ax.set_xlabel(label)
        ax.set_ylabel("empirical CDF")
        ax.set_ylim(0.0, 1.05)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
