"""Figure rendering for the report-producing commands.

Each renderer writes a PNG next to the delimited/JSON output it documents.
The Agg backend keeps output deterministic and headless-safe.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import BenchReport
from .uncertainty import ToyModel, UncertaintyRecord


def save_scaling_figure(report: BenchReport, path) -> None:
    sizes = np.asarray(report.sizes, dtype=np.float64)
    medians = np.asarray([report.medians[s] for s in report.sizes])
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    ax.loglog(sizes, medians, "o-", label=f"median ({report.backend})")
    # fitted power law for reference
    coeffs = np.polyfit(np.log(sizes), np.log(medians), 1)
    ax.loglog(
        sizes,
        np.exp(coeffs[1]) * sizes ** coeffs[0],
        "--",
        color="gray",
        label=f"slope {report.slope:.2f}",
    )
    ax.set_xlabel("sequence length n")
    ax.set_ylabel("wall time (s)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_toy_figure(
    model: ToyModel, x: np.ndarray, y: np.ndarray, path, extent: float = 4.0, steps: int = 201
) -> None:
    """Uncertainty heat map with training points and the main decision line."""
    axis = np.linspace(-extent, extent, steps)
    gx, gy = np.meshgrid(axis, axis)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    u = model.uncertainty(grid).reshape(steps, steps)
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    im = ax.imshow(
        u,
        origin="lower",
        extent=(-extent, extent, -extent, extent),
        cmap="viridis",
        aspect="auto",
    )
    fig.colorbar(im, ax=ax, label="u = discrepancy + entropy")
    for cls, marker, color in ((0, "o", "white"), (1, "^", "red")):
        pts = x[y == cls]
        ax.scatter(pts[:, 0], pts[:, 1], s=12, marker=marker,
                   edgecolors="black", linewidths=0.3, c=color, label=f"class {cls}")
    wd = model.w[1] - model.w[0]
    bd = model.b[1] - model.b[0]
    if abs(wd[1]) > 1e-12 or abs(wd[0]) > 1e-12:
        xs = np.array([-extent, extent])
        if abs(wd[1]) > abs(wd[0]):
            ax.plot(xs, -(wd[0] * xs + bd) / wd[1], "k--", linewidth=1.0, label="boundary")
        else:
            ys = np.array([-extent, extent])
            ax.plot(-(wd[1] * ys + bd) / wd[0], ys, "k--", linewidth=1.0, label="boundary")
    ax.set_xlim(-extent, extent)
    ax.set_ylim(-extent, extent)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_uncertainty_figure(records: list[UncertaintyRecord], path) -> None:
    """Ranked u values; misdiagnosed samples (when labeled) highlighted."""
    ranked = sorted(records, key=lambda r: (-r.u, r.sample_id))
    us = [r.u for r in ranked]
    colors = [
        "crimson" if (r.label is not None and r.label != r.predicted) else "steelblue"
        for r in ranked
    ]
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.bar(range(len(ranked)), us, color=colors, width=0.9)
    ax.set_xlabel("samples, most uncertain first")
    ax.set_ylabel("u")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
