"""Figure rendering for sweeps and comparison reports.

Uses the Agg backend and writes PNG with fixed metadata so that repeated
runs produce byte-identical files.
"""

from __future__ import annotations

import os
import tempfile
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import IoFailure

PNG_METADATA = {"Software": "prbench"}


def sweep_figure(
    xs: Sequence[int],
    ys: Sequence[float],
    swept_param: str,
    kind: str,
    step_width: Optional[int] = None,
):
    """Latency staircase over one parameter; representatives marked when the
    step width is known (the last point on each step)."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(xs, ys, drawstyle="steps-post", color="#456990", lw=1.2, zorder=1)
    ax.plot(xs, ys, "o", color="#456990", ms=3, zorder=2, label="measured")
    if step_width and step_width > 1:
        pr_x = [x for x in xs if x % step_width == 0]
        pr_y = [y for x, y in zip(xs, ys) if x % step_width == 0]
        ax.plot(pr_x, pr_y, "o", color="#d1495b", ms=5, zorder=3,
                label=f"representatives (width {step_width})")
        ax.legend(loc="upper left", frameon=False)
    ax.set_xlabel(f"{swept_param}")
    ax.set_ylabel("latency [s]")
    ax.set_title(f"{kind}: sweep over {swept_param}")
    fig.tight_layout()
    return fig


def comparison_figure(report: Mapping):
    """Error versus training-set size, one line per sampling strategy."""
    cells = report["cells"]
    strategies = sorted({c["strategy"] for c in cells})
    colors = {"pr": "#d1495b", "random_full": "#456990"}
    fig, axes = plt.subplots(1, 2, figsize=(9.6, 4.0), sharex=True)
    for metric, ax in zip(("mape_percent", "rmspe_percent"), axes):
        for strategy in strategies:
            points = sorted(
                ((c["size"], c[metric]) for c in cells if c["strategy"] == strategy)
            )
            ax.plot(
                [p[0] for p in points],
                [p[1] for p in points],
                marker="o",
                label=strategy,
                color=colors.get(strategy),
            )
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("training samples")
        ax.set_ylabel(metric.replace("_percent", " [%]").upper())
        ax.grid(True, which="both", alpha=0.3)
    axes[0].legend(frameon=False)
    fig.suptitle(f"{report.get('kind', '')}: estimation error by sampling strategy")
    fig.tight_layout()
    return fig


def save_figure(fig, path: str) -> None:
    """Atomically write a figure as PNG and release it."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".png")
    try:
        with os.fdopen(fd, "wb") as fh:
            fig.savefig(fh, format="png", dpi=150, metadata=PNG_METADATA)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoFailure(f"cannot write figure {path}: {exc}") from exc
    finally:
        plt.close(fig)
