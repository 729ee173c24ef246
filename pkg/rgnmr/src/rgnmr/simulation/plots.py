# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from rgnmr.errors import InvalidArgumentError  # noqa: E402
from rgnmr.simulation.metrics import FAILURE_THRESHOLD, summarize_frame  # noqa: E402


def summary_svg(frame: pd.DataFrame, x_axis: str, out: str | Path) -> pd.DataFrame:
    """Renders failure probability (±1.96 SE) and median rel-RMSE against a grid axis as an SVG.

    Returns the per-point summary that was plotted."""

    if x_axis not in frame.columns:
        raise InvalidArgumentError(f"column '{x_axis}' not found in the records")

    summary = summarize_frame(frame, x_axis).sort_values(x_axis)
    x = summary[x_axis].to_numpy()

    fig, (failure_ax, error_ax) = plt.subplots(1, 2, figsize=(10, 4))

    failure_ax.plot(x, summary["failure_rate"], marker="o")
    failure_ax.fill_between(
        x,
        summary["lower"].clip(lower=0),
        summary["upper"].clip(upper=1),
        alpha=0.25,
    )
    failure_ax.set_xlabel(x_axis)
    failure_ax.set_ylabel("failure probability")
    failure_ax.set_ylim(-0.05, 1.05)

    error_ax.semilogy(x, summary["median_rel_rmse"], marker="o")
    error_ax.axhline(FAILURE_THRESHOLD, linestyle="--", color="gray")
    error_ax.set_xlabel(x_axis)
    error_ax.set_ylabel("median rel-RMSE")

    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)

    return summary
