"""Render the binned metrics to PNG figures alongside the CSV output.

Three views: queue trajectories per controller, delivered inflow against the
dotted target limits per controller, and mean delay versus flow limit for both
controllers. The metering window is shaded where one exists.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .harness import BIN_S, ExperimentResult, limit_label  # noqa: E402

_DPI = 150


def _bin_minutes(n: int) -> list[float]:
    return [(b * BIN_S) / 60.0 for b in range(n)]


def _shade_window(ax, window: tuple[int, int]) -> None:
    start, end = window
    if end > start:
        ax.axvspan(start / 60.0, end / 60.0, color="0.92", zorder=0)


def render_experiment_figures(result: ExperimentResult, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    window = result.scenario.metering.window
    controllers = sorted({a.controller for a in result.aggregates})
    written = []

    for controller in controllers:
        aggs = [a for a in result.aggregates if a.controller == controller]

        fig, ax = plt.subplots(figsize=(7, 4))
        _shade_window(ax, window)
        for agg in aggs:
            x = _bin_minutes(len(agg.queue_series))
            ax.plot(x, agg.queue_series, label=f"limit {limit_label(agg.limit_veh_hr)}")
        ax.set_xlabel("time (min)")
        ax.set_ylabel("mean queue on gated arm (veh)")
        ax.set_title(f"Queues, {controller}")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        path = os.path.join(out_dir, f"queues_{controller}.png")
        fig.savefig(path, dpi=_DPI, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

        fig, ax = plt.subplots(figsize=(7, 4))
        _shade_window(ax, window)
        for agg in aggs:
            x = _bin_minutes(len(agg.inflow_veh_hr))
            line, = ax.plot(x, agg.inflow_veh_hr, label=f"limit {limit_label(agg.limit_veh_hr)}")
            if agg.limit_veh_hr is not None:
                ax.hlines(
                    agg.limit_veh_hr, window[0] / 60.0, window[1] / 60.0,
                    colors=line.get_color(), linestyles="dotted", linewidth=1.0,
                )
        ax.set_xlabel("time (min)")
        ax.set_ylabel("inflow from gated arm (veh/hr)")
        ax.set_title(f"Delivered inflow, {controller}")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        path = os.path.join(out_dir, f"inflow_{controller}.png")
        fig.savefig(path, dpi=_DPI, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(5.5, 4))
    for controller in controllers:
        pairs = [
            (a.limit_veh_hr, a.mean_delay_s)
            for a in result.aggregates
            if a.controller == controller and a.limit_veh_hr is not None
            and a.mean_delay_s is not None
        ]
        pairs.sort()
        if pairs:
            ax.plot([p[0] for p in pairs], [p[1] for p in pairs], marker="o", label=controller)
    ax.set_xlabel("flow limit (veh/hr)")
    ax.set_ylabel("mean delay (s)")
    ax.set_title("Mean vehicle delay by flow limit")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    path = os.path.join(out_dir, "delays.png")
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written
