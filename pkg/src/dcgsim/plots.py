"""Trace CSVs and static SVG figures.

Figures go through matplotlib's SVG backend with a fixed hash salt, no date
metadata and text kept as ``<text>``, so the same traces always give the same
bytes.
"""
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .simulator import snapshot_due  # noqa: E402

SVG_RC = {
    "svg.hashsalt": "dcgsim",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "figure.dpi": 72,
}
SVG_METADATA = {"Date": None, "Creator": None}
MSE_FLOOR = 1e-300
COLORS = ("tab:blue", "tab:red", "tab:green", "tab:purple")


def emit_csv(trace, path):
    """One line per engine round: ``round,residual_sq,mse,messages_sent``."""
    res = trace.residual_sq_history
    err = trace.mse_history
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "residual_sq", "mse", "messages_sent"])
        for k, report in enumerate(trace.rounds):
            writer.writerow([
                report.round,
                repr(res[k]) if k < len(res) else "",
                repr(err[k]) if k < len(err) else "",
                report.messages_sent,
            ])
    return path


def _downsample(n_rounds):
    """Round numbers kept in a plotted curve (log-spaced, last one always)."""
    keep = [r for r in range(1, n_rounds + 1) if snapshot_due(r)]
    if keep and keep[-1] != n_rounds:
        keep.append(n_rounds)
    return keep


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return path


def emit_svg_mse(traces, path):
    """Mean squared error against engine rounds, one curve per solver, log-log."""
    if not traces:
        raise ValueError("need at least one trace")
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for k, (name, trace) in enumerate(traces.items()):
            if not trace.mse_history:
                continue
            rounds = _downsample(len(trace.mse_history))
            mse = [max(trace.mse_history[r - 1], MSE_FLOOR) for r in rounds]
            ax.plot(rounds, mse, color=COLORS[k % len(COLORS)], label=name, gid=f"mse-{name}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("engine rounds")
        ax.set_ylabel("mean squared error")
        ax.grid(True, which="major", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def emit_svg_trails(scene, traces, path):
    """Estimate trails of every free agent (x-y projection in 3-D).

    ``+`` marks the start, ``*`` the final estimate, ``o`` the true position;
    anchors are drawn as black squares.
    """
    if not traces:
        raise ValueError("need at least one trace")
    pos = scene.positions
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 6))
        for k, (name, trace) in enumerate(traces.items()):
            if not trace.snapshots:
                continue
            color = COLORS[k % len(COLORS)]
            stack = np.array([x[:, :2] for _, x in trace.snapshots])
            for agent in range(stack.shape[1]):
                ax.plot(stack[:, agent, 0], stack[:, agent, 1], color=color, lw=0.6, alpha=0.6,
                        gid=f"trail-{name}-{agent}")
            ax.plot(stack[0, :, 0], stack[0, :, 1], "+", color=color, ms=8, ls="none")
            ax.plot(stack[-1, :, 0], stack[-1, :, 1], "*", color=color, ms=7, ls="none",
                    label=f"{name} estimate", gid=f"estimate-{name}")
        ax.plot(pos[scene.m:, 0], pos[scene.m:, 1], "o", mfc="none", mec="black", ms=8, ls="none",
                label="ground truth")
        ax.plot(pos[:scene.m, 0], pos[:scene.m, 1], "s", color="black", ms=6, ls="none",
                label="anchor")
        ax.plot([], [], "+", color="gray", ls="none", label="start")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        return _save(fig, path)
