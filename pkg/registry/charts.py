"""SVG line and bar charts for benchmark reports."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib import pyplot as plt  # noqa: E402


def _by_mode(report, x, y):
    series = {}
    for row in report.rows:
        series.setdefault(row["mode"], []).append((row[x], row[y]))
    return {mode: sorted(points) for mode, points in series.items()}


def _line_chart(report, path, x, panels, xlabel, title):
    fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 4))
    axes = np.atleast_1d(axes)
    for ax, (column, ylabel) in zip(axes, panels):
        for mode, points in _by_mode(report, x, column).items():
            xs, ys = zip(*points)
            ax.plot(xs, ys, marker="o", label=mode)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def _resource_chart(report, path):
    counters = ("signature_verifications", "hash_computations", "wall_s")
    fig, axes = plt.subplots(1, len(counters), figsize=(12, 4))
    for ax, counter in zip(axes, counters):
        modes = [row["mode"] for row in report.rows]
        ax.bar(modes, [row[counter] for row in report.rows], color=["tab:blue", "tab:orange"])
        ax.set_title(counter)
        ax.grid(True, axis="y", alpha=0.3)
    fig.suptitle("Issue + verify workload")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def render(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if report.kind == "throughput":
        return _line_chart(
            report,
            path,
            "target_rate",
            [("achieved_tps", "achieved throughput (tx/s)"), ("mean_ms", "mean latency (ms)")],
            "send rate (tx/s)",
            "Issue throughput",
        )
    if report.kind == "latency":
        return _line_chart(
            report,
            path,
            "parallelism",
            [
                ("mean_ms", "mean latency (ms)"),
                ("p95_ms", "p95 latency (ms)"),
                ("service_mean_ms", "mean service latency (ms)"),
            ],
            "parallel requests",
            "Authentication latency",
        )
    return _resource_chart(report, path)
