"""Figure rendering for the report path; files land next to the CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

# Strip the version string so figure bytes depend on the data alone.
PNG_METADATA = {"Software": None}


def save_latency_histogram(latencies_ms, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    if latencies_ms:
        ax.hist(latencies_ms, bins=min(30, max(5, len(set(latencies_ms)))), color="#1b9e77")
    ax.set_xlabel("remote alert latency (ms)")
    ax.set_ylabel("alerts")
    ax.set_title("Alert latency from origin detection")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=PNG_METADATA)
    plt.close(fig)


def save_alert_timeline(report, path: Path) -> None:
    detector_order = report.detector_ids()
    index = {node_id: i for i, node_id in enumerate(detector_order)}
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for kind, color, marker in (("local_detection", "#d95f02", "s"), ("remote_gossip", "#7570b3", "o")):
        xs = [a.raised_at_ms / 1000.0 for a in report.alerts if a.kind == kind and a.node_id in index]
        ys = [index[a.node_id] for a in report.alerts if a.kind == kind and a.node_id in index]
        if xs:
            ax.scatter(xs, ys, s=18, c=color, marker=marker, label=kind)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("detector")
    if detector_order:
        step = max(1, len(detector_order) // 10)
        ax.set_yticks(range(0, len(detector_order), step))
        ax.set_yticklabels(detector_order[::step])
    ax.set_title(f"Alerts — {report.scenario_name} seed {report.seed}")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=PNG_METADATA)
    plt.close(fig)


def save_bench_series(timings_ms, path: Path, title: str = "Detector latency") -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(range(1, len(timings_ms) + 1), timings_ms, lw=0.8, color="#1b9e77")
    ax1.set_xlabel("repetition")
    ax1.set_ylabel("latency (ms)")
    ax2.hist(timings_ms, bins=30, color="#7570b3")
    ax2.set_xlabel("latency (ms)")
    ax2.set_ylabel("count")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=PNG_METADATA)
    plt.close(fig)
