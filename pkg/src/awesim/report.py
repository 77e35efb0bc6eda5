"""PNG figures drawn from the report tables.

Each figure is rendered next to the CSV it is drawn from, using the
non-interactive Agg backend so no display is needed.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _share_a(label: str) -> int:
    return int(label.split(":")[0])


def plot_task(task_id: str, records: list, path) -> None:
    """Error against exposure; one line per x when the task has several."""
    xs = list(dict.fromkeys(r["x"] for r in records))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for x in xs:
        pts = sorted((_share_a(r["ratio"]), r["mean_error"], r["se"]) for r in records if r["x"] == x)
        share, mean, se = zip(*pts)
        label = f"d = {x}" if isinstance(x, int) else None
        ax.errorbar(share, mean, yerr=se, marker="o", capsize=3, label=label)
    ax.set_xlabel("exposure to the first language (%)")
    ax.set_ylabel("ABX error (%)")
    ax.set_title(task_id)
    if len(xs) > 1:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def plot_probe(probe_docs: list, path) -> None:
    by_ratio = {}
    for d in probe_docs:
        by_ratio.setdefault(d["ratio"][0], []).append(d["accuracy"])
    share = sorted(by_ratio)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for s in share:
        ax.scatter([s] * len(by_ratio[s]), by_ratio[s], color="tab:blue")
    ax.axhline(50.0, color="grey", linestyle=":")
    ax.set_xlabel("exposure to the first language (%)")
    ax.set_ylabel("language probe accuracy (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def render_figures(tables: dict, out_dir, probe_docs=None) -> list:
    """Write ``figure_<task>.png`` for every table (plus the probe plot)."""
    out_dir = Path(out_dir)
    written = []
    for task_id, records in tables.items():
        path = out_dir / f"figure_{task_id}.png"
        plot_task(task_id, records, path)
        written.append(path)
    if probe_docs:
        path = out_dir / "probe.png"
        plot_probe(probe_docs, path)
        written.append(path)
    return written
