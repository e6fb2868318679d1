"""Figures written next to the CSV reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_eval_report(report, path) -> Path:
    """Per-frame error curves (left) and per-sequence collision rates (right)."""
    path = Path(path)
    fig, (ax_err, ax_coll) = plt.subplots(1, 2, figsize=(10, 4))
    for s in report.scores:
        if len(s.frame_errors):
            ax_err.plot(np.arange(1, len(s.frame_errors) + 1), s.frame_errors * 1000.0,
                        lw=1, label=s.name)
    ax_err.set_xlabel("predicted frame")
    ax_err.set_ylabel("mean vertex error (mm)")
    if 0 < len(report.scores) <= 10:
        ax_err.legend(fontsize=7)
    names = [s.name for s in report.scores]
    pos = np.arange(len(names))
    ax_coll.bar(pos - 0.2, [s.coll_body_pct for s in report.scores], 0.4, label="body")
    ax_coll.bar(pos + 0.2, [s.coll_garment_pct for s in report.scores], 0.4, label="garment")
    ax_coll.set_xticks(pos)
    ax_coll.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax_coll.set_ylabel("colliding vertices (%)")
    ax_coll.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_training_log(rows: list[dict], path) -> Path:
    """Total loss and its components against optimizer step, log scale."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = [r["step"] for r in rows]
    for key in ("total", "mse", "normal", "coll_body", "coll_garment"):
        vals = np.array([float(r[key]) for r in rows])
        if np.any(vals > 0):
            ax.plot(steps, np.where(vals > 0, vals, np.nan), lw=1 if key != "total" else 1.6,
                    label=key)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
