"""Offline plots and text summaries from training logs and eval reports."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def parse_log(path) -> list[dict]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = {}
        for token in line.split():
            key, _, val = token.partition("=")
            try:
                rec[key] = float(val)
            except ValueError:
                rec[key] = val
        records.append(rec)
    return records


def plot_loss_curve(log_path, out_path) -> str:
    records = [r for r in parse_log(log_path) if "total" in r]
    if not records:
        raise ValueError(f"{log_path}: no loss records found")
    steps = [r["step"] for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("total", "diffusion", "pixel", "perceptual"):
        if key in records[0]:
            ax.plot(steps, [r[key] for r in records], label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)


def summary_table(summary_path, out_path) -> str:
    summary = json.loads(Path(summary_path).read_text())
    width = max(len(k) for k in summary)
    lines = [f"{k.ljust(width)}  {v}" for k, v in sorted(summary.items())]
    Path(out_path).write_text("\n".join(lines) + "\n")
    return str(out_path)
