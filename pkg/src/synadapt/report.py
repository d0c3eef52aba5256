"""Deterministic report rendering: JSON, delimited metrics, and figures.

All writers are byte-stable for identical payloads: JSON is key-sorted,
CSV rows are sorted, and PNGs are rendered through the Agg backend with
pinned metadata so repeated runs produce identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_FIG_METADATA = {"Software": "synadapt"}
_DPI = 120


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2,
                               ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def flatten(payload: dict, prefix: str = "") -> list[tuple[str, object]]:
    rows: list[tuple[str, object]] = []
    for key, value in payload.items():
        name = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, dict):
            rows.extend(flatten(value, name))
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                if isinstance(item, dict):
                    rows.extend(flatten(item, f"{name}[{i}]"))
                else:
                    rows.append((f"{name}[{i}]", item))
        else:
            rows.append((name, value))
    return sorted(rows)


def write_csv(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in flatten(payload):
            writer.writerow([name, value])
    return path


def save_figure(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=_DPI, metadata=_FIG_METADATA)
    plt.close(fig)
    return path


def loss_curve_figure(epoch_losses: list[float], title: str):
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    epochs = list(range(1, len(epoch_losses) + 1))
    ax.plot(epochs, epoch_losses, marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss per instance")
    ax.set_title(title)
    ax.set_xticks(epochs)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig


def bar_figure(labels: list[str], values: list[float], title: str, ylabel: str):
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar(range(len(labels)), values, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    return fig


def histogram_figure(values: list[float], title: str, xlabel: str):
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.hist(values, bins=20, color="#4878a8", edgecolor="white")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    fig.tight_layout()
    return fig
