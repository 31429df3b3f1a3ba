"""Figures rendered next to the CSV outputs (Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DataError  # noqa: E402

# fixed metadata keeps reruns byte-identical
_PNG_META = {"Software": None}


def figure_path(csv_path: str | Path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_suffix(".png") if csv_path.suffix else csv_path.with_name(csv_path.name + ".png")


def _save(fig, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=120, metadata=_PNG_META)
    except OSError as exc:
        raise DataError(f"cannot write figure {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def plot_projection(proj, path: str | Path, title: str = "t-SNE projection") -> Path:
    """Scatter of the 2-D points, one colour per class."""
    fig, ax = plt.subplots(figsize=(6, 5))
    cmap = plt.get_cmap("tab20")
    for label in np.unique(proj.labels):
        pts = proj.points[proj.labels == label]
        name = proj.class_names[label] if label < len(proj.class_names) else str(label)
        ax.scatter(pts[:, 0], pts[:, 1], s=8, color=cmap(int(label) % 20), label=name)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    ax.legend(fontsize=7, markerscale=2, loc="best")
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_report(report, path: str | Path, title: str = "") -> Path:
    """Grouped bars of mean accuracy per model and regime, whiskers at one std."""
    summary = report.summary()
    models = list(summary)
    regimes = list(dict.fromkeys(r.regime for r in report.rows))
    width = 0.8 / max(len(regimes), 1)
    fig, ax = plt.subplots(figsize=(1.6 * len(models) + 2, 4))
    xs = np.arange(len(models))
    for i, name in enumerate(regimes):
        means = [summary[m].get(name, {}).get("mean", np.nan) for m in models]
        stds = [summary[m].get(name, {}).get("std", 0.0) for m in models]
        ax.bar(xs + (i - (len(regimes) - 1) / 2) * width, means, width, yerr=stds, capsize=3, label=name)
    ax.set_xticks(xs)
    ax.set_xticklabels(models)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    if title:
        ax.set_title(title)
    ax.legend(title="regime", fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(path))
