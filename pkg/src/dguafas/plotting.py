"""Report figures. Rendering is headless (Agg) and every figure goes through
an atomic write like the other run artifacts."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .fileio import atomic_write_bytes  # noqa: E402

STYLE = {
    "figure.figsize": (4.8, 3.6),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> None:
    buf = io.BytesIO()
    # fixed metadata keeps the PNG free of a creation timestamp
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_roc(curves: dict[str, tuple], path, title: str = "ROC") -> None:
    """``curves`` maps a label to (fpr, tpr) or (fpr, tpr, auc)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
        for label, c in curves.items():
            fpr, tpr = np.asarray(c[0]), np.asarray(c[1])
            name = f"{label} (AUC {c[2]:.3f})" if len(c) > 2 else label
            ax.plot(fpr, tpr, lw=1.4, label=name, drawstyle="default")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("false positive rate (real rejected)")
        ax.set_ylabel("true positive rate (spoof rejected)")
        ax.set_title(title)
        ax.legend(loc="lower right")
        _save(fig, path)


def plot_losses(history, path, columns=("cls", "assoc", "imi", "sid_cls", "sood_cls", "extract")) -> None:
    """Per-epoch loss terms; ``history`` is a list of records with those attributes."""
    epochs = [r.epoch for r in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for col in columns:
            values = np.array([getattr(r, col) for r in history], dtype=float)
            if np.all(values == 0):
                continue
            ax.plot(epochs, values, marker="o", ms=3, lw=1.2, label=col)
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss")
        ax.set_yscale("log")
        ax.set_title("training losses")
        ax.legend(loc="upper right", ncol=2)
        _save(fig, path)


def plot_sweep(rows: list[dict], path, metric: str = "auc_median") -> None:
    """Grouped bars: one group per protocol, one bar per ablation."""
    protocols = list(dict.fromkeys(r["protocol"] for r in rows))
    ablations = list(dict.fromkeys(r["ablation"] for r in rows))
    lookup = {(r["protocol"], r["ablation"]): r[metric] for r in rows}
    width = 0.8 / max(len(ablations), 1)
    x = np.arange(len(protocols))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.8, 1.1 * len(protocols) + 2), 3.6))
        for i, ab in enumerate(ablations):
            vals = [lookup.get((p, ab), np.nan) for p in protocols]
            ax.bar(x + (i - (len(ablations) - 1) / 2) * width, vals, width, label=ab)
        finite = [v for v in lookup.values() if np.isfinite(v)]
        if finite:
            lo = min(finite)
            ax.set_ylim(max(0.0, lo - 0.05), min(1.0, max(finite) + 0.02))
        ax.set_xticks(x)
        ax.set_xticklabels(protocols, rotation=20)
        ax.set_ylabel(metric.replace("_", " "))
        ax.set_title("sweep summary")
        ax.legend(loc="lower right")
        _save(fig, path)
