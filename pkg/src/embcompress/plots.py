"""Report figures. Files are written with fixed metadata so reruns are byte-identical."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "embcompress",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def plot_training(metrics, path, title=""):
    """Learning rate, batch loss and dev accuracy against mini-batch index."""
    with plt.rc_context(RC):
        fig, axes = plt.subplots(3, 1, figsize=(6, 6), sharex=True)
        idx = [r[0] for r in metrics.rows]
        axes[0].plot(idx, metrics.lrs, lw=1)
        axes[0].set_ylabel("learning rate")
        axes[1].plot(idx, [r[3] for r in metrics.rows], lw=0.8)
        axes[1].set_ylabel("train loss")
        dev = [(r[0], r[4]) for r in metrics.rows if r[4] is not None]
        if dev:
            axes[2].plot(*zip(*dev), marker="o", ms=3)
        axes[2].set_ylabel("dev accuracy")
        axes[2].set_xlabel("mini-batch")
        if title:
            axes[0].set_title(title)
        _save(fig, path)


def plot_recovery(curves: dict, reference: dict, path):
    """Dev accuracy while retraining compressed models, one line per reduction R.

    ``reference`` maps a label (uncompressed, 16 bit, ...) to a constant dev
    accuracy drawn as a horizontal line.
    """
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, points in curves.items():
            ax.plot(*zip(*points), marker=".", label=label)
        for i, (label, acc) in enumerate(reference.items()):
            ax.axhline(acc, ls="--", lw=0.8, color=f"C{len(curves) + i}", label=label)
        ax.set_xlabel("mini-batch")
        ax.set_ylabel("dev accuracy")
        ax.legend(loc="lower right")
        _save(fig, path)


def plot_sweep(r_values, proposed, baseline2, quantized: dict, uncompressed, path):
    """Test accuracy against size reduction for both SVD methods and quantization."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        pct = [100 * r for r in r_values]
        ax.plot(pct, proposed, marker="o", label="proposed (compress + retrain)")
        ax.plot(pct, baseline2, marker="s", label="offline SVD (baseline 2)")
        for bits, (r, acc) in quantized.items():
            ax.plot([100 * r], [acc], marker="^", ls="none", label=f"{bits}-bit quantization")
        ax.axhline(uncompressed, ls="--", lw=0.8, color="gray", label="uncompressed")
        ax.set_xlabel("size reduction R (%)")
        ax.set_ylabel("test accuracy")
        ax.legend(loc="lower left")
        _save(fig, path)


def plot_flops(reports, path):
    """Dense vs factorized FLOPs over the retained fraction p."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        ps = [r.p for r in reports]
        ax.plot(ps, [r.f_q for r in reports], marker="o", label="F_Q (dense, quantized)")
        ax.plot(ps, [r.f_s for r in reports], marker="s", label="F_S (factorized)")
        ax.set_xlabel("retained fraction p")
        ax.set_ylabel("FLOPs per forward pass")
        if reports:
            ax.set_title(f"m={reports[0].m}, n={reports[0].n}")
        ax.legend()
        _save(fig, path)
