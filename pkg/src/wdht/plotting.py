"""Report figures written next to the CSV outputs."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 10,
    "axes.labelsize": 11,
    "axes.titlesize": 11,
    "legend.fontsize": 9,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _figure(width=5.0):
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    return plt.subplots(figsize=(width, width * golden))


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_history(history, path):
    with plt.rc_context(_STYLE):
        fig, ax = _figure()
        epochs = [r["epoch"] for r in history]
        ax.plot(epochs, [r["total"] for r in history], "k-", lw=1.5, label="total")
        for key, style in (("L1", "C0--"), ("L2", "C1--"), ("L3", "C2:"), ("L4", "C3--")):
            vals = [r[key] for r in history]
            if any(vals):
                ax.plot(epochs, vals, style, lw=1, label=key)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean batch loss")
        ax.legend(loc="best")
        return _save(fig, path)


def plot_pr_curves(curves, path):
    """``curves`` maps a legend label to a PRCurve."""
    with plt.rc_context(_STYLE):
        fig, ax = _figure()
        for label, c in curves.items():
            ax.plot(c.recall, c.precision, lw=1.5, label=label)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.legend(loc="lower left")
        return _save(fig, path)


def plot_grid(result, path):
    l2 = sorted({c[0] for c in result.cells})
    l3 = sorted({c[1] for c in result.cells})
    M = np.array([[result.cells[(a, b)] for b in l3] for a in l2])
    with plt.rc_context({**_STYLE, "axes.grid": False}):
        fig, ax = _figure()
        im = ax.imshow(M, cmap="viridis", origin="lower", aspect="auto")
        ax.set_xticks(range(len(l3)), [f"{v:g}" for v in l3])
        ax.set_yticks(range(len(l2)), [f"{v:g}" for v in l2])
        ax.set_xlabel("lambda3")
        ax.set_ylabel("lambda2")
        for i in range(len(l2)):
            for j in range(len(l3)):
                bright = im.norm(M[i, j]) > 0.6  # viridis turns yellow at the top
                ax.text(j, i, f"{M[i, j]:.3f}", ha="center", va="center", color="k" if bright else "w", fontsize=8)
        fig.colorbar(im, ax=ax, label="validation mAP")
        return _save(fig, path)


def plot_variance_histogram(variances, path, bins=40):
    with plt.rc_context(_STYLE):
        fig, ax = _figure()
        ax.hist(variances, bins=bins, color="C0", alpha=0.8)
        ax.set_xlabel("tag-vector variance per sample")
        ax.set_ylabel("samples")
        return _save(fig, path)
