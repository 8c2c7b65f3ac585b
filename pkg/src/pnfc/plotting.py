"""Matplotlib figures written next to the CSV reports.

Headless (Agg backend).  Each function takes plain data, writes one file
and returns its path.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "pnfc": dict(color="#d62728", marker="o"),
    "mean": dict(color="#1f77b4", marker="s"),
    "median": dict(color="#2ca02c", marker="^"),
    "rainy": dict(color="0.4", marker="x", linestyle="--"),
}

# stable PNG bytes across runs
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_quality_curves(psnr_curves, ssim_curves, path, inflection=None):
    """PSNR and SSIM versus integration time, one line per estimator.

    ``inflection`` is an optional ``(T, psnr)`` point circled in red.
    """
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for ax, curves, ylabel in ((ax1, psnr_curves, "PSNR (dB)"), (ax2, ssim_curves, "SSIM")):
        for label, pts in curves.items():
            xs, ys = zip(*pts)
            ax.plot(xs, ys, label=label, **_STYLE.get(label, {}))
        ax.set_xlabel("integration time T (ms)")
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3)
    if inflection is not None:
        ax1.plot([inflection[0]], [inflection[1]], "o", ms=16, mfc="none", mec="red", mew=2)
    ax1.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_montage(panels, path, peak=255.0):
    """Grid of grayscale images; ``panels`` maps row label -> {column label: array}."""
    rows = list(panels)
    cols = list(panels[rows[0]])
    fig, axes = plt.subplots(len(rows), len(cols), figsize=(2.2 * len(cols), 2.2 * len(rows)),
                             squeeze=False)
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            ax = axes[i][j]
            ax.imshow(panels[r][c], cmap="gray", vmin=0, vmax=peak, interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(c, fontsize=10)
            if j == 0:
                ax.set_ylabel(r, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def plot_fluctuation(series, path):
    """Block-mean photon level versus frame index for each integration time."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for label, values in series.items():
        ax.plot(range(len(values)), values, marker=".", label=label)
    ax.set_xlabel("measurement event k")
    ax.set_ylabel("block mean (normalized counts)")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
