"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)


def slice_panels(path, reference, spline, voxel, psnrs=None, axis: int = 2, zoom=None):
    """Central slice (top) and a zoomed cut-out (bottom) of the reference and
    both reconstructions, on a common grey scale."""
    mid = reference.shape[axis] // 2
    take = lambda v: np.take(v, mid, axis=axis)  # noqa: E731
    images = [take(reference), take(spline), take(voxel)]
    titles = ["reference", "spline", "voxel"]
    if psnrs is not None:
        titles[1] += f"\n{psnrs[0]:.2f} dB"
        titles[2] += f"\n{psnrs[1]:.2f} dB"
    h, w = images[0].shape
    if zoom is None:
        zoom = (slice(h // 4, h // 2), slice(w // 4, w // 2))
    vmin, vmax = 0.0, float(reference.max())
    fig, axes = plt.subplots(2, 3, figsize=(9, 6.2))
    for j, (img, title) in enumerate(zip(images, titles)):
        axes[0, j].imshow(img.T, cmap="gray", vmin=vmin, vmax=vmax, origin="lower")
        axes[0, j].set_title(title, fontsize=10)
        axes[1, j].imshow(img[zoom].T, cmap="gray", vmin=vmin, vmax=vmax, origin="lower")
        for ax in axes[:, j]:
            ax.set_xticks([])
            ax.set_yticks([])
    axes[0, 0].set_ylabel("volume slice")
    axes[1, 0].set_ylabel("zoom region")
    _finish(fig, path)


def convergence(path, logs: dict):
    """Least-squares objective per CGLS iteration, one line per projector."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, rows in logs.items():
        it = [r[0] for r in rows]
        ax.semilogy(it, [r[1] for r in rows], label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel(r"$\|Pc - y\|_2$")
    ax.legend(frameon=False)
    _finish(fig, path)


def psnr_bars(path, seeds, spline, voxel):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = np.arange(len(seeds))
    ax.bar(x - 0.18, spline, width=0.36, label="spline")
    ax.bar(x + 0.18, voxel, width=0.36, label="voxel")
    ax.set_xticks(x, [str(s) for s in seeds])
    ax.set_xlabel("noise seed")
    ax.set_ylabel("PSNR [dB]")
    ax.legend(frameon=False)
    _finish(fig, path)


def benchmark_bars(path, rows):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = [r["projector"] for r in rows]
    ax.bar(names, [r["rays_per_second"] for r in rows], color=["C0", "C1"][: len(rows)])
    ax.set_ylabel("rays / s (median)")
    _finish(fig, path)
