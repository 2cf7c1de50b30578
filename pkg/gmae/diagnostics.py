"""Diagnostic figures: Gaussian size against depth, center layout, prefix strips."""

import logging
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy import stats  # noqa: E402

from .camera import CameraConfig  # noqa: E402
from .gaussians import GaussianSet  # noqa: E402

logger = logging.getLogger("gmae.diagnostics")

CORAL = "#E85A4F"


def scale_depth_stats(g: GaussianSet, cam: CameraConfig) -> tuple[np.ndarray, np.ndarray, float]:
    """
    Mean scale and depth per Gaussian, and their Pearson correlation.

    The correlation is NaN when there are fewer than two Gaussians or either
    quantity is constant.
    """
    size = g.scales.mean(axis=1)
    depth = cam.z_near + (g.centers[:, 2] + 1.0) * 0.5 * (cam.z_far - cam.z_near)
    if g.count < 2 or np.ptp(size) == 0 or np.ptp(depth) == 0:
        return size, depth, math.nan
    r = float(stats.pearsonr(depth, size).statistic)
    return size, depth, r


def plot_scale_vs_depth(g: GaussianSet, cam: CameraConfig, path, title: str = "") -> float:
    """Scatter of mean scale against depth; returns the Pearson correlation."""
    size, depth, r = scale_depth_stats(g, cam)
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.scatter(depth, size, s=6, color=CORAL, alpha=0.6, linewidths=0)
    ax.set_xlabel("depth")
    ax.set_ylabel("mean scale")
    ax.set_xlim(cam.z_near, cam.z_far)
    ax.set_title(f"{title}  r = {r:.3f}".strip(), fontsize=9)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    logger.info(f"scale/depth correlation r = {r:.4f} (K={g.count})")
    return r


def plot_centers_xy(g: GaussianSet, path, title: str = "") -> None:
    """Gaussian centers in the image plane, colored by their own color."""
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(g.centers[:, 0], g.centers[:, 1], s=8, c=np.clip(g.colors, 0, 1), edgecolors="#333", linewidths=0.2)
    ax.set_xlim(-1, 1)
    ax.set_ylim(1, -1)  # image rows grow downward
    ax.set_aspect("equal")
    ax.set_title(title, fontsize=9)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def save_prefix_strip(path, schedule: list[int], renders: list[np.ndarray], target: np.ndarray | None = None) -> None:
    """One row of prefix renders labelled by K, optionally ending with the target."""
    panels = [(f"K={k}", img) for k, img in zip(schedule, renders)]
    if target is not None:
        panels.append(("input", target))
    fig, axes = plt.subplots(1, len(panels), figsize=(1.6 * len(panels), 1.9), squeeze=False)
    for ax, (label, img) in zip(axes[0], panels):
        ax.imshow(np.clip(img, 0, 1), interpolation="nearest")
        ax.set_title(label, fontsize=8, pad=2)
        ax.set_axis_off()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def save_layer_strip(path, renders: np.ndarray, label: str = "layer") -> None:
    """Per-layer renders in inverse depth order (farthest first)."""
    renders = renders[::-1]
    d = len(renders)
    fig, axes = plt.subplots(1, d, figsize=(1.2 * d, 1.5), squeeze=False)
    for i, (ax, img) in enumerate(zip(axes[0], renders)):
        ax.imshow(np.clip(img, 0, 1), interpolation="nearest")
        ax.set_title(f"{label} {d - 1 - i}", fontsize=7, pad=2)
        ax.set_axis_off()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
