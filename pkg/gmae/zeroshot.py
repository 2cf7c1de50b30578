"""Training-free layering, figure-ground separation and edges from Gaussian depth.

Gaussians are sorted by depth and split into d groups. Rendering the
cumulative prefixes (groups 0..n) one after another shows where each group
changes the image; a pixel whose color moves by more than ``threshold`` (max
over channels) when group n is added is assigned layer n. Layer 0 is measured
against the plain background.

Every prefix is rendered by the regular renderer with the Gaussians outside
the prefix switched off, so the last prefix is the full render, bit for bit.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import CameraConfig, ScreenGaussianSet, project
from .errors import ConfigError, InvalidInputError
from .gaussians import GaussianSet
from .imageio import save_binary, save_index_map, save_mask
from .metrics import iou
from .renderer import render_naive, render_tiled

logger = logging.getLogger("gmae.zeroshot")

GROUP_MODES = ("equal_count", "equal_depth_width")
POLICIES = ("first", "last")


@dataclass(frozen=True)
class ZeroShotConfig:
    layers: int = 16
    group_mode: str = "equal_depth_width"
    threshold: float = 0.05
    policy: str = "first"
    split: int | None = None

    def __post_init__(self):
        if self.layers < 2:
            raise ConfigError("layers", f"need at least 2, got {self.layers}")
        if self.group_mode not in GROUP_MODES:
            raise ConfigError("group_mode", f"must be one of {GROUP_MODES}, got {self.group_mode!r}")
        if not self.threshold > 0:
            raise ConfigError("threshold", f"must be positive, got {self.threshold}")
        if self.policy not in POLICIES:
            raise ConfigError("policy", f"must be one of {POLICIES}, got {self.policy!r}")
        if self.split is not None and not 0 <= self.split <= self.layers:
            raise ConfigError("split", f"must lie in [0, {self.layers}], got {self.split}")

    @property
    def default_split(self) -> int:
        return self.layers // 2 if self.split is None else self.split


@dataclass
class LayerStack:
    layers: int
    group_mode: str
    threshold: float
    policy: str
    index: np.ndarray        # (H, W) int64 in {-1, 0..d-1}
    cumulative: np.ndarray   # (d+1, H, W, 3); [0] is the background
    groups: list[np.ndarray] = field(default_factory=list)  # Gaussian ids per group, depth order

    @property
    def assigned(self) -> np.ndarray:
        return self.index >= 0


@dataclass
class EdgeMap:
    edges: np.ndarray  # (H, W) bool
    layers: int

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.edges))


@dataclass
class SegmentationMask:
    mask: np.ndarray  # (H, W) bool foreground
    split: int


def _render_subset(
    sg: ScreenGaussianSet, g: GaussianSet, keep: np.ndarray, cam: CameraConfig, tiled: bool
) -> np.ndarray:
    """Render with every Gaussian outside ``keep`` switched off."""
    sub = replace(sg, valid=sg.valid & keep)
    fn = render_tiled if tiled else render_naive
    return fn(sub, g.colors, g.opacities, cam).image


def _ids_to_keep(count: int, ids) -> np.ndarray:
    keep = np.zeros(count, dtype=bool)
    keep[np.asarray(ids, dtype=np.int64)] = True
    return keep


def cumulative_render(g: GaussianSet, k_prefix: int, cam: CameraConfig, tiled: bool = True) -> np.ndarray:
    """Render only the ``k_prefix`` nearest Gaussians."""
    if not 0 <= k_prefix <= g.count:
        raise InvalidInputError(f"prefix size must lie in [0, {g.count}], got {k_prefix}")
    sg = project(g, cam)
    keep = _ids_to_keep(g.count, sg.order[:k_prefix])
    return _render_subset(sg, g, keep, cam, tiled)


def prefix_schedule(k: int, start: int = 32) -> list[int]:
    """Doubling prefix sizes start, 2*start, ... below k, then k itself."""
    sizes = []
    n = start
    while n < k:
        sizes.append(n)
        n *= 2
    sizes.append(k)
    return sizes


def prefix_curve(g: GaussianSet, cam: CameraConfig, schedule: list[int] | None = None, tiled: bool = True):
    """
    Mean absolute difference between each prefix render and the full render.

    Returns:
        (schedule, renders, diffs); diffs end at exactly 0 for the full prefix
    """
    schedule = schedule or prefix_schedule(g.count)
    full = cumulative_render(g, g.count, cam, tiled)
    renders, diffs = [], []
    for k in schedule:
        img = cumulative_render(g, k, cam, tiled)
        renders.append(img)
        diffs.append(float(np.mean(np.abs(img - full))))
    logger.info("prefix diff curve: " + ", ".join(f"K={k}: {d:.4f}" for k, d in zip(schedule, diffs)))
    return schedule, renders, diffs


def group_gaussians(sg: ScreenGaussianSet, d: int, mode: str, cam: CameraConfig) -> list[np.ndarray]:
    """
    Split the renderable Gaussians, in depth order, into d groups.

    ``equal_count`` takes ceil(K/d) consecutive Gaussians per group (trailing
    groups may be short or empty); ``equal_depth_width`` bins by depth over
    [z_near, z_far] in d equal intervals.
    """
    if mode not in GROUP_MODES:
        raise InvalidInputError(f"unknown group mode {mode!r}")
    ids = sg.order[sg.valid[sg.order]]
    if mode == "equal_count":
        if d > sg.count:
            raise InvalidInputError(f"cannot split {sg.count} Gaussians into {d} equal-count groups")
        size = -(-sg.count // d)
        return [ids[n * size:(n + 1) * size] for n in range(d)]
    rel = (sg.depth[ids] - cam.z_near) / (cam.z_far - cam.z_near)
    bins = np.clip(np.floor(rel * d).astype(np.int64), 0, d - 1)
    return [ids[bins == n] for n in range(d)]


def assign_layers(
    g: GaussianSet,
    d: int,
    mode: str,
    threshold: float,
    cam: CameraConfig,
    policy: str = "first",
    tiled: bool = True,
) -> LayerStack:
    """
    Per-pixel layer indices from cumulative depth-group renders.

    Args:
        g: activated Gaussians
        d: number of depth groups, at least 2
        mode: "equal_count" or "equal_depth_width"
        threshold: max-channel color change that counts, > 0
        cam: camera used for all renders
        policy: "first" keeps the first group that changes a pixel; "last"
            keeps overwriting with later groups that change it
        tiled: renderer path

    Returns:
        LayerStack with the index map and the d+1 cumulative renders
    """
    if d < 2:
        raise InvalidInputError(f"need at least 2 layers, got {d}")
    if not threshold > 0:
        raise InvalidInputError(f"threshold must be positive, got {threshold}")
    if policy not in POLICIES:
        raise InvalidInputError(f"unknown layer policy {policy!r}")

    sg = project(g, cam)
    groups = group_gaussians(sg, d, mode, cam)

    background = np.broadcast_to(cam.background_array, (cam.height, cam.width, 3)).copy()
    renders = [background]
    index = np.full((cam.height, cam.width), -1, dtype=np.int64)
    keep = np.zeros(g.count, dtype=bool)
    for n, ids in enumerate(groups):
        keep[ids] = True
        img = _render_subset(sg, g, keep, cam, tiled)
        changed = np.max(np.abs(img - renders[-1]), axis=-1) > threshold
        if policy == "first":
            index[changed & (index < 0)] = n
        else:
            index[changed] = n
        renders.append(img)

    logger.debug(
        f"assign_layers d={d} {mode}: group sizes {[len(x) for x in groups]}, "
        f"{int(np.count_nonzero(index >= 0))} pixels assigned"
    )
    return LayerStack(
        layers=d,
        group_mode=mode,
        threshold=threshold,
        policy=policy,
        index=index,
        cumulative=np.stack(renders),
        groups=groups,
    )


def layer_renders(g: GaussianSet, stack: LayerStack, cam: CameraConfig, tiled: bool = True) -> np.ndarray:
    """(d, H, W, 3): each depth group rendered alone over the background."""
    sg = project(g, cam)
    return np.stack([_render_subset(sg, g, _ids_to_keep(g.count, ids), cam, tiled) for ids in stack.groups])


def figure_ground(stack: LayerStack, split: int) -> SegmentationMask:
    """Foreground = pixels whose layer index is at least ``split``."""
    if not 0 <= split <= stack.layers:
        raise InvalidInputError(f"split index must lie in [0, {stack.layers}], got {split}")
    return SegmentationMask(mask=stack.index >= split, split=split)


@dataclass
class FigureGroundSweep:
    ious: list[float]  # one per split 0..d
    best_split: int
    best_iou: float


def sweep_figure_ground(stack: LayerStack, truth: np.ndarray) -> FigureGroundSweep:
    """IoU against a known foreground for every split index; ties go to the smallest split."""
    truth = np.asarray(truth, dtype=bool)
    if truth.shape != stack.index.shape:
        raise InvalidInputError(f"ground truth shape {truth.shape} != layer map shape {stack.index.shape}")
    ious = [iou(figure_ground(stack, t).mask, truth) for t in range(stack.layers + 1)]
    best = int(np.argmax(ious))
    return FigureGroundSweep(ious=ious, best_split=best, best_iou=ious[best])


def edge_detect(stack: LayerStack) -> EdgeMap:
    """A pixel is an edge when any 4-neighbor has a different layer index."""
    idx = stack.index
    edges = np.zeros(idx.shape, dtype=bool)
    dv = idx[1:, :] != idx[:-1, :]
    dh = idx[:, 1:] != idx[:, :-1]
    edges[1:, :] |= dv
    edges[:-1, :] |= dv
    edges[:, 1:] |= dh
    edges[:, :-1] |= dh
    return EdgeMap(edges=edges, layers=stack.layers)


def edge_hierarchy(
    g: GaussianSet,
    cam: CameraConfig,
    layer_counts=(8, 16, 32),
    mode: str = "equal_depth_width",
    threshold: float = 0.05,
    policy: str = "first",
) -> dict[int, EdgeMap]:
    """Edge maps for several layer counts; only their sizes are logged."""
    out = {}
    for d in layer_counts:
        out[d] = edge_detect(assign_layers(g, d, mode, threshold, cam, policy))
        logger.info(f"edges d={d}: {out[d].count} pixels")
    return out


def layers_path(out_dir, stem: str, d: int) -> Path:
    return Path(out_dir) / f"{stem}_layers_d{d}.png"


def edges_path(out_dir, stem: str, d: int) -> Path:
    return Path(out_dir) / f"{stem}_edges_d{d}.png"


def mask_path(out_dir, stem: str, split: int) -> Path:
    return Path(out_dir) / f"{stem}_mask_t{split}.png"


def write_layers(out_dir, stem: str, stack: LayerStack) -> Path:
    """16-bit layer map; pixel value is layer index + 1 (0 = unassigned)."""
    path = layers_path(out_dir, stem, stack.layers)
    save_index_map(path, stack.index)
    return path


def write_edges(out_dir, stem: str, edges: EdgeMap) -> Path:
    path = edges_path(out_dir, stem, edges.layers)
    save_binary(path, edges.edges)
    return path


def write_mask(out_dir, stem: str, seg: SegmentationMask) -> Path:
    path = mask_path(out_dir, stem, seg.split)
    save_mask(path, seg.mask)
    return path
