"""Front-to-back splatting of screen-space Gaussians, forward and backward.

Two forward paths share one compositing kernel:

- ``render_naive`` runs every pixel of the image against every Gaussian in
  depth order. It is the reference the tiled path is checked against.
- ``render_tiled`` bins Gaussians into square pixel tiles by the bounding
  box of their cutoff ellipse and composites each tile against its own list,
  in the same global depth order.

A Gaussian outside a pixel's cutoff contributes alpha = 0 there, which leaves
the running color and transmittance bit-for-bit unchanged, so both paths
perform the same arithmetic on every pixel.

The backward pass recomputes the forward per tile, keeping the transmittance
in front of each Gaussian, then walks the Gaussians back to front. Dividing
T back out of the final transmittance is avoided: deep opaque stacks
underflow it to zero. Per-tile gradient buffers are reduced in tile order, so
repeated runs are bit-identical.
"""

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .camera import CameraConfig, ScreenGaussianSet, project, project_backward
from .errors import InvalidInputError, NonFiniteError
from .gaussians import GaussianSet, ScaleClamp, activate_parameters, activation_backward

logger = logging.getLogger("gmae.renderer")

ALPHA_MAX = 0.999

# Worker threads for tiles. Numpy releases the GIL inside the per-tile array
# ops, so a handful of threads helps on images with many tiles.
NUM_THREADS = int(os.environ.get("GMAE_NUM_THREADS", "0")) or min(8, os.cpu_count() or 1)

# Gaussians whose footprints are evaluated together; longer tile lists are
# processed in consecutive chunks carrying color and transmittance across.
CHUNK_SIZE = 256


@dataclass
class RenderOutput:
    image: np.ndarray          # (H, W, 3)
    transmittance: np.ndarray  # (H, W)
    touch_count: np.ndarray    # (K,) pixels inside each Gaussian's cutoff


@dataclass
class ScreenGradients:
    means2d: np.ndarray    # (K, 2)
    inv_cov2d: np.ndarray  # (K, 2, 2)
    colors: np.ndarray     # (K, 3)
    opacities: np.ndarray  # (K,)

    @classmethod
    def zeros(cls, k: int) -> "ScreenGradients":
        return cls(np.zeros((k, 2)), np.zeros((k, 2, 2)), np.zeros((k, 3)), np.zeros(k))

    def add(self, other: "ScreenGradients") -> None:
        self.means2d += other.means2d
        self.inv_cov2d += other.inv_cov2d
        self.colors += other.colors
        self.opacities += other.opacities


def _footprints(pixels, means, invs, cutoff2):
    """Offsets (c, P, 2), Mahalanobis q (c, P) and inside-cutoff masks for c Gaussians."""
    d = pixels[None, :, :] - means[:, None, :]
    a = invs[:, 0, 0, None]
    b = invs[:, 0, 1, None]
    c = invs[:, 1, 1, None]
    q = a * d[..., 0] ** 2 + 2.0 * b * d[..., 0] * d[..., 1] + c * d[..., 1] ** 2
    return d, q, q <= cutoff2


def _footprint(pixels, mean, inv, cutoff2):
    """Offsets, Mahalanobis q, and the inside-cutoff mask for one Gaussian."""
    d, q, inside = _footprints(pixels, mean[None], inv[None], cutoff2)
    return d[0], q[0], inside[0]


class CompositeState:
    """
    Running front-to-back accumulation over a fixed block of pixels.

    ``add`` composites Gaussians (given as indices, already in depth order)
    on top of what has been accumulated so far; ``image`` closes the
    composite with the background. Footprints are evaluated CHUNK_SIZE
    Gaussians at a time, and compositing all Gaussians in one call or in
    consecutive groups performs identical arithmetic.

    With ``record`` set, the transmittance in front of every Gaussian that
    touches the block is kept in ``history`` for the backward pass.
    """

    def __init__(
        self, pixels: np.ndarray, sg: ScreenGaussianSet, colors, opacities, cam: CameraConfig, record: bool = False
    ):
        self.pixels = pixels
        self.sg = sg
        self.colors = colors
        self.opacities = opacities
        self.cutoff2 = cam.cutoff ** 2
        self.background = cam.background_array
        self.color = np.zeros((pixels.shape[0], 3))
        self.trans = np.ones(pixels.shape[0])
        self.touch = np.zeros(sg.count, dtype=np.int64)
        self.record = record
        self.history: list[tuple[int, np.ndarray]] = []

    def add(self, ids) -> None:
        sg = self.sg
        ids = np.asarray(ids, dtype=np.int64)
        for start in range(0, len(ids), CHUNK_SIZE):
            chunk = ids[start:start + CHUNK_SIZE]
            _, q, inside = _footprints(self.pixels, sg.means2d[chunk], sg.inv_cov2d[chunk], self.cutoff2)
            hits = np.count_nonzero(inside, axis=1)
            alpha = np.where(inside, np.minimum(ALPHA_MAX, self.opacities[chunk, None] * np.exp(-0.5 * q)), 0.0)
            for row, k in enumerate(chunk):
                if not hits[row]:
                    continue
                if self.record:
                    self.history.append((int(k), self.trans.copy()))
                self.color += self.colors[k] * (alpha[row] * self.trans)[:, None]
                self.trans *= 1.0 - alpha[row]
                self.touch[k] += hits[row]

    def image(self) -> np.ndarray:
        return self.color + self.trans[:, None] * self.background


def _backward_block(state: CompositeState, grad: np.ndarray) -> ScreenGradients:
    """Gradients of sum(grad * image) over one pixel block, given its recorded forward state."""
    sg, pixels = state.sg, state.pixels
    out = ScreenGradients.zeros(sg.count)
    after = state.trans[:, None] * state.background
    for k, trans in reversed(state.history):
        d, q, inside = _footprint(pixels, sg.means2d[k], sg.inv_cov2d[k], state.cutoff2)
        o = state.opacities[k]
        gauss = np.where(inside, np.exp(-0.5 * q), 0.0)
        raw_alpha = o * gauss
        alpha = np.minimum(ALPHA_MAX, raw_alpha)
        one_minus = 1.0 - alpha
        weight = alpha * trans

        out.colors[k] = np.sum(grad * weight[:, None], axis=0)
        d_alpha = np.sum(grad * (state.colors[k] * trans[:, None] - after / one_minus[:, None]), axis=1)
        after += state.colors[k] * weight[:, None]

        # The clamp and the cutoff have zero derivative.
        d_alpha = np.where(inside & (raw_alpha < ALPHA_MAX), d_alpha, 0.0)
        out.opacities[k] = np.sum(d_alpha * gauss)
        d_q = -0.5 * o * gauss * d_alpha
        inv = sg.inv_cov2d[k]
        Ad = d @ inv
        out.means2d[k] = -2.0 * np.sum(d_q[:, None] * Ad, axis=0)
        out.inv_cov2d[k] = np.einsum("p,pi,pj->ij", d_q, d, d)
    return out


def _ordered_ids(sg: ScreenGaussianSet) -> np.ndarray:
    return sg.order[sg.valid[sg.order]]


def _to_output(cam: CameraConfig, image_flat, trans_flat, touch) -> RenderOutput:
    return RenderOutput(
        image=image_flat.reshape(cam.height, cam.width, 3),
        transmittance=trans_flat.reshape(cam.height, cam.width),
        touch_count=touch,
    )


def render_naive(sg: ScreenGaussianSet, colors, opacities, cam: CameraConfig) -> RenderOutput:
    """Composite every pixel against every Gaussian in depth order."""
    state = CompositeState(cam.pixel_grid(), sg, colors, opacities, cam)
    state.add(_ordered_ids(sg))
    return _to_output(cam, state.image(), state.trans, state.touch)


@dataclass(frozen=True)
class Tile:
    y0: int
    y1: int
    x0: int
    x1: int

    def pixels(self) -> np.ndarray:
        ys, xs = np.mgrid[self.y0:self.y1, self.x0:self.x1]
        return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


def make_tiles(cam: CameraConfig) -> list[Tile]:
    ts = cam.tile_size
    return [
        Tile(y0, min(y0 + ts, cam.height), x0, min(x0 + ts, cam.width))
        for y0 in range(0, cam.height, ts)
        for x0 in range(0, cam.width, ts)
    ]


def bin_gaussians(sg: ScreenGaussianSet, cam: CameraConfig) -> list[list[int]]:
    """
    Per-tile lists of Gaussian indices in global depth order.

    The cutoff ellipse d^T A d <= cutoff^2 spans exactly cutoff*sqrt(cov_xx)
    horizontally and cutoff*sqrt(cov_yy) vertically; one extra pixel of margin
    keeps the binning conservative.
    """
    ts = cam.tile_size
    n_tx = -(-cam.width // ts)
    n_ty = -(-cam.height // ts)
    bins: list[list[int]] = [[] for _ in range(n_tx * n_ty)]
    ext_x = cam.cutoff * np.sqrt(sg.cov2d[:, 0, 0]) + 1.0
    ext_y = cam.cutoff * np.sqrt(sg.cov2d[:, 1, 1]) + 1.0
    for k in _ordered_ids(sg):
        mx, my = sg.means2d[k]
        x_lo, x_hi = mx - ext_x[k], mx + ext_x[k]
        y_lo, y_hi = my - ext_y[k], my + ext_y[k]
        if x_hi < 0 or y_hi < 0 or x_lo > cam.width - 1 or y_lo > cam.height - 1:
            continue
        tx0 = max(0, int(np.floor(x_lo / ts)))
        tx1 = min(n_tx - 1, int(np.floor(x_hi / ts)))
        ty0 = max(0, int(np.floor(y_lo / ts)))
        ty1 = min(n_ty - 1, int(np.floor(y_hi / ts)))
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                bins[ty * n_tx + tx].append(int(k))
    return bins


def _map_tiles(fn, tiles, bins):
    if NUM_THREADS > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=NUM_THREADS) as pool:
            return list(pool.map(fn, tiles, bins))
    return [fn(t, b) for t, b in zip(tiles, bins)]


def render_tiled(sg: ScreenGaussianSet, colors, opacities, cam: CameraConfig) -> RenderOutput:
    """Tile-binned render; matches render_naive on every pixel."""
    tiles = make_tiles(cam)
    bins = bin_gaussians(sg, cam)

    def run(tile: Tile, ids):
        state = CompositeState(tile.pixels(), sg, colors, opacities, cam)
        state.add(ids)
        return state

    image = np.empty((cam.height, cam.width, 3))
    trans = np.empty((cam.height, cam.width))
    touch = np.zeros(sg.count, dtype=np.int64)
    for tile, state in zip(tiles, _map_tiles(run, tiles, bins)):
        h, w = tile.y1 - tile.y0, tile.x1 - tile.x0
        image[tile.y0:tile.y1, tile.x0:tile.x1] = state.image().reshape(h, w, 3)
        trans[tile.y0:tile.y1, tile.x0:tile.x1] = state.trans.reshape(h, w)
        touch += state.touch
    return RenderOutput(image=image, transmittance=trans, touch_count=touch)


def composite_backward(
    sg: ScreenGaussianSet, colors, opacities, cam: CameraConfig, grad_image: np.ndarray, tiled: bool = True
) -> ScreenGradients:
    """Gradients w.r.t. screen-space parameters, colors and opacities."""
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.shape != (cam.height, cam.width, 3):
        raise InvalidInputError(
            f"upstream gradient has shape {grad_image.shape}, expected {(cam.height, cam.width, 3)}"
        )
    bad = np.argwhere(~np.isfinite(grad_image))
    if bad.size:
        y, x, ch = bad[0]
        raise NonFiniteError(f"non-finite upstream gradient at pixel (row {y}, col {x}), channel {ch}")

    if not tiled:
        tiles = [Tile(0, cam.height, 0, cam.width)]
        bins = [list(_ordered_ids(sg))]
    else:
        tiles = make_tiles(cam)
        bins = bin_gaussians(sg, cam)

    def run(tile: Tile, ids):
        state = CompositeState(tile.pixels(), sg, colors, opacities, cam, record=True)
        state.add(ids)
        grad = grad_image[tile.y0:tile.y1, tile.x0:tile.x1].reshape(-1, 3)
        return _backward_block(state, grad)

    total = ScreenGradients.zeros(sg.count)
    for partial in _map_tiles(run, tiles, bins):
        total.add(partial)
    return total


def render_gaussians(g: GaussianSet, cam: CameraConfig, tiled: bool = True) -> RenderOutput:
    """Project and render an activated GaussianSet."""
    sg = project(g, cam)
    if sg.num_degenerate:
        logger.debug(f"skipping {sg.num_degenerate} degenerate Gaussians")
    fn = render_tiled if tiled else render_naive
    return fn(sg, g.colors, g.opacities, cam)


def render_raw(raw: np.ndarray, clamp: ScaleClamp, cam: CameraConfig, tiled: bool = True) -> RenderOutput:
    """Activate raw (K, 14) vectors and render them."""
    return render_gaussians(activate_parameters(raw, clamp), cam, tiled=tiled)


def render_backward(
    raw: np.ndarray, clamp: ScaleClamp, cam: CameraConfig, grad_image: np.ndarray, tiled: bool = True
) -> np.ndarray:
    """
    Gradient of sum(grad_image * render(raw)) w.r.t. every raw coordinate.

    Chains compositing, projection, covariance construction and activation.
    Returns a (K, 14) array; Gaussians that touch no pixel get exact zeros.
    """
    t0 = time.perf_counter()
    raw = np.asarray(raw, dtype=np.float64)
    g = activate_parameters(raw, clamp)
    sg = project(g, cam)
    screen = composite_backward(sg, g.colors, g.opacities, cam, grad_image, tiled=tiled)
    d_centers, d_scales, d_quats = project_backward(g, sg, cam, screen.means2d, screen.inv_cov2d)
    grad = activation_backward(raw, clamp, d_centers, d_scales, d_quats, screen.colors, screen.opacities)
    logger.debug(f"render_backward K={g.count}: {(time.perf_counter() - t0) * 1000:.0f}ms")
    return grad
