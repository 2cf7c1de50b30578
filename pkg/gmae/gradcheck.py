"""Finite-difference checks of the analytic renderer and backbone gradients.

The rendered image is only piecewise smooth: the footprint cutoff, the alpha
clamp and the depth order are discrete. A central difference is trusted only
when that discrete pattern is the same at both stencil points as at the base
point; otherwise the draw is rejected and a fresh scene (or coordinate) is
sampled. Rejections are counted in the report.

A coordinate passes when its analytic and numeric values differ by at most
ABS_FLOOR, or by at most the row tolerance relative to the larger magnitude
(REL_TOL for the renderer, BACKBONE_REL_TOL for the backbone sample).
"""

import logging
import time
from dataclasses import dataclass

import numpy as np
import torch

from .autograd import splat
from .camera import CameraConfig, project
from .errors import GradcheckFailure
from .gaussians import CENTER, COLOR, QUAT, RAW_DIM, SCALE, ScaleClamp, activate_parameters
from .model import build_model, model_preset
from .patches import sample_mask
from .renderer import ALPHA_MAX, _footprint, render_backward, render_raw
from .training import masked_mse

logger = logging.getLogger("gmae.gradcheck")

REL_TOL = 1e-4
BACKBONE_REL_TOL = 1e-3
ABS_FLOOR = 1e-7
RENDER_STEP = 1e-4
BACKBONE_STEP = 1e-6

# Give up when rejections exceed this multiple of the requested draws.
MAX_REJECT_FACTOR = 10

BLOCKS = {
    "center": CENTER,
    "scale": SCALE,
    "quaternion": QUAT,
    "color": COLOR,
    "opacity": slice(13, 14),
}


@dataclass
class GradcheckRow:
    name: str
    checked: int
    max_rel_error: float
    max_abs_error: float
    rejected: int = 0
    tolerance: float = REL_TOL

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradcheck_camera(size: int = 16) -> CameraConfig:
    """Small camera with several tiles, so the per-tile reduction is exercised."""
    return CameraConfig(height=size, width=size, tile_size=max(1, size // 2))


def discrete_pattern(raw: np.ndarray, clamp: ScaleClamp, cam: CameraConfig) -> bytes:
    """Depth order, validity, cutoff footprints and clamped pixels, as one byte string."""
    g = activate_parameters(raw, clamp)
    sg = project(g, cam)
    pixels = cam.pixel_grid()
    cutoff2 = cam.cutoff ** 2
    parts = [sg.order.tobytes(), sg.valid.tobytes()]
    for k in range(sg.count):
        if not sg.valid[k]:
            continue
        _, q, inside = _footprint(pixels, sg.means2d[k], sg.inv_cov2d[k], cutoff2)
        clamped = inside & (g.opacities[k] * np.exp(-0.5 * q) >= ALPHA_MAX)
        parts.append(np.packbits(inside).tobytes())
        parts.append(np.packbits(clamped).tobytes())
    return b"".join(parts)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(relative error with the absolute floor applied, absolute difference)."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)
    return np.where(diff <= ABS_FLOOR, 0.0, rel), diff


def random_scene(k: int, rng: np.random.Generator) -> np.ndarray:
    """Raw vectors for k Gaussians a pixel or two wide, mostly inside a small image."""
    raw = np.empty((k, RAW_DIM))
    raw[:, 0:2] = np.arctanh(rng.uniform(-0.6, 0.6, size=(k, 2)))
    raw[:, 2] = rng.normal(0.0, 1.0, size=k)
    raw[:, 3:6] = rng.normal(-1.5, 0.4, size=(k, 3))
    raw[:, 6:10] = rng.normal(0.0, 1.0, size=(k, 4))
    raw[:, 10:13] = rng.normal(0.0, 1.0, size=(k, 3))
    raw[:, 13] = rng.normal(0.5, 1.0, size=k)
    return raw


def _weighted_render(raw, weights, clamp, cam) -> float:
    return float(np.sum(weights * render_raw(raw, clamp, cam).image))


def check_scene(raw, weights, clamp: ScaleClamp, cam: CameraConfig, step: float = RENDER_STEP):
    """
    Analytic and central-difference gradients of sum(weights * render(raw)).

    Returns:
        (analytic, numeric), both (K, 14), or None when some stencil crosses
        a discontinuity
    """
    analytic = render_backward(raw, clamp, cam, weights)
    base = discrete_pattern(raw, clamp, cam)
    numeric = np.zeros_like(raw)
    for idx in np.ndindex(raw.shape):
        plus = raw.copy()
        plus[idx] += step
        minus = raw.copy()
        minus[idx] -= step
        if discrete_pattern(plus, clamp, cam) != base or discrete_pattern(minus, clamp, cam) != base:
            return None
        up = _weighted_render(plus, weights, clamp, cam)
        down = _weighted_render(minus, weights, clamp, cam)
        numeric[idx] = (up - down) / (2 * step)
    return analytic, numeric


def check_renderer(
    k: int, scenes: int, rng: np.random.Generator, cam: CameraConfig, clamp: ScaleClamp = ScaleClamp()
) -> list[GradcheckRow]:
    """One row per parameter block, maximized over ``scenes`` random scenes of k Gaussians."""
    rel_max = dict.fromkeys(BLOCKS, 0.0)
    abs_max = dict.fromkeys(BLOCKS, 0.0)
    done = rejected = 0
    while done < scenes:
        if rejected > MAX_REJECT_FACTOR * scenes:
            raise GradcheckFailure(f"K={k}: {rejected} scenes rejected, finite differences unusable")
        raw = random_scene(k, rng)
        weights = rng.uniform(-1.0, 1.0, size=(cam.height, cam.width, 3))
        result = check_scene(raw, weights, clamp, cam)
        if result is None:
            rejected += 1
            continue
        rel, diff = relative_errors(*result)
        for name, cols in BLOCKS.items():
            rel_max[name] = max(rel_max[name], float(rel[:, cols].max()))
            abs_max[name] = max(abs_max[name], float(diff[:, cols].max()))
        done += 1
    return [
        GradcheckRow(
            name=f"K={k} {name}",
            checked=scenes * k * (cols.stop - cols.start),
            max_rel_error=rel_max[name],
            max_abs_error=abs_max[name],
            rejected=rejected,
        )
        for name, cols in BLOCKS.items()
    ]


def check_backbone(
    rng: np.random.Generator, coords: int = 100, seed: int = 0, mask_ratio: float = 0.75
) -> GradcheckRow:
    """
    Autograd through the backbone and the splatting bridge against central
    differences, on ``coords`` randomly chosen parameter entries.
    """
    config = model_preset("gradcheck")
    model = build_model(config, seed)
    model.eval()
    grid = config.grid
    cam = gradcheck_camera(config.image_size)
    image = torch.from_numpy(rng.uniform(0.0, 1.0, size=(1, config.image_size, config.image_size, 3)))
    masks = [sample_mask(grid.num_patches, mask_ratio, seed)]

    def evaluate():
        raw = model(image, masks)
        return masked_mse(splat(raw, config.clamp, cam), image, masks, grid), raw

    loss, raw = evaluate()
    model.zero_grad(set_to_none=True)
    loss.backward()
    base = discrete_pattern(raw.detach()[0].numpy(), config.clamp, cam)

    params = [p for p in model.parameters()]
    sizes = np.array([p.numel() for p in params])
    bounds = np.cumsum(sizes)
    worst_rel = worst_abs = 0.0
    checked = rejected = 0
    while checked < coords:
        if rejected > MAX_REJECT_FACTOR * coords:
            raise GradcheckFailure(f"backbone: {rejected} coordinates rejected, finite differences unusable")
        flat = int(rng.integers(bounds[-1]))
        which = int(np.searchsorted(bounds, flat, side="right"))
        offset = int(flat - (bounds[which - 1] if which else 0))
        p = params[which]
        view = p.data.view(-1)
        analytic = 0.0 if p.grad is None else float(p.grad.view(-1)[offset])
        orig = view[offset].item()
        with torch.no_grad():
            view[offset] = orig + BACKBONE_STEP
            loss_plus, raw_plus = evaluate()
            view[offset] = orig - BACKBONE_STEP
            loss_minus, raw_minus = evaluate()
            view[offset] = orig
        if (
            discrete_pattern(raw_plus[0].numpy(), config.clamp, cam) != base
            or discrete_pattern(raw_minus[0].numpy(), config.clamp, cam) != base
        ):
            rejected += 1
            continue
        numeric = (loss_plus.item() - loss_minus.item()) / (2 * BACKBONE_STEP)
        rel, diff = relative_errors(np.array([analytic]), np.array([numeric]))
        worst_rel = max(worst_rel, float(rel[0]))
        worst_abs = max(worst_abs, float(diff[0]))
        checked += 1
    return GradcheckRow("backbone", coords, worst_rel, worst_abs, rejected, tolerance=BACKBONE_REL_TOL)


def run_gradcheck(
    seed: int = 0,
    single_scenes: int = 100,
    multi_scenes: int = 20,
    multi_k: int = 8,
    backbone_coords: int = 100,
    size: int = 16,
) -> list[GradcheckRow]:
    """The full table: single-Gaussian scenes, multi-Gaussian scenes, then the backbone."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    cam = gradcheck_camera(size)
    rows = check_renderer(1, single_scenes, rng, cam)
    rows += check_renderer(multi_k, multi_scenes, rng, cam)
    if backbone_coords:
        rows.append(check_backbone(rng, backbone_coords, seed))
    logger.info(f"gradcheck: {len(rows)} rows in {(time.perf_counter() - t0) * 1000:.0f}ms")
    return rows


def format_table(rows: list[GradcheckRow]) -> str:
    lines = [f"{'check':<16} {'coords':>7} {'max rel':>10} {'max abs':>10} {'rejected':>8}  result"]
    for r in rows:
        lines.append(
            f"{r.name:<16} {r.checked:>7} {r.max_rel_error:>10.2e} {r.max_abs_error:>10.2e} "
            f"{r.rejected:>8}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
