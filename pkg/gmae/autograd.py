"""Bridge between the numpy splatting kernels and torch autograd."""

import numpy as np
import torch
from torch import Tensor

from .camera import CameraConfig
from .gaussians import ScaleClamp
from .renderer import render_backward, render_raw


class _SplatRender(torch.autograd.Function):
    """Renders a batch of raw Gaussian matrices; backward is the analytic kernel."""

    @staticmethod
    def forward(ctx, raw: Tensor, clamp: ScaleClamp, cam: CameraConfig, tiled: bool) -> Tensor:
        raw_np = raw.detach().cpu().to(torch.float64).numpy()
        images = np.stack([render_raw(r, clamp, cam, tiled=tiled).image for r in raw_np])
        ctx.save_for_backward(raw)
        ctx.clamp = clamp
        ctx.cam = cam
        ctx.tiled = tiled
        return torch.from_numpy(images).to(dtype=raw.dtype, device=raw.device)

    @staticmethod
    def backward(ctx, v_images: Tensor):
        (raw,) = ctx.saved_tensors
        raw_np = raw.detach().cpu().to(torch.float64).numpy()
        v_np = v_images.detach().cpu().to(torch.float64).numpy()
        grads = np.stack([
            render_backward(r, ctx.clamp, ctx.cam, v, tiled=ctx.tiled)
            for r, v in zip(raw_np, v_np)
        ])
        return torch.from_numpy(grads).to(dtype=raw.dtype, device=raw.device), None, None, None


def splat(raw: Tensor, clamp: ScaleClamp, cam: CameraConfig, tiled: bool = True) -> Tensor:
    """
    Differentiable render of raw Gaussians.

    Args:
        raw: (B, K, 14) raw decoder outputs
        clamp: scale clamp applied during activation
        cam: fixed camera
        tiled: use the tiled kernels (same result as the naive path)

    Returns:
        (B, H, W, 3) rendered images
    """
    return _SplatRender.apply(raw, clamp, cam, tiled)
