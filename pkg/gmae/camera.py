"""Fixed orthographic camera: projection of Gaussians to screen space."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .gaussians import GaussianSet, build_covariance, covariance_backward

# Screen covariances worse conditioned than this (after dilation) are skipped.
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class CameraConfig:
    """
    Orthographic camera looking along +z.

    Scene x/y in [-1, 1] map affinely onto pixel coordinates [0, W) x [0, H);
    pixel (i, j) samples the point (x=j, y=i). Scene z in [-1, 1] maps onto
    depth [z_near, z_far] and only decides compositing order.
    """

    height: int = 64
    width: int = 64
    z_near: float = 0.1
    z_far: float = 2.1
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dilation: float = 0.3
    cutoff: float = 3.0
    tile_size: int = 16

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InvalidInputError(f"image size must be at least 1x1, got {self.height}x{self.width}")
        if not self.z_near < self.z_far:
            raise InvalidInputError(f"z_near ({self.z_near}) must be below z_far ({self.z_far})")
        if self.dilation < 0:
            raise InvalidInputError(f"dilation must be non-negative, got {self.dilation}")
        if self.cutoff <= 0:
            raise InvalidInputError(f"cutoff must be positive, got {self.cutoff}")
        if self.tile_size < 1:
            raise InvalidInputError(f"tile_size must be positive, got {self.tile_size}")
        if len(self.background) != 3 or any(not 0.0 <= b <= 1.0 for b in self.background):
            raise InvalidInputError(f"background must be an RGB triple in [0, 1], got {self.background}")

    @property
    def pixel_scale(self) -> np.ndarray:
        """Pixels per scene unit along (x, y)."""
        return np.array([self.width / 2.0, self.height / 2.0])

    @property
    def background_array(self) -> np.ndarray:
        return np.asarray(self.background, dtype=np.float64)

    def pixel_grid(self) -> np.ndarray:
        """(H*W, 2) pixel sample coordinates (x, y), row-major."""
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


@dataclass(frozen=True)
class ScreenGaussianSet:
    means2d: np.ndarray    # (K, 2) pixels
    cov2d: np.ndarray      # (K, 2, 2) pixels^2, dilated
    inv_cov2d: np.ndarray  # (K, 2, 2)
    depth: np.ndarray      # (K,)
    order: np.ndarray      # (K,) front-to-back permutation
    valid: np.ndarray = field(default=None)  # (K,) False for skipped degenerate Gaussians

    @property
    def count(self) -> int:
        return int(self.means2d.shape[0])

    @property
    def num_degenerate(self) -> int:
        return int(np.count_nonzero(~self.valid))


def depth_sort(depth: np.ndarray) -> np.ndarray:
    """Stable ascending order of depths; ties keep index order."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~np.isfinite(depth)):
        raise InvalidInputError("depths must be finite")
    return np.argsort(depth, kind="stable")


def project(g: GaussianSet, cam: CameraConfig) -> ScreenGaussianSet:
    """Project Gaussians orthographically onto the image plane."""
    scale = cam.pixel_scale
    means2d = (g.centers[:, :2] + 1.0) * scale
    depth = cam.z_near + (g.centers[:, 2] + 1.0) * 0.5 * (cam.z_far - cam.z_near)

    if g.count:
        sigma = build_covariance(g.scales, g.quaternions)
    else:
        sigma = np.zeros((0, 3, 3))
    cov2d = sigma[:, :2, :2] * np.outer(scale, scale) + cam.dilation * np.eye(2)

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    # Eigenvalues of a symmetric 2x2 matrix in closed form.
    half_trace = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(half_trace**2 - det, 0.0))
    lo, hi = half_trace - disc, half_trace + disc
    valid = (lo > 0) & (hi <= MAX_CONDITION * lo)

    safe_det = np.where(valid, det, 1.0)
    inv = np.empty_like(cov2d)
    inv[:, 0, 0] = c / safe_det
    inv[:, 1, 1] = a / safe_det
    inv[:, 0, 1] = inv[:, 1, 0] = -b / safe_det
    inv[~valid] = 0.0

    return ScreenGaussianSet(
        means2d=means2d,
        cov2d=cov2d,
        inv_cov2d=inv,
        depth=depth,
        order=depth_sort(depth),
        valid=valid,
    )


def project_backward(
    g: GaussianSet,
    sg: ScreenGaussianSet,
    cam: CameraConfig,
    d_means2d: np.ndarray,
    d_inv_cov2d: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Chain screen-space gradients to (dL/dcenters, dL/dscales, dL/dquaternions).

    Depth only fixes the compositing order, which is piecewise constant, so
    the z-center gradient is zero.
    """
    scale = cam.pixel_scale
    d_centers = np.zeros_like(g.centers)
    d_centers[:, :2] = d_means2d * scale

    # d(A^-1) = -A^-1 dA A^-1  =>  dL/dA = -A^-T G A^-T for symmetric A.
    inv = sg.inv_cov2d
    d_cov2d = -inv @ d_inv_cov2d @ inv
    d_sigma = np.zeros((g.count, 3, 3))
    d_sigma[:, :2, :2] = d_cov2d * np.outer(scale, scale)
    d_sigma[~sg.valid] = 0.0

    if g.count:
        d_scales, d_quats = covariance_backward(g.scales, g.quaternions, d_sigma)
    else:
        d_scales, d_quats = np.zeros((0, 3)), np.zeros((0, 4))
    return d_centers, d_scales, d_quats
