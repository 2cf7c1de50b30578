"""Patch grids and random patch masks."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class PatchGrid:
    """Square patches of side ``patch_size`` tiling an H x W image row-major."""

    height: int
    width: int
    patch_size: int

    def __post_init__(self):
        p = self.patch_size
        if p < 1 or self.height % p or self.width % p:
            raise InvalidInputError(
                f"patch size {p} must divide image size {self.height}x{self.width}"
            )

    @property
    def rows(self) -> int:
        return self.height // self.patch_size

    @property
    def cols(self) -> int:
        return self.width // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    @property
    def token_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    def pixel_range(self, index: int) -> tuple[slice, slice]:
        """(row slice, column slice) covered by token ``index``."""
        r, c = divmod(index, self.cols)
        p = self.patch_size
        return slice(r * p, (r + 1) * p), slice(c * p, (c + 1) * p)

    def pixel_mask(self, patch_indices) -> np.ndarray:
        """(H, W) boolean mask of the pixels belonging to the given patches."""
        on = np.zeros(self.num_patches, dtype=bool)
        on[np.asarray(patch_indices, dtype=np.int64)] = True
        grid = on.reshape(self.rows, self.cols)
        p = self.patch_size
        return np.repeat(np.repeat(grid, p, axis=0), p, axis=1)


def patchify(image, grid: PatchGrid):
    """
    (..., H, W, 3) image(s) to (..., N, P*P*3) tokens, row-major patch order.

    Works on numpy arrays and torch tensors alike.
    """
    *lead, h, w, ch = image.shape
    if (h, w, ch) != (grid.height, grid.width, 3):
        raise InvalidInputError(f"image shape {(h, w, ch)} does not match grid {grid.height}x{grid.width}x3")
    p = grid.patch_size
    x = image.reshape(*lead, grid.rows, p, grid.cols, p, 3)
    x = x.swapaxes(-4, -3)
    return x.reshape(*lead, grid.num_patches, grid.token_dim)


def unpatchify(tokens, grid: PatchGrid):
    """Inverse of patchify."""
    *lead, n, dim = tokens.shape
    if (n, dim) != (grid.num_patches, grid.token_dim):
        raise InvalidInputError(f"token shape {(n, dim)} does not match grid {(grid.num_patches, grid.token_dim)}")
    p = grid.patch_size
    x = tokens.reshape(*lead, grid.rows, grid.cols, p, p, 3)
    x = x.swapaxes(-4, -3)
    return x.reshape(*lead, grid.height, grid.width, 3)


@dataclass(frozen=True)
class MaskSpec:
    ratio: float
    visible: np.ndarray  # sorted ascending
    masked: np.ndarray   # sorted ascending
    seed: int

    @property
    def num_patches(self) -> int:
        return len(self.visible) + len(self.masked)


def num_visible(num_patches: int, ratio: float) -> int:
    """n = N - round(r * N)."""
    return num_patches - int(round(ratio * num_patches))


def sample_mask(num_patches: int, ratio: float, seed: int) -> MaskSpec:
    """Uniform random patch mask, deterministic in ``seed``."""
    if not 0.0 < ratio < 1.0:
        raise InvalidInputError(f"masking ratio must lie in (0, 1), got {ratio}")
    if num_patches < 2:
        raise InvalidInputError(f"need at least 2 patches to mask, got {num_patches}")
    n = num_visible(num_patches, ratio)
    if n <= 0 or n >= num_patches:
        raise InvalidInputError(
            f"masking ratio {ratio} leaves {n} of {num_patches} patches visible"
        )
    rng = np.random.default_rng(seed)
    visible = np.sort(rng.choice(num_patches, size=n, replace=False))
    masked = np.setdiff1d(np.arange(num_patches), visible)
    return MaskSpec(ratio=ratio, visible=visible, masked=masked, seed=seed)


def full_visibility_mask(num_patches: int) -> MaskSpec:
    """Mask with every patch visible (reconstruction at mask ratio 0)."""
    return MaskSpec(
        ratio=0.0,
        visible=np.arange(num_patches),
        masked=np.zeros(0, dtype=np.int64),
        seed=0,
    )


def make_mask(num_patches: int, ratio: float, seed: int) -> MaskSpec:
    """sample_mask, or full visibility when ratio is 0."""
    if ratio == 0.0:
        return full_visibility_mask(num_patches)
    return sample_mask(num_patches, ratio, seed)
