"""Reading and writing raster images."""

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageLoadError, InvalidInputError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}


def load_image(path, height: int, width: int) -> np.ndarray:
    """
    Decode an image file to an (H, W, 3) float64 array in [0, 1].

    Images not already at the target size are resized bilinearly.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if img.size != (width, height):
                img = img.resize((width, height), Image.Resampling.BILINEAR)
            data = np.asarray(img, dtype=np.float64)
    except FileNotFoundError:
        raise ImageLoadError(path, "no such file") from None
    except UnidentifiedImageError:
        raise ImageLoadError(path, "unsupported or corrupt image format") from None
    except OSError as e:
        raise ImageLoadError(path, str(e)) from None
    return data / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) image in [0, 1] as 8-bit RGB."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError(f"expected an (H, W, 3) image, got shape {image.shape}")
    Image.fromarray(to_uint8(image)).save(path)


def save_side_by_side(path, images: list[np.ndarray], gap: int = 2) -> None:
    """Write images left to right with a white gap between them."""
    h = images[0].shape[0]
    spacer = np.ones((h, gap, 3))
    parts = []
    for i, img in enumerate(images):
        if i:
            parts.append(spacer)
        parts.append(img)
    save_image(path, np.concatenate(parts, axis=1))


def save_index_map(path, index: np.ndarray) -> None:
    """16-bit grayscale; stored value is layer index + 1, so 0 means unassigned."""
    index = np.asarray(index)
    if index.min(initial=0) < -1 or index.max(initial=0) > 65534:
        raise InvalidInputError("layer indices must lie in [-1, 65534]")
    Image.fromarray((index + 1).astype(np.uint16)).save(path)


def load_index_map(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.int64) - 1


def save_binary(path, mask: np.ndarray) -> None:
    """1-bit image."""
    Image.fromarray(np.asarray(mask, dtype=bool)).save(path)


def save_mask(path, mask: np.ndarray) -> None:
    """8-bit image, 255 for True."""
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255).save(path)


def load_mask(path, height: int | None = None, width: int | None = None) -> np.ndarray:
    """Binary mask from any image; pixels brighter than mid-gray are True."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img = img.convert("L")
            if height is not None and img.size != (width, height):
                img = img.resize((width, height), Image.Resampling.NEAREST)
            return np.asarray(img) > 127
    except (OSError, UnidentifiedImageError) as e:
        raise ImageLoadError(path, str(e)) from None
