"""Image datasets, batching and augmentation for pre-training."""

import logging
import random
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import InvalidInputError
from .imageio import IMAGE_SUFFIXES, load_image

logger = logging.getLogger("gmae.data")

# Random resized crop range used by MAE pre-training.
CROP_SCALE = (0.2, 1.0)
CROP_RATIO = (3.0 / 4.0, 4.0 / 3.0)


def list_images(path) -> list[Path]:
    """``path`` itself if it is a file, else the image files in it sorted by name."""
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise InvalidInputError(f"no such file or directory: '{path}'")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise InvalidInputError(f"no images found in '{path}'")
    return files


def load_image_folder(path, size: int) -> np.ndarray:
    """All images under ``path``, as an (M, size, size, 3) array."""
    files = list_images(path)
    logger.info(f"loading {len(files)} images from {path}")
    return np.stack([load_image(f, size, size) for f in files])


def iterate_batches(num_items: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches covering every item once; the last may be short."""
    perm = rng.permutation(num_items)
    for start in range(0, num_items, batch_size):
        yield perm[start:start + batch_size]


def steps_per_epoch(num_items: int, batch_size: int) -> int:
    return -(-num_items // batch_size)


def random_resized_crop(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Crop a random area/aspect window and resize it back (bilinear)."""
    h, w, _ = image.shape
    area = h * w
    for _ in range(10):
        target = area * rng.uniform(*CROP_SCALE)
        log_ratio = np.log(CROP_RATIO)
        ratio = np.exp(rng.uniform(*log_ratio))
        cw = int(round(np.sqrt(target * ratio)))
        ch = int(round(np.sqrt(target / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            y0 = int(rng.integers(0, h - ch + 1))
            x0 = int(rng.integers(0, w - cw + 1))
            break
    else:
        ch, cw, y0, x0 = h, w, 0, 0
    crop = torch.from_numpy(np.ascontiguousarray(image[y0:y0 + ch, x0:x0 + cw])).permute(2, 0, 1)[None]
    out = F.interpolate(crop, size=(h, w), mode="bilinear", align_corners=False)
    return out[0].permute(1, 2, 0).numpy().clip(0.0, 1.0)


class Augmenter:
    """
    Random resized crop and horizontal flip, plus optional RandAugment.

    RandAugment is timm's "rand-m9-mstd0.5" policy on 8-bit PIL images. It
    draws from Python's ``random`` module and numpy's global generator; both
    are reseeded from the augmenter's generator for each image so runs stay
    reproducible.
    """

    def __init__(self, crop: bool = True, flip: bool = True, randaug: bool = False):
        self.crop = crop
        self.flip = flip
        self.randaug = None
        if randaug:
            from timm.data.auto_augment import rand_augment_transform

            self.randaug = rand_augment_transform("rand-m9-mstd0.5", {"img_mean": (124, 116, 104)})

    def __call__(self, image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.randaug is not None:
            seed = int(rng.integers(2**32))
            random.seed(seed)
            np.random.seed(seed)
            pil = Image.fromarray(np.round(image * 255.0).astype(np.uint8))
            image = np.asarray(self.randaug(pil), dtype=np.float64) / 255.0
        if self.crop:
            image = random_resized_crop(image, rng)
        if self.flip and rng.random() < 0.5:
            image = image[:, ::-1]
        return np.ascontiguousarray(image)
