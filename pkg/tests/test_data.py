"""Tests for datasets, batching, augmentation and the shape corpus."""

import numpy as np
import pytest

from gmae.data import (
    Augmenter,
    iterate_batches,
    list_images,
    load_image_folder,
    random_resized_crop,
    steps_per_epoch,
)
from gmae.errors import InvalidInputError
from gmae.imageio import save_image
from gmae.shapes import make_shape_corpus, shape_image


class TestBatching:
    """Tests for iterate_batches and steps_per_epoch."""

    def test_covers_every_item_once(self, rng):
        batches = list(iterate_batches(10, 4, rng))
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches).tolist()) == list(range(10))

    def test_steps_per_epoch(self):
        assert steps_per_epoch(10, 4) == 3
        assert steps_per_epoch(8, 4) == 2
        assert steps_per_epoch(1, 64) == 1

    def test_seeded(self):
        a = list(iterate_batches(20, 5, np.random.default_rng(7)))
        b = list(iterate_batches(20, 5, np.random.default_rng(7)))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestAugmenter:
    """Tests for crops, flips and RandAugment."""

    def test_crop_keeps_shape_and_range(self, rng):
        image = rng.uniform(size=(32, 32, 3))
        out = random_resized_crop(image, rng)
        assert out.shape == (32, 32, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_constant_image_unchanged_by_crop(self, rng):
        """Cropping and resizing a flat image leaves it flat."""
        out = random_resized_crop(np.full((16, 16, 3), 0.4), rng)
        np.testing.assert_allclose(out, 0.4, atol=1e-12)

    def test_flip_only(self):
        """With crop off, output is the input or its mirror."""
        image = np.random.default_rng(0).uniform(size=(8, 8, 3))
        aug = Augmenter(crop=False, flip=True)
        rng = np.random.default_rng(1)
        seen = set()
        for _ in range(20):
            out = aug(image, rng)
            if np.array_equal(out, image):
                seen.add("same")
            else:
                np.testing.assert_array_equal(out, image[:, ::-1])
                seen.add("flipped")
        assert seen == {"same", "flipped"}

    def test_identity_when_disabled(self, rng):
        image = rng.uniform(size=(8, 8, 3))
        np.testing.assert_array_equal(Augmenter(crop=False, flip=False)(image, rng), image)

    def test_reproducible(self):
        """Same generator seed, same augmented image, RandAugment included."""
        image = np.random.default_rng(0).uniform(size=(32, 32, 3))
        aug = Augmenter(crop=True, flip=True, randaug=True)
        a = aug(image, np.random.default_rng(5))
        b = aug(image, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)
        assert a.shape == (32, 32, 3)


class TestImageFolder:
    """Tests for list_images and load_image_folder."""

    def test_load_folder(self, tmp_path, rng):
        for name in ("b.png", "a.png"):
            save_image(tmp_path / name, rng.uniform(size=(8, 8, 3)))
        (tmp_path / "notes.txt").write_text("not an image")
        assert [p.name for p in list_images(tmp_path)] == ["a.png", "b.png"]
        assert load_image_folder(tmp_path, 16).shape == (2, 16, 16, 3)

    def test_single_file(self, tmp_path, rng):
        save_image(tmp_path / "one.png", rng.uniform(size=(8, 8, 3)))
        assert list_images(tmp_path / "one.png") == [tmp_path / "one.png"]

    def test_missing_or_empty(self, tmp_path):
        with pytest.raises(InvalidInputError):
            list_images(tmp_path / "nope")
        with pytest.raises(InvalidInputError):
            list_images(tmp_path)


class TestShapes:
    """Tests for the procedural shape corpus."""

    def test_corpus_shapes(self):
        corpus = make_shape_corpus(5, size=32, seed=0)
        assert len(corpus) == 5
        assert corpus.images.shape == (5, 32, 32, 3)
        assert corpus.masks.shape == (5, 32, 32)
        assert corpus.masks.dtype == bool
        assert corpus.images.min() >= 0.0 and corpus.images.max() <= 1.0

    def test_reproducible(self):
        a, b = make_shape_corpus(3, size=32, seed=4), make_shape_corpus(3, size=32, seed=4)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.masks, b.masks)

    def test_foreground_present(self):
        """Every image has some foreground and some background."""
        corpus = make_shape_corpus(20, size=64, seed=1)
        for mask in corpus.masks:
            assert 0 < mask.sum() < mask.size

    def test_empty_corpus(self):
        assert make_shape_corpus(0, size=16).images.shape == (0, 16, 16, 3)

    def test_single_image(self, rng):
        image, mask = shape_image(rng, size=24, max_shapes=1)
        assert image.shape == (24, 24, 3)
        assert mask.shape == (24, 24)
