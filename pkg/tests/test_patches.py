"""Tests for patch grids and masks."""

import numpy as np
import pytest

from gmae.errors import InvalidInputError
from gmae.patches import (
    PatchGrid,
    full_visibility_mask,
    make_mask,
    num_visible,
    patchify,
    sample_mask,
    unpatchify,
)


class TestPatchGrid:
    """Tests for PatchGrid."""

    def test_desk_grid(self):
        grid = PatchGrid(64, 64, 8)
        assert (grid.rows, grid.cols, grid.num_patches, grid.token_dim) == (8, 8, 64, 192)

    def test_indivisible_rejected(self):
        """Patch size must divide the image."""
        with pytest.raises(InvalidInputError):
            PatchGrid(64, 64, 7)

    def test_pixel_range_row_major(self):
        """Token 9 of an 8x8 grid is the second patch of the second row."""
        rows, cols = PatchGrid(64, 64, 8).pixel_range(9)
        assert (rows, cols) == (slice(8, 16), slice(8, 16))

    def test_pixel_mask(self):
        mask = PatchGrid(4, 4, 2).pixel_mask([1, 2])
        expected = np.array([
            [0, 0, 1, 1],
            [0, 0, 1, 1],
            [1, 1, 0, 0],
            [1, 1, 0, 0],
        ], dtype=bool)
        np.testing.assert_array_equal(mask, expected)


class TestPatchify:
    """Tests for patchify and unpatchify."""

    def test_shape(self, rng):
        """64x64x3 with P = 8 gives a 64x192 token matrix."""
        assert patchify(rng.uniform(size=(64, 64, 3)), PatchGrid(64, 64, 8)).shape == (64, 192)

    def test_constant_image(self):
        """A constant image gives constant token rows."""
        tokens = patchify(np.full((16, 16, 3), 0.3), PatchGrid(16, 16, 4))
        np.testing.assert_array_equal(tokens, 0.3)

    def test_token_contents(self, rng):
        """Token i holds its patch's pixels in row-major, channel-last order."""
        grid = PatchGrid(16, 16, 4)
        image = rng.uniform(size=(16, 16, 3))
        tokens = patchify(image, grid)
        for i in (0, 5, 15):
            rows, cols = grid.pixel_range(i)
            np.testing.assert_array_equal(tokens[i], image[rows, cols].reshape(-1))

    def test_round_trip_batched(self, rng):
        """unpatchify(patchify(x)) is bit-exact, with leading batch axes."""
        grid = PatchGrid(16, 8, 4)
        images = rng.uniform(size=(3, 16, 8, 3))
        np.testing.assert_array_equal(unpatchify(patchify(images, grid), grid), images)

    def test_size_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            patchify(rng.uniform(size=(32, 32, 3)), PatchGrid(64, 64, 8))
        with pytest.raises(InvalidInputError):
            unpatchify(np.zeros((10, 192)), PatchGrid(64, 64, 8))


class TestSampleMask:
    """Tests for sample_mask."""

    @pytest.mark.parametrize("ratio,visible", [(0.70, 19), (0.75, 16), (0.80, 13)])
    def test_visible_counts(self, ratio, visible):
        """n = N - round(r N) for N = 64."""
        assert num_visible(64, ratio) == visible
        mask = sample_mask(64, ratio, seed=0)
        assert len(mask.visible) == visible
        assert len(mask.masked) == 64 - visible

    def test_partition(self):
        """Visible and masked are sorted, disjoint and cover every patch."""
        mask = sample_mask(64, 0.75, seed=3)
        assert np.all(np.diff(mask.visible) > 0)
        assert np.all(np.diff(mask.masked) > 0)
        np.testing.assert_array_equal(np.union1d(mask.visible, mask.masked), np.arange(64))
        assert mask.num_patches == 64

    def test_deterministic(self):
        a, b = sample_mask(64, 0.75, seed=11), sample_mask(64, 0.75, seed=11)
        np.testing.assert_array_equal(a.visible, b.visible)
        assert not np.array_equal(a.visible, sample_mask(64, 0.75, seed=12).visible)

    def test_uniform_frequency(self):
        """Over 10^4 seeds every patch is visible about a quarter of the time."""
        counts = np.zeros(64)
        for seed in range(10_000):
            counts[sample_mask(64, 0.75, seed).visible] += 1
        np.testing.assert_allclose(counts / 10_000, 0.25, atol=0.02)

    @pytest.mark.parametrize("n,ratio", [(64, 0.0), (64, 1.0), (64, 0.999), (64, 0.001), (1, 0.5)])
    def test_degenerate_rejected(self, n, ratio):
        """Ratios leaving no visible or no masked patch are rejected."""
        with pytest.raises(InvalidInputError):
            sample_mask(n, ratio, seed=0)

    def test_full_visibility(self):
        """Ratio 0 gives every patch visible through make_mask."""
        mask = make_mask(16, 0.0, seed=5)
        np.testing.assert_array_equal(mask.visible, np.arange(16))
        assert len(mask.masked) == 0
        np.testing.assert_array_equal(full_visibility_mask(16).visible, mask.visible)
