"""Tests for parameter activation, rotations and covariances."""

import math

import numpy as np
import pytest

from gmae.errors import InvalidInputError
from gmae.gaussians import (
    RAW_DIM,
    ScaleClamp,
    _rotation_from_unit,
    activate_parameters,
    activation_backward,
    build_covariance,
    covariance_backward,
    empty_gaussian_set,
    quaternion_to_rotation,
)


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestActivation:
    """Tests for activate_parameters."""

    def test_zero_vector(self):
        """All-zero raw vector activates to the midpoint of every range."""
        g = activate_parameters(np.zeros((1, RAW_DIM)), ScaleClamp(1.0))
        np.testing.assert_array_equal(g.centers, [[0.0, 0.0, 0.0]])
        np.testing.assert_array_equal(g.scales, [[0.5, 0.5, 0.5]])
        np.testing.assert_allclose(g.quaternions, [[0.5, 0.5, 0.5, 0.5]], atol=1e-15)
        np.testing.assert_array_equal(g.colors, [[0.5, 0.5, 0.5]])
        np.testing.assert_array_equal(g.opacities, [0.5])

    def test_scale_saturates_at_clamp(self):
        """Large raw scales approach c from below."""
        raw = np.zeros((1, RAW_DIM))
        raw[0, 3:6] = 40.0
        g = activate_parameters(raw, ScaleClamp(2.0))
        assert np.all(g.scales <= 2.0)
        np.testing.assert_allclose(g.scales, 2.0, atol=1e-12)

    def test_matches_scalar_reference(self, rng):
        """Vectorized activation agrees with a per-element scalar reference."""
        raw = rng.normal(0, 2, size=(20, RAW_DIM))
        g = activate_parameters(raw, ScaleClamp(1.0))
        for k in range(20):
            u = raw[k]
            np.testing.assert_allclose(g.centers[k], [math.tanh(x) for x in u[0:3]], atol=1e-12)
            np.testing.assert_allclose(g.scales[k], [sigmoid(x) for x in u[3:6]], atol=1e-12)
            q = [sigmoid(x) for x in u[6:10]]
            norm = math.sqrt(sum(v * v for v in q))
            np.testing.assert_allclose(g.quaternions[k], [v / norm for v in q], atol=1e-12)
            np.testing.assert_allclose(g.colors[k], [sigmoid(x) for x in u[10:13]], atol=1e-12)
            assert abs(g.opacities[k] - sigmoid(u[13])) <= 1e-12

    def test_invariants_hold(self, rng):
        """Activated sets satisfy every GaussianSet invariant."""
        clamp = ScaleClamp(1.0)
        activate_parameters(rng.normal(0, 3, size=(50, RAW_DIM)), clamp).check(clamp)

    def test_monotone_per_coordinate(self, rng):
        """Increasing a raw center, scale, color or opacity coordinate never decreases its output."""
        raw = rng.normal(size=(1, RAW_DIM))
        bumped = raw.copy()
        bumped[0, [0, 3, 10, 13]] += 0.5
        a, b = activate_parameters(raw), activate_parameters(bumped)
        assert b.centers[0, 0] > a.centers[0, 0]
        assert b.scales[0, 0] > a.scales[0, 0]
        assert b.colors[0, 0] > a.colors[0, 0]
        assert b.opacities[0] > a.opacities[0]

    def test_non_finite_names_location(self):
        """Non-finite input is rejected with its row and column."""
        raw = np.zeros((4, RAW_DIM))
        raw[2, 5] = np.nan
        with pytest.raises(InvalidInputError, match="row 2, column 5"):
            activate_parameters(raw)

    def test_wrong_width_rejected(self):
        """Raw vectors must have 14 entries."""
        with pytest.raises(InvalidInputError):
            activate_parameters(np.zeros((3, 13)))

    def test_empty_input(self):
        """K = 0 activates to an empty set."""
        g = activate_parameters(np.zeros((0, RAW_DIM)))
        assert g.count == 0
        assert empty_gaussian_set().count == 0

    def test_invalid_clamp(self):
        """Scale clamp must be positive."""
        with pytest.raises(InvalidInputError):
            ScaleClamp(0.0)

    def test_backward_matches_finite_differences(self, rng):
        """activation_backward is the VJP of activate_parameters."""
        clamp = ScaleClamp(1.5)
        raw = rng.normal(size=(3, RAW_DIM))
        up = [rng.normal(size=s) for s in ((3, 3), (3, 3), (3, 4), (3, 3), (3,))]

        def loss(r):
            g = activate_parameters(r, clamp)
            parts = (g.centers, g.scales, g.quaternions, g.colors, g.opacities)
            return sum(float(np.sum(u * p)) for u, p in zip(up, parts))

        analytic = activation_backward(raw, clamp, *up)
        h = 1e-6
        for idx in np.ndindex(raw.shape):
            plus, minus = raw.copy(), raw.copy()
            plus[idx] += h
            minus[idx] -= h
            numeric = (loss(plus) - loss(minus)) / (2 * h)
            assert abs(numeric - analytic[idx]) <= 1e-7


class TestQuaternionToRotation:
    """Tests for quaternion_to_rotation."""

    def test_identity(self):
        """(1, 0, 0, 0) is the identity rotation."""
        np.testing.assert_array_equal(quaternion_to_rotation([1.0, 0.0, 0.0, 0.0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        """(sqrt(1/2), 0, 0, sqrt(1/2)) maps the x axis onto the y axis."""
        R = quaternion_to_rotation([math.sqrt(0.5), 0.0, 0.0, math.sqrt(0.5)])
        np.testing.assert_allclose(R @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-9)

    def test_random_rotations_orthogonal(self, rng):
        """R^T R = I and det R = +1 for random unit quaternions."""
        q = rng.normal(size=(100, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        R = quaternion_to_rotation(q)
        eye = np.broadcast_to(np.eye(3), R.shape)
        np.testing.assert_allclose(np.swapaxes(R, 1, 2) @ R, eye, atol=1e-9)
        np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-9)

    def test_non_unit_rejected(self):
        """Quaternions off unit length beyond 1e-6 are rejected."""
        with pytest.raises(InvalidInputError):
            quaternion_to_rotation([1.0, 0.1, 0.0, 0.0])


class TestBuildCovariance:
    """Tests for build_covariance."""

    def test_isotropic_is_identity(self, rng):
        """Unit scales give the identity whatever the rotation."""
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        np.testing.assert_allclose(build_covariance(np.ones(3), q), np.eye(3), atol=1e-12)

    def test_diagonal_case(self):
        """s = (2, 1, 1) without rotation gives diag(4, 1, 1)."""
        np.testing.assert_allclose(build_covariance([2.0, 1.0, 1.0], [1.0, 0, 0, 0]), np.diag([4.0, 1.0, 1.0]))

    def test_eigenvalues_are_squared_scales(self, rng):
        """Eigenvalues of Sigma equal the sorted squared scales."""
        for _ in range(50):
            s = rng.uniform(0.1, 2.0, size=3)
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            cov = build_covariance(s, q)
            np.testing.assert_allclose(cov, cov.T, atol=1e-12)
            np.testing.assert_allclose(np.linalg.eigvalsh(cov), np.sort(s**2), atol=1e-9)

    def test_double_cover(self, rng):
        """q and -q give bit-identical covariances."""
        s = rng.uniform(0.1, 1.0, size=(10, 3))
        q = rng.normal(size=(10, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        np.testing.assert_array_equal(build_covariance(s, q), build_covariance(s, -q))

    def test_positive_definite(self, rng):
        """x^T Sigma x > 0 for random nonzero x."""
        q = rng.normal(size=4)
        cov = build_covariance(rng.uniform(0.01, 1.0, size=3), q / np.linalg.norm(q))
        x = rng.normal(size=(100, 3))
        assert np.all(np.einsum("ni,ij,nj->n", x, cov, x) > 0)

    @pytest.mark.parametrize("s", [[0.0, 1.0, 1.0], [1.0, -0.5, 1.0]])
    def test_non_positive_scale_rejected(self, s):
        """Zero or negative scales are rejected."""
        with pytest.raises(InvalidInputError):
            build_covariance(s, [1.0, 0.0, 0.0, 0.0])

    def test_backward_matches_finite_differences(self, rng):
        """covariance_backward is the VJP of R diag(s)^2 R^T in (s, q)."""
        s = rng.uniform(0.2, 1.0, size=(2, 3))
        q = rng.normal(size=(2, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        G = rng.normal(size=(2, 3, 3))

        def loss(s_, q_):
            M = _rotation_from_unit(q_) * s_[:, None, :]
            return float(np.sum(G * (M @ np.swapaxes(M, 1, 2))))

        d_s, d_q = covariance_backward(s, q, G)
        h = 1e-6
        for arr, grad in ((s, d_s), (q, d_q)):
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + h
                up = loss(s, q)
                arr[idx] = orig - h
                down = loss(s, q)
                arr[idx] = orig
                assert abs((up - down) / (2 * h) - grad[idx]) <= 1e-7
