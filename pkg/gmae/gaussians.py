"""Gaussian primitives: parameter activation, rotations and covariances.

A raw decoder output for one Gaussian is a 14-vector laid out as

    u[0:3]   center        p = tanh(u)
    u[3:6]   scale         s = c * sigmoid(u)
    u[6:10]  quaternion    phi = sigmoid(u) / |sigmoid(u)|   (w, x, y, z)
    u[10:13] color         r = sigmoid(u)
    u[13]    opacity       o = sigmoid(u)

Everything here is float64 numpy and batched over a leading K axis. The
``*_backward`` functions are the analytic vector-Jacobian products used by
the renderer's backward pass.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import InvalidInputError

RAW_DIM = 14
CENTER = slice(0, 3)
SCALE = slice(3, 6)
QUAT = slice(6, 10)
COLOR = slice(10, 13)
OPACITY = 13

UNIT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ScaleClamp:
    """Upper bound c on a Gaussian's extent, applied as c * sigmoid(s)."""

    c: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise InvalidInputError(f"scale clamp must be positive, got {self.c}")


@dataclass(frozen=True)
class GaussianSet:
    """K activated Gaussians in normalized scene units."""

    centers: np.ndarray      # (K, 3) in [-1, 1]
    scales: np.ndarray       # (K, 3) in (0, c)
    quaternions: np.ndarray  # (K, 4) unit norm, (w, x, y, z)
    colors: np.ndarray       # (K, 3) in (0, 1)
    opacities: np.ndarray    # (K,) in (0, 1)

    @property
    def count(self) -> int:
        return int(self.centers.shape[0])

    def subset(self, index) -> "GaussianSet":
        """Rows selected by an index array or boolean mask, in that order."""
        return GaussianSet(
            centers=self.centers[index],
            scales=self.scales[index],
            quaternions=self.quaternions[index],
            colors=self.colors[index],
            opacities=self.opacities[index],
        )

    def check(self, clamp: ScaleClamp | None = None) -> None:
        """Raise InvalidInputError if any GaussianSet invariant is violated."""
        norms = np.linalg.norm(self.quaternions, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
            raise InvalidInputError("quaternions must have unit norm")
        if np.any(np.abs(self.centers) > 1.0):
            raise InvalidInputError("centers must lie in [-1, 1]^3")
        if np.any(self.scales <= 0) or (clamp is not None and np.any(self.scales >= clamp.c)):
            raise InvalidInputError("scales must lie in (0, c)")
        for name, values in (("colors", self.colors), ("opacities", self.opacities)):
            if np.any(values <= 0) or np.any(values >= 1):
                raise InvalidInputError(f"{name} must lie in (0, 1)")


def empty_gaussian_set() -> GaussianSet:
    return GaussianSet(
        centers=np.zeros((0, 3)),
        scales=np.zeros((0, 3)),
        quaternions=np.zeros((0, 4)),
        colors=np.zeros((0, 3)),
        opacities=np.zeros(0),
    )


def _check_raw(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != RAW_DIM:
        raise InvalidInputError(f"raw Gaussians must have shape (K, {RAW_DIM}), got {raw.shape}")
    bad = np.argwhere(~np.isfinite(raw))
    if bad.size:
        row, col = bad[0]
        raise InvalidInputError(
            f"non-finite raw Gaussian value {raw[row, col]} at row {row}, column {col}"
        )
    return raw


def activate_parameters(raw: np.ndarray, clamp: ScaleClamp = ScaleClamp()) -> GaussianSet:
    """Map raw (K, 14) decoder outputs to a valid GaussianSet."""
    raw = _check_raw(raw)
    q = expit(raw[:, QUAT])
    return GaussianSet(
        centers=np.tanh(raw[:, CENTER]),
        scales=clamp.c * expit(raw[:, SCALE]),
        quaternions=q / np.linalg.norm(q, axis=1, keepdims=True),
        colors=expit(raw[:, COLOR]),
        opacities=expit(raw[:, OPACITY]),
    )


def activation_backward(
    raw: np.ndarray,
    clamp: ScaleClamp,
    d_centers: np.ndarray,
    d_scales: np.ndarray,
    d_quaternions: np.ndarray,
    d_colors: np.ndarray,
    d_opacities: np.ndarray,
) -> np.ndarray:
    """Chain gradients w.r.t. activated parameters back to the raw (K, 14) matrix."""
    raw = np.asarray(raw, dtype=np.float64)
    grad = np.zeros_like(raw)

    p = np.tanh(raw[:, CENTER])
    grad[:, CENTER] = d_centers * (1.0 - p * p)

    sig = expit(raw[:, SCALE])
    grad[:, SCALE] = d_scales * clamp.c * sig * (1.0 - sig)

    v = expit(raw[:, QUAT])
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    phi = v / norm
    # d(v/|v|)/dv = (I - phi phi^T) / |v|
    dv = (d_quaternions - phi * np.sum(phi * d_quaternions, axis=1, keepdims=True)) / norm
    grad[:, QUAT] = dv * v * (1.0 - v)

    col = expit(raw[:, COLOR])
    grad[:, COLOR] = d_colors * col * (1.0 - col)

    o = expit(raw[:, OPACITY])
    grad[:, OPACITY] = d_opacities * o * (1.0 - o)
    return grad


def _rotation_from_unit(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return R.reshape(*q.shape[:-1], 3, 3)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """
    Rotation matrix of a unit quaternion (w, x, y, z).

    Accepts a single quaternion of shape (4,) or a batch (..., 4). Raises
    InvalidInputError when any norm is off unit by more than 1e-6.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 4:
        raise InvalidInputError(f"quaternion must have 4 components, got shape {q.shape}")
    norms = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
        raise InvalidInputError(f"quaternion is not unit length (norm {np.max(np.abs(norms)):.9g})")
    return _rotation_from_unit(q)


def _rotation_jacobian(q: np.ndarray) -> np.ndarray:
    """dR/dq as a (..., 4, 3, 3) tensor."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    zero = np.zeros_like(w)
    dw = [zero, -z, y, z, zero, -x, -y, x, zero]
    dx = [zero, y, z, y, -2 * x, -w, z, w, -2 * x]
    dy = [-2 * y, x, w, x, zero, z, -w, z, -2 * y]
    dz = [-2 * z, -w, x, w, -2 * z, y, x, y, zero]
    J = 2.0 * np.stack([np.stack(d, axis=-1) for d in (dw, dx, dy, dz)], axis=-2)
    return J.reshape(*q.shape[:-1], 4, 3, 3)


def rotation_backward(q: np.ndarray, d_rotation: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. quaternion components given dL/dR, shapes (K, 4) and (K, 3, 3)."""
    return np.einsum("kaij,kij->ka", _rotation_jacobian(q), d_rotation)


def build_covariance(s: np.ndarray, q: np.ndarray) -> np.ndarray:
    """
    Covariance Sigma = R S S^T R^T with S = diag(s).

    Works on a single Gaussian (s: (3,), q: (4,)) or a batch ((K, 3), (K, 4)).
    """
    s = np.asarray(s, dtype=np.float64)
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise InvalidInputError("scales must be finite and strictly positive")
    M = quaternion_to_rotation(q) * s[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


def covariance_backward(
    s: np.ndarray, q: np.ndarray, d_cov: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    Gradients (dL/ds, dL/dq) of a batch of covariances given dL/dSigma.

    With M = R diag(s) and Sigma = M M^T, dL/dM = (G + G^T) M.
    """
    R = _rotation_from_unit(q)
    M = R * s[:, None, :]
    dM = (d_cov + np.swapaxes(d_cov, -1, -2)) @ M
    d_s = np.sum(dM * R, axis=1)
    d_R = dM * s[:, None, :]
    return d_s, rotation_backward(q, d_R)
