"""Image metrics and the JSON metrics report."""

import math

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import ndimage

from .errors import InvalidInputError


def _same_shape(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """10 log10(1 / MSE) in dB for images in [0, 1]; +inf when identical."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def iou(pred, truth) -> float:
    """Intersection over union of two boolean masks; 1.0 when both are empty."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    union = np.count_nonzero(pred | truth)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & truth) / union


def mask_boundary(mask) -> np.ndarray:
    """Pixels of a binary mask with a 4-neighbor of the other value."""
    mask = np.asarray(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, border_value=1)
    dilated = ndimage.binary_dilation(mask, border_value=0)
    return (mask & ~eroded) | (dilated & ~mask)


def boundary_f1(pred_edges, true_edges, tolerance: float = 2.0) -> float:
    """
    F-measure of boundary pixels matched within ``tolerance`` pixels.

    Precision counts predicted edge pixels lying within the tolerance of a
    true edge pixel; recall counts true edge pixels near a predicted one.
    Two empty edge maps score 1.0.
    """
    pred = np.asarray(pred_edges, dtype=bool)
    true = np.asarray(true_edges, dtype=bool)
    if pred.shape != true.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {true.shape}")
    n_pred, n_true = np.count_nonzero(pred), np.count_nonzero(true)
    if n_pred == 0 and n_true == 0:
        return 1.0
    if n_pred == 0 or n_true == 0:
        return 0.0
    dist_to_true = ndimage.distance_transform_edt(~true)
    dist_to_pred = ndimage.distance_transform_edt(~pred)
    precision = np.count_nonzero(dist_to_true[pred] <= tolerance) / n_pred
    recall = np.count_nonzero(dist_to_pred[true] <= tolerance) / n_true
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


class _Report(BaseModel):
    # PSNR of a perfect reconstruction is +inf; keep it as Infinity in JSON.
    model_config = ConfigDict(ser_json_inf_nan="constants")


class ImageMetrics(_Report):
    name: str
    mse: float
    psnr: float
    iou: float | None = None
    boundary_f1: float | None = None
    split: int | None = None


class MetricsReport(_Report):
    images: list[ImageMetrics]
    mean_mse: float
    mean_psnr: float
    mean_iou: float | None = None
    mean_boundary_f1: float | None = None


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def build_report(images: list[ImageMetrics]) -> MetricsReport:
    return MetricsReport(
        images=images,
        mean_mse=_mean([m.mse for m in images]) or 0.0,
        mean_psnr=_mean([m.psnr for m in images]) or 0.0,
        mean_iou=_mean([m.iou for m in images]),
        mean_boundary_f1=_mean([m.boundary_f1 for m in images]),
    )
