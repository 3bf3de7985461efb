"""Input validation helpers used by the estimators and functional ops."""
from __future__ import annotations

import numpy as np

from .errors import InputError, ShapeError


def as_f32(x, ndim: int, name: str) -> np.ndarray:
    """Coerce `x` to a contiguous float32 array with exactly `ndim` axes."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dimensions, got {arr.ndim}")
    return arr


def as_labels(y, name: str = "labels") -> np.ndarray:
    arr = np.ascontiguousarray(y, dtype=np.int64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got {arr.ndim}-D")
    return arr


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def check_feature_dim(x: np.ndarray, expected: int, name: str = "features") -> None:
    if x.shape[-1] != expected:
        raise ShapeError(
            f"{name} dimension {x.shape[-1]} does not match model dimension {expected}"
        )


def check_labels_in_range(y: np.ndarray, num_classes: int) -> None:
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        bad = int(y.max() if y.max() >= num_classes else y.min())
        raise InputError(f"label {bad} outside [0, {num_classes})")
