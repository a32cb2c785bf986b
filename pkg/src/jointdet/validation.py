"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_pixel_grid(pixels, name: str = "pixels") -> np.ndarray:
    """Validate an H x W x C float grid with values in [0, 1]."""
    arr = np.asarray(pixels)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be H x W x C, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        raise ValueError(f"{name} must be float, got dtype {arr.dtype}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values outside [0, 1]")
    return arr


def check_boxes_in_image(boxes, height: int, width: int, name: str = "boxes"):
    for i, box in enumerate(boxes):
        if box.x_min < 0 or box.y_min < 0 or box.x_max > width or box.y_max > height:
            raise ValueError(
                f"{name}[{i}] {box.as_tuple()} outside image extent {height}x{width}"
            )


def check_probability(value: float, name: str) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name} must be in [0, 1], got {value}")
    return value
