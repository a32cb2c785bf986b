"""Axis-aligned bounding boxes in pixel coordinates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class BoundingBox:
    """Rectangle (x_min, y_min, x_max, y_max) with an optional prediction score.

    Coordinates are in the image frame, x to the right, y downward.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    score: Optional[float] = None

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def clamped(self, height: float, width: float) -> "BoundingBox":
        """Clip to the image extent; raises if nothing remains."""
        return BoundingBox(
            x_min=max(0.0, min(self.x_min, width)),
            y_min=max(0.0, min(self.y_min, height)),
            x_max=max(0.0, min(self.x_max, width)),
            y_max=max(0.0, min(self.y_max, height)),
            score=self.score,
        )

    def as_tuple(self) -> tuple:
        return (self.x_min, self.y_min, self.x_max, self.y_max)
