"""Tracking evaluation: center location error and overlap rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .patches import read_boxes_csv, write_boxes_csv


@dataclass(frozen=True)
class BoxTrace:
    """Per-frame axis-aligned boxes (x, y, w, h), one per frame."""

    boxes: np.ndarray  # (n, 4)

    def __post_init__(self):
        b = np.asarray(self.boxes, dtype=np.float64)
        if b.ndim != 2 or b.shape[1] != 4 or b.shape[0] == 0:
            raise ValueError(f"boxes must be a nonempty (n, 4) array, got {b.shape}")
        if np.any(b[:, 2:] <= 0):
            raise ValueError("box widths and heights must be positive")
        b.setflags(write=False)
        object.__setattr__(self, "boxes", b)

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def centers(self) -> np.ndarray:
        return self.boxes[:, :2] + self.boxes[:, 2:] / 2.0

    @classmethod
    def from_csv(cls, path) -> "BoxTrace":
        return cls(read_boxes_csv(path))

    def to_csv(self, path) -> None:
        write_boxes_csv(path, self.boxes)


def _check_lengths(pred: BoxTrace, gt: BoxTrace) -> None:
    if len(pred) != len(gt):
        raise DataError(
            f"trace length mismatch: {len(pred)} predictions vs {len(gt)} ground truths"
        )


def center_error(pred: BoxTrace, gt: BoxTrace) -> tuple[np.ndarray, float]:
    """Per-frame Euclidean center distance in pixels, plus the mean."""
    _check_lengths(pred, gt)
    diff = pred.centers() - gt.centers()
    per_frame = np.hypot(diff[:, 0], diff[:, 1])
    return per_frame, float(per_frame.mean())


def overlap_rate(pred: BoxTrace, gt: BoxTrace) -> tuple[np.ndarray, float]:
    """Per-frame intersection-over-union in [0, 1], plus the mean."""
    _check_lengths(pred, gt)
    a, b = pred.boxes, gt.boxes
    x1 = np.maximum(a[:, 0], b[:, 0])
    y1 = np.maximum(a[:, 1], b[:, 1])
    x2 = np.minimum(a[:, 0] + a[:, 2], b[:, 0] + b[:, 2])
    y2 = np.minimum(a[:, 1] + a[:, 3], b[:, 1] + b[:, 3])
    inter = np.maximum(0.0, x2 - x1) * np.maximum(0.0, y2 - y1)
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    # rounding can push the ratio a few ulps outside [0, 1]
    per_frame = np.clip(inter / union, 0.0, 1.0)
    return per_frame, float(per_frame.mean())
