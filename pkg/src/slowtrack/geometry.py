"""Small shared geometry helpers for rotated-box sampling."""

from __future__ import annotations

import math


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = (theta + math.pi) % (2.0 * math.pi) - math.pi
    if w <= -math.pi:
        w = math.pi
    return w


def snapped_cos_sin(theta: float) -> tuple[float, float]:
    """cos/sin with values within 1e-12 of {-1, 0, 1} snapped exactly.

    Keeps nearest-neighbor sampling stable at exact quarter-turn angles,
    where round-off in sin/cos would otherwise flip floor() results.
    """
    c, s = math.cos(theta), math.sin(theta)
    for target in (-1.0, 0.0, 1.0):
        if abs(c - target) < 1e-12:
            c = target
        if abs(s - target) < 1e-12:
            s = target
    return c, s
