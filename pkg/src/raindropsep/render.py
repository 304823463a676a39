"""Mask heatmaps: a linear black -> red -> yellow ramp over [0, 1]."""
from __future__ import annotations

import numpy as np


def heatmap(mask) -> np.ndarray:
    """Map a ``1 x H x W`` (or ``H x W``) mask to a ``3 x H x W`` RGB image.

    0 is black, 0.5 pure red, 1 yellow; the redder a pixel, the more
    raindrop it holds.
    """
    v = np.clip(np.asarray(mask, dtype=np.float32), 0.0, 1.0)
    if v.ndim == 3:
        v = v[0]
    red = np.clip(2 * v, 0.0, 1.0)
    green = np.clip(2 * v - 1, 0.0, 1.0)
    return np.stack([red, green, np.zeros_like(v)])


def colorbar(height: int = 256, width: int = 24) -> np.ndarray:
    """Vertical ramp legend, 1 at the top."""
    ramp = np.linspace(1.0, 0.0, height, dtype=np.float32)[:, None]
    return heatmap(np.repeat(ramp, width, axis=1))
