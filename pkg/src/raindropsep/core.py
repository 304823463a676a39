"""Image/mask value types and the linear layer-composition law.

A rainy image ``I`` is modelled as a per-pixel convex blend of a clean
background ``B`` and a raindrop layer ``R``::

    I = (1 - alpha) * B + alpha * R

where ``alpha`` is a single-channel transparency mask shared by every colour
channel. All arrays are ``C x H x W`` with values in ``[0, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ImageTensor",
    "TransparencyMask",
    "DecompositionTriple",
    "blend",
    "unwrap",
    "compose",
    "residual",
]


def _as_unit_array(data, name: str) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be 3-D (C, H, W), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ValueError(f"{name} has empty spatial dims {arr.shape[1:]}")
    return np.clip(arr, 0.0, 1.0)


@dataclass(frozen=True)
class ImageTensor:
    """A ``C x H x W`` float32 image clamped to ``[0, 1]`` (C is 1 or 3)."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_unit_array(self.data, "image")
        if arr.shape[0] not in (1, 3):
            raise ValueError(f"image must have 1 or 3 channels, got {arr.shape[0]}")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.data.shape[1:]


@dataclass(frozen=True)
class TransparencyMask:
    """A ``1 x H x W`` float32 mask clamped to ``[0, 1]``."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_unit_array(self.data, "mask")
        if arr.shape[0] != 1:
            raise ValueError(f"mask must have exactly 1 channel, got {arr.shape[0]}")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def spatial(self) -> tuple[int, int]:
        return self.data.shape[1:]


@dataclass(frozen=True)
class DecompositionTriple:
    background: ImageTensor
    raindrop: ImageTensor
    mask: TransparencyMask

    def __post_init__(self):
        b, r, m = self.background, self.raindrop, self.mask
        if b.shape != r.shape:
            raise ValueError(
                f"background shape {b.shape} does not match raindrop shape {r.shape}"
            )
        if m.spatial != b.spatial:
            raise ValueError(
                f"mask spatial dims {m.spatial} do not match image spatial dims {b.spatial}"
            )

    @classmethod
    def from_arrays(cls, background, raindrop, mask) -> "DecompositionTriple":
        return cls(ImageTensor(background), ImageTensor(raindrop), TransparencyMask(mask))


def unwrap(x):
    """Return the raw array behind an :class:`ImageTensor`/:class:`TransparencyMask`."""
    return x.data if isinstance(x, (ImageTensor, TransparencyMask)) else x


def blend(background, raindrop, mask):
    """Element-wise ``(1 - mask) * background + mask * raindrop``.

    Works on numpy arrays and torch tensors alike. ``mask`` must have a
    singleton channel axis (axis -3) that broadcasts over the image channels.
    """
    return (1 - mask) * background + mask * raindrop


def compose(triple: DecompositionTriple) -> ImageTensor:
    """Recombine a decomposition into the rainy image it describes."""
    out = blend(triple.background.data, triple.raindrop.data, triple.mask.data)
    return ImageTensor(out)


def residual(rainy: ImageTensor, triple: DecompositionTriple) -> float:
    """Mean absolute difference between ``compose(triple)`` and ``rainy``."""
    recon = compose(triple)
    if recon.shape != rainy.shape:
        raise ValueError(
            f"rainy image shape {rainy.shape} does not match decomposition shape {recon.shape}"
        )
    return float(np.mean(np.abs(recon.data.astype(np.float64) - rainy.data.astype(np.float64))))
