"""Input checking for image batches handed to the estimator API."""
from __future__ import annotations

import numpy as np

from .core import unwrap
from .generator import DOWNSAMPLE_FACTOR


def check_images(X, channels: int | None = None, name: str = "X") -> list[np.ndarray]:
    """Validate a batch of images and return a list of float32 ``C x H x W`` arrays.

    Accepts a ``(n, C, H, W)`` array or a sequence of ``C x H x W`` arrays
    (which may differ in spatial size). Values are clamped to [0, 1].
    """
    if isinstance(X, np.ndarray):
        if X.ndim == 3:
            raise ValueError(
                f"{name} must be a batch (n, C, H, W); wrap a single image as X[None]")
        if X.ndim != 4:
            raise ValueError(f"{name} must be 4-D (n, C, H, W), got shape {X.shape}")
        items = list(X)
    else:
        items = [unwrap(x) for x in X]
    if not items:
        raise ValueError(f"{name} is empty")
    out = []
    for i, img in enumerate(items):
        arr = np.asarray(img, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"{name}[{i}] must be 3-D (C, H, W), got shape {arr.shape}")
        if arr.shape[0] not in (1, 3):
            raise ValueError(f"{name}[{i}] must have 1 or 3 channels, got {arr.shape[0]}")
        if channels is not None and arr.shape[0] != channels:
            raise ValueError(f"{name}[{i}] has {arr.shape[0]} channels, expected {channels}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}[{i}] contains non-finite values")
        out.append(np.clip(arr, 0.0, 1.0))
    return out


def check_divisible(shape, multiple: int = DOWNSAMPLE_FACTOR) -> None:
    h, w = shape[-2:]
    if h % multiple or w % multiple:
        raise ValueError(
            f"image size {h}x{w} is not a multiple of {multiple}; "
            f"pad it (e.g. with --pad / pad=True) or crop to a multiple of {multiple}")


def pad_to_multiple(img: np.ndarray, multiple: int = DOWNSAMPLE_FACTOR):
    """Reflect-pad bottom/right up to the next multiple; returns ``(padded, (h, w))``."""
    h, w = img.shape[-2:]
    ph, pw = -h % multiple, -w % multiple
    if ph or pw:
        img = np.pad(img, [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)], mode="reflect")
    return img, (h, w)
