"""Dataset discovery, image I/O, cropping and a synthetic raindrop generator.

Supported directory layouts (see README for fixtures):

``flat``
    ``root/rain/*`` and ``root/clean/*``; pairs share a file stem.
``nus``
    ``root/data/<id>_rain.<ext>`` and ``root/gt/<id>_clean.<ext>``.
``rainds``
    ``root/raindrop/*`` and ``root/gt/*``; pairs share a file stem.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import DecompositionTriple, ImageTensor, blend, unwrap

IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp"}

LAYOUTS = {
    "flat": ("rain", "clean"),
    "nus": ("data", "gt"),
    "rainds": ("raindrop", "gt"),
}


class Pairing(str, Enum):
    UNPAIRED = "unpaired"
    PAIRED = "paired"


class DatasetError(ValueError):
    """Raised for missing, empty, or inconsistent dataset directories."""


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"directory not found: {directory}")
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_EXTS)


def load_image(path, channels: int = 3) -> np.ndarray:
    """Decode an 8-bit image to a float32 ``C x H x W`` array in [0, 1]."""
    with Image.open(path) as im:
        im = im.convert("RGB" if channels == 3 else "L")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return np.ascontiguousarray(arr)


def to_uint8(arr) -> np.ndarray:
    """``C x H x W`` [0, 1] array to ``H x W (x C)`` uint8."""
    arr = np.asarray(arr)
    out = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    return out[0] if out.shape[0] == 1 else out.transpose(1, 2, 0)


def save_image(arr, path) -> None:
    Image.fromarray(to_uint8(arr)).save(path)


def _pair_key(path: Path, layout: str, side: str) -> str:
    stem = path.stem
    if layout == "nus":
        suffix = "_rain" if side == "rainy" else "_clean"
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    return stem


@dataclass(frozen=True)
class DatasetManifest:
    rainy_paths: tuple
    clean_paths: tuple
    pairing: Pairing
    layout: str

    def __len__(self):
        return max(len(self.rainy_paths), len(self.clean_paths))


def _check_decodable(paths):
    for p in paths:
        try:
            with Image.open(p) as im:
                im.verify()
        except Exception as exc:  # PIL raises a variety of types
            raise DatasetError(f"cannot decode image {p}: {exc}") from exc


def build_manifest(root, layout: str = "flat", pairing="unpaired") -> DatasetManifest:
    """Enumerate a dataset directory into sorted rainy/clean path lists.

    In paired mode every rainy file must have a counterpart under the layout's
    filename rule, and vice versa; the first orphan found is named in the error.
    """
    pairing = Pairing(pairing)
    if layout not in LAYOUTS:
        raise DatasetError(f"unknown layout {layout!r}; expected one of {sorted(LAYOUTS)}")
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root not found: {root}")
    rain_dir, clean_dir = (root / d for d in LAYOUTS[layout])
    rainy = list_images(rain_dir) if rain_dir.is_dir() else []
    clean = list_images(clean_dir) if clean_dir.is_dir() else []
    if not rainy and not clean:
        raise DatasetError(f"no images found under {root}")
    if not rainy:
        raise DatasetError(f"no images found in {rain_dir}")
    if not clean:
        raise DatasetError(f"no images found in {clean_dir}")

    if pairing is Pairing.PAIRED:
        clean_by_key = {_pair_key(p, layout, "clean"): p for p in clean}
        rainy_keys = set()
        ordered_clean = []
        for p in rainy:
            key = _pair_key(p, layout, "rainy")
            if key not in clean_by_key:
                raise DatasetError(f"no clean counterpart for rainy image {p}")
            rainy_keys.add(key)
            ordered_clean.append(clean_by_key[key])
        for key, p in clean_by_key.items():
            if key not in rainy_keys:
                raise DatasetError(f"no rainy counterpart for clean image {p}")
        clean = ordered_clean

    _check_decodable(rainy + clean)
    return DatasetManifest(tuple(rainy), tuple(clean), pairing, layout)


def manifest_from_dirs(rainy_dir, clean_dir) -> DatasetManifest:
    """Unpaired manifest from two arbitrary directories."""
    rainy, clean = list_images(rainy_dir), list_images(clean_dir)
    if not rainy:
        raise DatasetError(f"no images found in {rainy_dir}")
    if not clean:
        raise DatasetError(f"no images found in {clean_dir}")
    _check_decodable(rainy + clean)
    return DatasetManifest(tuple(rainy), tuple(clean), Pairing.UNPAIRED, "flat")


def crop_offset(shape, size: int, rng: np.random.Generator) -> tuple[int, int]:
    h, w = shape[-2:]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than crop size {size}")
    return int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1))


def random_crop(image, size: int, rng: np.random.Generator, *others):
    """Crop ``size x size`` at a random offset.

    Extra arrays in ``others`` get the identical offset (paired cropping);
    in that case a tuple of all crops is returned.
    """
    arr = unwrap(image)
    top, left = crop_offset(arr.shape, size, rng)
    crops = [unwrap(a)[..., top:top + size, left:left + size]
             for a in (image, *others)]
    if not others:
        return ImageTensor(crops[0]) if isinstance(image, ImageTensor) else crops[0]
    return tuple(crops)


def random_hflip(rng: np.random.Generator, *arrays):
    """Flip every array horizontally together with probability 1/2."""
    if rng.random() < 0.5:
        return tuple(np.ascontiguousarray(a[..., ::-1]) for a in arrays)
    return arrays


@dataclass
class SyntheticSpec:
    count: int = 50
    size: int = 64
    channels: int = 3
    droplets: tuple = (4, 10)
    radius: tuple = (3.0, 8.0)
    aspect: tuple = (0.75, 1.25)
    feather: float = 1.5
    blur: float = 2.0
    fill_weight: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if min(self.radius) < 1:
            raise ValueError("droplet radii must be >= 1 pixel")
        if self.feather < 0:
            raise ValueError("feather must be >= 0")
        if self.droplets[0] < 0 or self.droplets[0] > self.droplets[1]:
            raise ValueError(f"bad droplet count range {self.droplets}")


BASE_COLOR = (0.35, 0.40, 0.30)


def _background(rng, size, channels):
    # every background shares one base colour; only the texture varies.
    # instance-normalised generators cannot recover a per-image colour offset.
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.empty((channels, size, size))
    for c in range(channels):
        layer = np.full((size, size), BASE_COLOR[c])
        for _ in range(3):
            fx, fy = rng.uniform(-2.5, 2.5, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            layer += rng.uniform(0.04, 0.12) * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        img[c] = layer
    return np.clip(img, 0.0, 1.0)


def droplet_mask(size, centers, radii, feather: float) -> np.ndarray:
    """Union (max) of feathered ellipses; ``radii`` are ``(ry, rx)`` pairs."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size))
    for (cy, cx), (ry, rx) in zip(centers, radii):
        d = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
        if feather == 0:
            a = (d <= 1.0).astype(np.float64)
        else:
            a = np.clip((1.0 - d) * min(ry, rx) / feather, 0.0, 1.0)
        mask = np.maximum(mask, a)
    return mask[None]


def synthesize(spec: SyntheticSpec) -> list[tuple[ImageTensor, DecompositionTriple]]:
    """Procedural (rainy, ground-truth triple) samples obeying the blend law exactly."""
    rng = np.random.default_rng(spec.seed)
    samples = []
    for _ in range(spec.count):
        background = _background(rng, spec.size, spec.channels)
        n = int(rng.integers(spec.droplets[0], spec.droplets[1] + 1))
        centers = rng.uniform(0, spec.size - 1, size=(n, 2))
        r = rng.uniform(*spec.radius, size=n)
        aspect = rng.uniform(*spec.aspect, size=n)
        radii = np.stack([r * aspect, r], axis=1)
        mask = droplet_mask(spec.size, centers, radii, spec.feather)
        blurred = ndimage.gaussian_filter(background, sigma=(0, spec.blur, spec.blur))
        raindrop = np.clip(spec.fill_weight * blurred + (1 - spec.fill_weight), 0.0, 1.0)
        triple = DecompositionTriple.from_arrays(background, raindrop, mask)
        rainy = ImageTensor(blend(triple.background.data, triple.raindrop.data,
                                  triple.mask.data))
        samples.append((rainy, triple))
    return samples


def write_synthetic(samples, out_dir) -> Path:
    """Write rainy/clean/raindrop/mask PNGs and a tab-separated manifest."""
    out = Path(out_dir)
    for sub in ("rain", "clean", "raindrop", "mask"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    lines = ["rainy\tbackground\traindrop\tmask"]
    for i, (rainy, triple) in enumerate(samples):
        name = f"{i:04d}.png"
        parts = {"rain": rainy.data, "clean": triple.background.data,
                 "raindrop": triple.raindrop.data, "mask": triple.mask.data}
        for sub, arr in parts.items():
            save_image(arr, out / sub / name)
        lines.append("\t".join(os.path.join(sub, name) for sub in parts))
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
