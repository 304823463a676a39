"""PSNR and Gaussian-window SSIM on ``C x H x W`` images in [0, 1]."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .core import unwrap

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _pair(a, b):
    a = np.asarray(unwrap(a), dtype=np.float64)
    b = np.asarray(unwrap(b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 dB for identical inputs."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x, g):
    # separable correlation, then keep only windows fully inside the image
    half = len(g) // 2
    y = correlate1d(correlate1d(x, g, axis=-1, mode="constant"), g, axis=-2, mode="constant")
    return y[..., half:x.shape[-2] - half, half:x.shape[-1] - half]


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean SSIM over all fully-contained 11x11 windows, averaged over channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(
            f"images {a.shape[-2]}x{a.shape[-1]} smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c1, c2 = (K1 * peak) ** 2, (K2 * peak) ** 2
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    per_channel = (num / den).reshape(a.shape[0], -1).mean(axis=1)
    return float(per_channel.mean())


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    count: int
    per_pair: list

    def table(self, names=None) -> str:
        """Tab-separated ``name, psnr, ssim`` rows plus a ``mean`` summary row."""
        names = names or [str(i) for i in range(self.count)]
        lines = ["name\tpsnr\tssim"]
        lines += [f"{n}\t{p:.4f}\t{s:.4f}" for n, (p, s) in zip(names, self.per_pair)]
        lines.append(f"mean\t{self.psnr_db:.4f}\t{self.ssim:.4f}")
        return "\n".join(lines) + "\n"


def evaluate_pairs(outputs, truths) -> MetricReport:
    if len(outputs) != len(truths):
        raise ValueError(f"got {len(outputs)} outputs but {len(truths)} ground truths")
    if not outputs:
        raise ValueError("nothing to evaluate")
    per_pair = [(psnr(o, t), ssim(o, t)) for o, t in zip(outputs, truths)]
    ps, ss = zip(*per_pair)
    return MetricReport(float(np.mean(ps)), float(np.mean(ss)), len(per_pair), per_pair)
