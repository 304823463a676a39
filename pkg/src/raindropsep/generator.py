"""Shared-weight iterative generator with mask feedback.

Each pass sees the rainy image concatenated with the previous pass's mask
(all zeros on the first pass) and emits a background, a raindrop layer and a
refined mask. The same backbone weights are reused for every pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .core import DecompositionTriple, blend, unwrap

DOWNSAMPLE_FACTOR = 4


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    """Normal(0, std) convolution weights and zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, kernel_size=3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class ResnetBackbone(nn.Module):
    """Encoder / residual trunk / decoder mapping ``C+1`` channels to ``2C+1``.

    Two stride-2 convolutions downsample by 4, so inputs must have spatial
    dims divisible by :data:`DOWNSAMPLE_FACTOR`.
    """

    def __init__(self, in_channels: int, out_channels: int, ngf: int = 64, n_blocks: int = 9):
        super().__init__()
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(in_channels, ngf, kernel_size=7),
            nn.InstanceNorm2d(ngf),
            nn.ReLU(inplace=True),
        ]
        width = ngf
        for _ in range(2):
            layers += [
                nn.Conv2d(width, width * 2, kernel_size=3, stride=2, padding=1),
                nn.InstanceNorm2d(width * 2),
                nn.ReLU(inplace=True),
            ]
            width *= 2
        layers += [ResidualBlock(width) for _ in range(n_blocks)]
        for _ in range(2):
            layers += [
                nn.ConvTranspose2d(width, width // 2, kernel_size=3, stride=2,
                                   padding=1, output_padding=1),
                nn.InstanceNorm2d(width // 2),
                nn.ReLU(inplace=True),
            ]
            width //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(width, out_channels, kernel_size=7)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


@dataclass
class IterationTrace:
    """Per-pass outputs of one generator run, batched as ``(n, C, H, W)`` tensors."""

    backgrounds: list = field(default_factory=list)
    raindrops: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    reconstructions: list = field(default_factory=list)

    def __len__(self):
        return len(self.masks)

    @property
    def final_background(self):
        return self.backgrounds[-1]

    def triples(self, index: int = 0) -> list[DecompositionTriple]:
        """Numpy triples for one batch entry, ordered by pass."""
        return [
            DecompositionTriple.from_arrays(
                b[index].detach().cpu().numpy(),
                r[index].detach().cpu().numpy(),
                a[index].detach().cpu().numpy(),
            )
            for b, r, a in zip(self.backgrounds, self.raindrops, self.masks)
        ]


class IterativeGenerator(nn.Module):
    """Runs one shared backbone ``n_iter`` times, feeding each mask back in.

    Parameters
    ----------
    channels : int
        Image channels C (1 or 3).
    n_iter : int
        Number of feedback passes N.
    ngf : int
        Base feature width of the backbone.
    n_blocks : int
        Residual blocks in the backbone trunk.
    """

    activation = "sigmoid"

    def __init__(self, channels: int = 3, n_iter: int = 6, ngf: int = 64, n_blocks: int = 9):
        super().__init__()
        if channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {channels}")
        if n_iter < 1:
            raise ValueError(f"n_iter must be >= 1, got {n_iter}")
        self.channels = channels
        self.n_iter = n_iter
        self.ngf = ngf
        self.n_blocks = n_blocks
        self.backbone = ResnetBackbone(channels + 1, 2 * channels + 1, ngf, n_blocks)
        init_weights(self)

    def arch(self) -> dict:
        return {"channels": self.channels, "n_iter": self.n_iter, "ngf": self.ngf,
                "n_blocks": self.n_blocks, "activation": self.activation}

    def check_input(self, rainy: torch.Tensor) -> None:
        if rainy.ndim != 4:
            raise ValueError(f"expected a (n, C, H, W) batch, got shape {tuple(rainy.shape)}")
        if rainy.shape[1] != self.channels:
            raise ValueError(
                f"generator expects {self.channels} channels, got {rainy.shape[1]}")
        h, w = rainy.shape[-2:]
        if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
            raise ValueError(
                f"spatial dims {h}x{w} must be multiples of {DOWNSAMPLE_FACTOR}")

    def step(self, rainy: torch.Tensor, prev_mask: torch.Tensor):
        """One feedback pass: returns ``(background, raindrop, mask)``."""
        out = torch.sigmoid(self.backbone(torch.cat([rainy, prev_mask], dim=1)))
        c = self.channels
        return out[:, :c], out[:, c:2 * c], out[:, 2 * c:]

    def forward(self, rainy: torch.Tensor) -> IterationTrace:
        self.check_input(rainy)
        mask = rainy.new_zeros((rainy.shape[0], 1, *rainy.shape[-2:]))
        trace = IterationTrace()
        for _ in range(self.n_iter):
            background, raindrop, mask = self.step(rainy, mask)
            trace.backgrounds.append(background)
            trace.raindrops.append(raindrop)
            trace.masks.append(mask)
            trace.reconstructions.append(blend(background, raindrop, mask))
        return trace


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def run_generator(generator: IterativeGenerator, rainy) -> IterationTrace:
    """Decompose one ``C x H x W`` image (array or tensor) without tracking gradients."""
    x = torch.as_tensor(unwrap(rainy), dtype=torch.float32)
    if x.ndim == 3:
        x = x.unsqueeze(0)
    with torch.no_grad():
        return generator(x)
