"""Patch-level discriminator emitting one raw realness score per receptive field."""
from __future__ import annotations

import torch
from torch import nn

from .core import unwrap
from .generator import init_weights

KERNEL = 4
PADDING = 1


class PatchDiscriminator(nn.Module):
    """Fully convolutional critic.

    ``n_layers`` stride-2 convolutions are followed by one stride-1
    convolution and a 1-channel projection. Scores are raw logits; the loss
    functions apply whatever squashing they need.
    """

    def __init__(self, channels: int = 3, ndf: int = 64, n_layers: int = 3):
        super().__init__()
        self.channels = channels
        self.ndf = ndf
        self.n_layers = n_layers
        layers = [nn.Conv2d(channels, ndf, KERNEL, stride=2, padding=PADDING),
                  nn.LeakyReLU(0.2, inplace=True)]
        width = ndf
        for n in range(1, n_layers + 1):
            nxt = ndf * min(2 ** n, 8)
            stride = 2 if n < n_layers else 1
            layers += [nn.Conv2d(width, nxt, KERNEL, stride=stride, padding=PADDING),
                       nn.InstanceNorm2d(nxt),
                       nn.LeakyReLU(0.2, inplace=True)]
            width = nxt
        layers.append(nn.Conv2d(width, 1, KERNEL, stride=1, padding=PADDING))
        self.model = nn.Sequential(*layers)
        init_weights(self)

    def arch(self) -> dict:
        return {"channels": self.channels, "ndf": self.ndf, "n_layers": self.n_layers}

    def strides(self) -> list[int]:
        return [2] * self.n_layers + [1, 1]

    def output_size(self, size: int) -> int:
        for s in self.strides():
            size = (size + 2 * PADDING - KERNEL) // s + 1
        return size

    def min_input_size(self) -> int:
        """Smallest square input giving a 1x1 map with >1 cell before each norm."""
        size = 1
        while not self._valid(size):
            size += 1
        return size

    def _valid(self, size: int) -> bool:
        # instance norm needs more than one spatial cell at every normalized layer
        for i, s in enumerate(self.strides()):
            size = (size + 2 * PADDING - KERNEL) // s + 1
            if size < 1 or (1 <= i <= self.n_layers and size < 2):
                return False
        return True

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.shape[-3] != self.channels:
            raise ValueError(
                f"discriminator expects {self.channels} channels, got {image.shape[-3]}")
        h, w = image.shape[-2:]
        if not (self._valid(h) and self._valid(w)):
            m = self.min_input_size()
            raise ValueError(f"input {h}x{w} too small; minimum is {m}x{m}")
        return self.model(image)


def score(disc: PatchDiscriminator, image) -> torch.Tensor:
    """Score a single ``C x H x W`` image (or a batch); returns the raw map."""
    x = torch.as_tensor(unwrap(image), dtype=torch.float32)
    single = x.ndim == 3
    if single:
        x = x.unsqueeze(0)
    with torch.no_grad():
        out = disc(x)
    return out[0] if single else out
