"""Adversarial, cycle, identity and sparsity objectives and their weighting.

Every function takes torch tensors and returns a scalar tensor so gradients
flow; reductions are arithmetic means over batch and elements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import torch
import torch.nn.functional as F


class AdversarialMode(str, Enum):
    LOG_FORM = "log_form"
    LEAST_SQUARES = "least_squares"


class Schedule(str, Enum):
    PAPER_LINEAR = "paper_linear"
    GEOMETRIC = "geometric"
    UNIFORM = "uniform"


def _check_finite(name, *tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise FloatingPointError(f"{name}: non-finite scores")


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def adversarial_loss(scores_real, scores_fake, mode="least_squares"):
    """Return ``(d_loss, g_loss)`` from raw discriminator scores.

    ``d_loss`` is the negated discriminator objective (minimized by the
    discriminator). ``g_loss`` is the non-saturating generator term computed
    from ``scores_fake``; callers that only need one side can pass
    ``scores_real=None`` and ignore ``d_loss``.
    """
    mode = AdversarialMode(mode)
    _check_finite("adversarial_loss", scores_fake,
                  *(() if scores_real is None else (scores_real,)))
    if mode is AdversarialMode.LOG_FORM:
        g_loss = F.binary_cross_entropy_with_logits(scores_fake, torch.ones_like(scores_fake))
        d_fake = F.binary_cross_entropy_with_logits(scores_fake, torch.zeros_like(scores_fake))
        d_real = (None if scores_real is None else
                  F.binary_cross_entropy_with_logits(scores_real, torch.ones_like(scores_real)))
    else:
        g_loss = torch.mean((scores_fake - 1) ** 2)
        d_fake = torch.mean(scores_fake ** 2)
        d_real = None if scores_real is None else torch.mean((scores_real - 1) ** 2)
    d_loss = d_fake if d_real is None else d_real + d_fake
    return d_loss, g_loss


def iteration_weights(n: int, schedule="geometric") -> list[float]:
    """Per-pass weights K_1..K_n."""
    schedule = Schedule(schedule)
    if n < 1:
        raise ValueError("need at least one iteration")
    if schedule is Schedule.PAPER_LINEAR:
        return [float(i - 1) for i in range(1, n + 1)]
    if schedule is Schedule.GEOMETRIC:
        return [2.0 * 1.5 ** (i - 1) for i in range(1, n + 1)]
    return [1.0] * n


def weighted_gan_loss(per_iter, schedule="geometric"):
    """``sum_i K_i * per_iter[i]``; works on floats or scalar tensors."""
    if len(per_iter) == 0:
        raise ValueError("per_iter must not be empty")
    weights = iteration_weights(len(per_iter), schedule)
    return sum(k * v for k, v in zip(weights, per_iter))


def cycle_loss(reconstructed, rainy):
    _check_shapes(reconstructed, rainy)
    return torch.mean(torch.abs(reconstructed - rainy))


def identity_loss(output_background, clean_input):
    _check_shapes(output_background, clean_input)
    return torch.mean(torch.abs(output_background - clean_input))


def sparsity_loss(mask):
    return torch.mean(torch.abs(mask))


@dataclass
class LossWeights:
    """beta1..beta4 scale the GAN, cycle, identity and sparsity terms."""

    beta1: float = 1.0
    beta2: float = 10.0
    beta3: float = 5.0
    beta4: float = 1.0
    schedule: Schedule = Schedule.GEOMETRIC

    def __post_init__(self):
        self.schedule = Schedule(self.schedule)
        betas = self.as_tuple()
        if not all(math.isfinite(b) and b >= 0 for b in betas):
            raise ValueError(f"loss weights must be finite and >= 0, got {betas}")

    def as_tuple(self):
        return (self.beta1, self.beta2, self.beta3, self.beta4)


COMPONENTS = ("gan", "cyc", "identity", "sparsity")


@dataclass
class LossReport:
    gan: float
    cyc: float
    identity: float
    sparsity: float
    total: float
    per_iteration_gan: list = field(default_factory=list)

    def row(self) -> list[float]:
        return [self.gan, self.cyc, self.identity, self.sparsity, self.total]


def total_loss(gan, cyc, identity, sparsity, weights: LossWeights):
    """Weighted sum of the four components.

    Components may be floats or scalar tensors; the returned total has the
    same kind. ``gan`` must already carry its per-iteration weighting.
    """
    parts = dict(zip(COMPONENTS, (gan, cyc, identity, sparsity)))
    for name, value in parts.items():
        if not math.isfinite(float(value)):
            raise FloatingPointError(f"non-finite {name} loss: {float(value)}")
    return sum(b * parts[name] for b, name in zip(weights.as_tuple(), COMPONENTS))


def make_report(gan, cyc, identity, sparsity, weights: LossWeights, per_iteration_gan=()):
    total = total_loss(gan, cyc, identity, sparsity, weights)
    return LossReport(float(gan), float(cyc), float(identity), float(sparsity),
                      float(total), [float(v) for v in per_iteration_gan])
