"""scikit-learn compatible wrapper around the training loop and generator."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .metrics import psnr
from .training import TrainConfig, load_generator, save_checkpoint, train_loop
from .validation import check_divisible, check_images, pad_to_multiple


class RaindropRemover(TransformerMixin, BaseEstimator):
    """Learns to strip raindrops from images using unpaired rainy/clean sets.

    ``fit(X, y)`` takes rainy images ``X`` and clean images ``y``; the two
    sets are *unpaired* and may differ in length. ``transform`` returns the
    final-pass clean background for each input. Constructor arguments mirror
    :class:`~raindropsep.training.TrainConfig`.
    """

    def __init__(self, n_iter=6, ngf=64, n_blocks=9, ndf=64, epochs=400, batch_size=6,
                 learning_rate=0.001, momentum=0.9, weight_decay=1e-5, crop=256,
                 beta1=1.0, beta2=10.0, beta3=5.0, beta4=1.0, schedule="geometric",
                 adversarial="least_squares", ablation=(), optimizer="sgd", max_steps=0,
                 seed=0, pad=False):
        self.n_iter = n_iter
        self.ngf = ngf
        self.n_blocks = n_blocks
        self.ndf = ndf
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.crop = crop
        self.beta1 = beta1
        self.beta2 = beta2
        self.beta3 = beta3
        self.beta4 = beta4
        self.schedule = schedule
        self.adversarial = adversarial
        self.ablation = ablation
        self.optimizer = optimizer
        self.max_steps = max_steps
        self.seed = seed
        self.pad = pad

    def _config(self, channels: int) -> TrainConfig:
        params = self.get_params()
        params.pop("pad")
        return TrainConfig(channels=channels, **params)

    def fit(self, X, y):
        rainy = check_images(X, name="X")
        channels = rainy[0].shape[0]
        clean = check_images(y, channels=channels, name="y")
        self.config_ = self._config(channels)
        self.state_ = train_loop(self.config_, rainy, clean)
        self.generator_ = self.state_.generator.eval()
        self.history_ = self.state_.history
        self.n_channels_ = channels
        return self

    def _prepare(self, img):
        if self.pad:
            return pad_to_multiple(img)
        check_divisible(img.shape)
        return img, img.shape[-2:]

    def decompose(self, X):
        """Per-image :class:`IterationTrace` objects (batch size 1 each)."""
        check_is_fitted(self, "generator_")
        traces = []
        for img in check_images(X, channels=self.n_channels_):
            padded, (h, w) = self._prepare(img)
            with torch.no_grad():
                trace = self.generator_(torch.from_numpy(padded[None]))
            for seq in (trace.backgrounds, trace.raindrops, trace.masks, trace.reconstructions):
                seq[:] = [t[..., :h, :w] for t in seq]
            traces.append(trace)
        return traces

    def transform(self, X):
        backgrounds = [t.final_background[0].numpy() for t in self.decompose(X)]
        shapes = {b.shape for b in backgrounds}
        return np.stack(backgrounds) if len(shapes) == 1 else backgrounds

    def score(self, X, y):
        """Mean PSNR (dB) of the recovered backgrounds against paired ground truth."""
        truths = check_images(y, name="y")
        outputs = self.transform(X)
        if len(outputs) != len(truths):
            raise ValueError(f"got {len(outputs)} inputs but {len(truths)} ground truths")
        return float(np.mean([psnr(o, t) for o, t in zip(outputs, truths)]))

    def save(self, path):
        check_is_fitted(self, "state_")
        return save_checkpoint(self.state_, self.config_, path)

    @classmethod
    def from_checkpoint(cls, path, pad=False) -> "RaindropRemover":
        """An inference-only estimator around a stored generator."""
        g = load_generator(path)
        est = cls(n_iter=g.n_iter, ngf=g.ngf, n_blocks=g.n_blocks, pad=pad)
        est.generator_ = g
        est.n_channels_ = g.channels
        return est
