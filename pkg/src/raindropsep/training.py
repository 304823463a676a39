"""Alternating discriminator/generator optimisation over unpaired batches."""
from __future__ import annotations

import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import DatasetError, load_image, manifest_from_dirs, random_crop, random_hflip
from .discriminator import PatchDiscriminator
from .generator import IterativeGenerator
from .losses import (
    AdversarialMode,
    LossReport,
    LossWeights,
    Schedule,
    adversarial_loss,
    cycle_loss,
    identity_loss,
    iteration_weights,
    make_report,
    sparsity_loss,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
ABLATIONS = ("no_cyc", "no_identity", "no_sparsity", "no_iternn")
DETERMINISTIC_ENV = "RAINDROPSEP_DETERMINISTIC"
METRICS_HEADER = ("step", "gan", "cyc", "identity", "sparsity", "total")


class NumericAbort(FloatingPointError):
    """A loss became non-finite during training."""


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults reproduce the full-scale protocol."""

    epochs: int = 400
    batch_size: int = 6
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-5
    crop: int = 256
    n_iter: int = 6
    beta1: float = 1.0
    beta2: float = 10.0
    beta3: float = 5.0
    beta4: float = 1.0
    schedule: str = "geometric"
    adversarial: str = "least_squares"
    ablation: frozenset = frozenset()
    seed: int = 0
    checkpoint_every: int = 1000
    optimizer: str = "sgd"
    channels: int = 3
    ngf: int = 64
    n_blocks: int = 9
    ndf: int = 64
    flip: bool = True
    per_iteration_losses: bool = True
    max_steps: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if isinstance(self.ablation, str):
            self.ablation = [a for a in self.ablation.replace(",", " ").split() if a]
        self.ablation = frozenset(self.ablation)
        unknown = self.ablation - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation(s) {sorted(unknown)}; valid: {list(ABLATIONS)}")
        Schedule(self.schedule)
        AdversarialMode(self.adversarial)
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        for name in ("epochs", "batch_size", "crop", "n_iter", "checkpoint_every",
                     "ngf", "n_blocks", "ndf"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight_decay must be >= 0")
        if "no_iternn" in self.ablation:
            self.n_iter = 1
        self.loss_weights()

    @property
    def effective_n_iter(self) -> int:
        return 1 if "no_iternn" in self.ablation else self.n_iter

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.beta1, self.beta2, self.beta3, self.beta4, self.schedule)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ablation"] = sorted(self.ablation)
        return d

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ValueError(
                f"unknown config key(s) {sorted(unknown)}; valid keys: {sorted(names)}")
        return cls(**values)


def coerce_value(name: str, raw: str):
    """Parse a text value into the type of ``TrainConfig.<name>``."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    if name not in fields:
        raise ValueError(f"unknown config key {name!r}; valid keys: {sorted(fields)}")
    default = fields[name].default
    if name == "ablation":
        return raw
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"{name}: expected a boolean, got {raw!r}")
        return low in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def read_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = coerce_value(key, raw)
    return values


def write_config_file(config: TrainConfig, path) -> None:
    lines = []
    for key, value in config.to_dict().items():
        if key == "ablation":
            value = ",".join(value)
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def set_determinism(enabled: bool) -> None:
    torch.use_deterministic_algorithms(enabled)


@dataclass
class TrainState:
    generator: IterativeGenerator
    d_a: PatchDiscriminator
    d_b: PatchDiscriminator
    opt_g: torch.optim.Optimizer
    opt_da: torch.optim.Optimizer
    opt_db: torch.optim.Optimizer
    step: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)


def _make_optimizer(params, config: TrainConfig):
    if config.optimizer == "adam":
        return torch.optim.Adam(params, lr=config.learning_rate, betas=(0.5, 0.999),
                                weight_decay=config.weight_decay)
    return torch.optim.SGD(params, lr=config.learning_rate, momentum=config.momentum,
                           weight_decay=config.weight_decay)


def init_state(config: TrainConfig) -> TrainState:
    """Fresh networks and optimizers seeded from ``config.seed``."""
    set_determinism(config.deterministic)
    torch.manual_seed(config.seed)
    g = IterativeGenerator(config.channels, config.effective_n_iter, config.ngf, config.n_blocks)
    d_a = PatchDiscriminator(config.channels, config.ndf)
    d_b = PatchDiscriminator(config.channels, config.ndf)
    return TrainState(g, d_a, d_b, _make_optimizer(g.parameters(), config),
                      _make_optimizer(d_a.parameters(), config),
                      _make_optimizer(d_b.parameters(), config))


def _set_requires_grad(module, flag: bool):
    for p in module.parameters():
        p.requires_grad_(flag)


def train_step(state: TrainState, rainy_batch, clean_batch,
               config: TrainConfig) -> tuple[TrainState, LossReport]:
    """One alternating update: both discriminators first, then the generator.

    ``rainy_batch`` and ``clean_batch`` are unpaired ``(n, C, H, W)`` batches.
    Raises :class:`NumericAbort` if any loss turns non-finite.
    """
    try:
        return _train_step(state, rainy_batch, clean_batch, config)
    except NumericAbort:
        raise
    except FloatingPointError as exc:
        raise NumericAbort(f"step {state.step + 1}: {exc}") from exc


def _train_step(state, rainy_batch, clean_batch, config):
    rainy = torch.as_tensor(rainy_batch, dtype=torch.float32)
    clean = torch.as_tensor(clean_batch, dtype=torch.float32)
    weights = config.loss_weights()
    mode = config.adversarial
    g, d_a, d_b = state.generator, state.d_a, state.d_b
    g.train()

    trace = g(rainy)
    ks = iteration_weights(len(trace), weights.schedule)

    # discriminators: same K-weighted GAN objective, generator outputs detached
    _set_requires_grad(d_a, True)
    _set_requires_grad(d_b, True)
    real_a, real_b = d_a(clean), d_b(rainy)
    d_obj = 0.0
    for k, b, rec in zip(ks, trace.backgrounds, trace.reconstructions):
        la, _ = adversarial_loss(real_a, d_a(b.detach()), mode)
        lb, _ = adversarial_loss(real_b, d_b(rec.detach()), mode)
        d_obj = d_obj + k * (la + lb) / 2
    d_obj = weights.beta1 * d_obj
    if not torch.isfinite(d_obj):
        raise NumericAbort(f"step {state.step + 1}: non-finite discriminator loss {float(d_obj)}")
    state.opt_da.zero_grad(set_to_none=False)
    state.opt_db.zero_grad(set_to_none=False)
    d_obj.backward()
    state.opt_da.step()
    state.opt_db.step()

    # generator against frozen discriminators
    _set_requires_grad(d_a, False)
    _set_requires_grad(d_b, False)
    per_iter = []
    for b, rec in zip(trace.backgrounds, trace.reconstructions):
        _, ga = adversarial_loss(None, d_a(b), mode)
        _, gb = adversarial_loss(None, d_b(rec), mode)
        per_iter.append((ga + gb) / 2)
    gan = sum(k * v for k, v in zip(ks, per_iter))

    zero = rainy.new_zeros(())
    scope = range(len(trace)) if config.per_iteration_losses else [len(trace) - 1]
    if "no_cyc" in config.ablation:
        cyc = zero
    else:
        cyc = sum(cycle_loss(trace.reconstructions[i], rainy) for i in scope) / len(scope)
    if "no_sparsity" in config.ablation:
        sparse = zero
    else:
        sparse = sum(sparsity_loss(trace.masks[i]) for i in scope) / len(scope)
    if "no_identity" in config.ablation:
        ident = zero
    else:
        ident = identity_loss(g(clean).final_background, clean)

    parts = {"gan": gan, "cyc": cyc, "identity": ident, "sparsity": sparse}
    bad = [k for k, v in parts.items() if not math.isfinite(float(v.detach()))]
    if bad:
        dump = ", ".join(f"{k}={float(v.detach()):.6g}" for k, v in parts.items())
        raise NumericAbort(f"step {state.step + 1}: non-finite loss {bad} ({dump})")
    total = (weights.beta1 * gan + weights.beta2 * cyc
             + weights.beta3 * ident + weights.beta4 * sparse)
    state.opt_g.zero_grad(set_to_none=False)
    total.backward()
    state.opt_g.step()
    _set_requires_grad(d_a, True)
    _set_requires_grad(d_b, True)

    state.step += 1
    report = make_report(gan.detach(), cyc.detach(), ident.detach(), sparse.detach(),
                         weights, [v.detach() for v in per_iter])
    return state, report


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(state: TrainState, config: TrainConfig, path) -> Path:
    path = Path(path)
    payload = {
        "format_version": FORMAT_VERSION,
        "generator": {"arch": state.generator.arch(),
                      "state_dict": state.generator.state_dict()},
        "d_a": {"arch": state.d_a.arch(), "state_dict": state.d_a.state_dict()},
        "d_b": {"arch": state.d_b.arch(), "state_dict": state.d_b.state_dict()},
        "optimizers": {"g": state.opt_g.state_dict(), "d_a": state.opt_da.state_dict(),
                       "d_b": state.opt_db.state_dict()},
        "step": state.step,
        "epoch": state.epoch,
        "torch_rng": torch.get_rng_state(),
        "config": config.to_dict(),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def _load_payload(path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {version}; "
            f"this build supports version {FORMAT_VERSION}")
    return payload


def load_generator(path, channels: int | None = None) -> IterativeGenerator:
    """Rebuild the generator stored in a checkpoint, in eval mode."""
    payload = _load_payload(path)
    arch = dict(payload["generator"]["arch"])
    if channels is not None and arch["channels"] != channels:
        raise CheckpointError(
            f"checkpoint generator has {arch['channels']} channels, expected {channels}")
    arch.pop("activation", None)
    g = IterativeGenerator(**arch)
    g.load_state_dict(payload["generator"]["state_dict"])
    g.eval()
    return g


def resume(path, config: TrainConfig | None = None) -> tuple[TrainState, TrainConfig]:
    """Restore the full training state; the next step is ``state.step + 1``."""
    payload = _load_payload(path)
    saved = TrainConfig.from_dict(payload["config"])
    if config is None:
        config = saved
    elif config.channels != saved.channels:
        raise CheckpointError(
            f"checkpoint has {saved.channels} channels, config expects {config.channels}")
    state = init_state(config)
    state.generator.load_state_dict(payload["generator"]["state_dict"])
    state.d_a.load_state_dict(payload["d_a"]["state_dict"])
    state.d_b.load_state_dict(payload["d_b"]["state_dict"])
    state.opt_g.load_state_dict(payload["optimizers"]["g"])
    state.opt_da.load_state_dict(payload["optimizers"]["d_a"])
    state.opt_db.load_state_dict(payload["optimizers"]["d_b"])
    state.step = payload["step"]
    state.epoch = payload["epoch"]
    torch.set_rng_state(payload["torch_rng"])
    return state, config


# -- data streams --------------------------------------------------------------

def steps_per_epoch(n_rainy: int, n_clean: int, batch_size: int) -> int:
    return math.ceil(max(n_rainy, n_clean) / batch_size)


def _batch_indices(n: int, epoch: int, position: int, batch: int, seed: int, stream: int):
    # each stream gets its own permutation per epoch; the shorter one cycles
    perm = np.random.default_rng([seed, epoch, stream]).permutation(n)
    start = position * batch
    return [int(perm[(start + j) % n]) for j in range(batch)]


def make_batch(images, indices, config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    out = []
    for i in indices:
        img = images[i]
        if callable(img):
            img = img()
        crop = random_crop(img, config.crop, rng)
        if config.flip:
            (crop,) = random_hflip(rng, crop)
        out.append(crop)
    return np.stack(out).astype(np.float32)


class MetricsLog:
    """Tab-separated per-step loss log."""

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        fresh = not (append and self.path.exists())
        self._fh = open(self.path, "a" if not fresh else "w", encoding="utf-8")
        if fresh:
            self._fh.write("\t".join(METRICS_HEADER) + "\n")

    def write(self, step: int, report: LossReport):
        self._fh.write("\t".join([str(step)] + [f"{v:.9g}" for v in report.row()]) + "\n")

    def flush(self):
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def train_loop(config: TrainConfig, rainy_images, clean_images, out_dir=None,
               state: TrainState | None = None, callback=None) -> TrainState:
    """Run training over in-memory (or lazily decoded) image lists.

    ``rainy_images`` / ``clean_images`` hold ``C x H x W`` arrays or zero-arg
    callables returning them. Stops after ``config.epochs`` epochs or
    ``config.max_steps`` steps when that is nonzero.
    """
    if not rainy_images or not clean_images:
        raise DatasetError("empty dataset: need at least one rainy and one clean image")
    if state is None:
        state = init_state(config)
    per_epoch = steps_per_epoch(len(rainy_images), len(clean_images), config.batch_size)
    total_steps = config.epochs * per_epoch
    if config.max_steps:
        total_steps = min(total_steps, config.max_steps)

    metrics = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics = MetricsLog(out_dir / "metrics.tsv", append=state.step > 0)
    try:
        while state.step < total_steps:
            epoch, position = divmod(state.step, per_epoch)
            state.epoch = epoch
            rng = np.random.default_rng([config.seed, state.step, 7])
            ri = _batch_indices(len(rainy_images), epoch, position, config.batch_size,
                                config.seed, 0)
            ci = _batch_indices(len(clean_images), epoch, position, config.batch_size,
                                config.seed, 1)
            rainy = make_batch(rainy_images, ri, config, rng)
            clean = make_batch(clean_images, ci, config, rng)
            state, report = train_step(state, rainy, clean, config)
            state.history.append(report)
            if metrics is not None:
                metrics.write(state.step, report)
                if state.step % config.checkpoint_every == 0:
                    _checkpoint(state, config, out_dir, metrics)
            if callback is not None:
                callback(state, report)
        if metrics is not None:
            _checkpoint(state, config, out_dir, metrics)
    finally:
        if metrics is not None:
            metrics.close()
    return state


def checkpoint_path(out_dir, step: int) -> Path:
    return Path(out_dir) / f"ckpt_{step:08d}.pt"


def _checkpoint(state, config, out_dir, metrics: MetricsLog):
    metrics.flush()
    try:
        save_checkpoint(state, config, checkpoint_path(out_dir, state.step))
    except OSError as exc:
        log.error("checkpoint at step %d failed: %s", state.step, exc)
        raise


def fit(config: TrainConfig, rainy_dir, clean_dir, out_dir, resume_from=None) -> Path:
    """Train from two unpaired image directories; returns the final checkpoint path."""
    manifest = manifest_from_dirs(rainy_dir, clean_dir)
    channels = config.channels

    def loader(p):
        return lambda: load_image(p, channels)

    rainy = [loader(p) for p in manifest.rainy_paths]
    clean = [loader(p) for p in manifest.clean_paths]
    state = None
    if resume_from is not None:
        state, config = resume(resume_from, config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_file(config, out_dir / "config.txt")
    state = train_loop(config, rainy, clean, out_dir, state=state)
    return checkpoint_path(out_dir, state.step)
