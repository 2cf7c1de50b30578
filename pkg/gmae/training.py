"""Masked reconstruction objective, optimizer, schedule and the training loop."""

import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .autograd import splat
from .camera import CameraConfig
from .checkpoint import apply_checkpoint, checkpoint_from_training, load_checkpoint, save_checkpoint
from .data import Augmenter, iterate_batches, steps_per_epoch
from .errors import ConfigError, InvalidInputError, NonFiniteError
from .gaussians import RAW_DIM, ScaleClamp
from .model import GaussianMAE, ModelConfig, build_model
from .patches import MaskSpec, PatchGrid, make_mask, patchify

logger = logging.getLogger("gmae.training")

LOSS_MODES = ("masked", "all", "masked_normalized")

# Target normalization epsilon for masked_normalized, as in MAE.
NORM_EPS = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-4
    min_lr: float = 0.0
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    batch_size: int = 64
    warmup_epochs: int = 2
    epochs: int = 50
    mask_ratio: float = 0.75
    loss_mode: str = "masked"
    seed: int = 0
    random_crop: bool = True
    hflip: bool = True
    randaug: bool = False
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be at least 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError("epochs", f"must be non-negative, got {self.epochs}")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs", f"must be non-negative, got {self.warmup_epochs}")
        # An empty run (epochs = 0) takes no steps, so its warmup is moot.
        if self.epochs > 0 and self.warmup_epochs > self.epochs:
            raise ConfigError("warmup_epochs", f"{self.warmup_epochs} exceeds epochs {self.epochs}")
        if not self.base_lr >= 0 or not 0 <= self.min_lr <= self.base_lr:
            raise ConfigError("base_lr", f"need 0 <= min_lr <= base_lr, got {self.min_lr}, {self.base_lr}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", f"must be non-negative, got {self.weight_decay}")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(name, f"must lie in [0, 1), got {getattr(self, name)}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError("mask_ratio", f"must lie in [0, 1), got {self.mask_ratio}")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError("loss_mode", f"must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.mask_ratio == 0.0 and self.loss_mode != "all":
            raise ConfigError("loss_mode", "mask_ratio 0 leaves nothing masked; use loss_mode 'all'")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every", f"must be at least 1, got {self.checkpoint_every}")


def masked_mse(rendered, target, masks, grid: PatchGrid, mode: str = "masked") -> torch.Tensor:
    """
    Reconstruction loss between renders and targets.

    Args:
        rendered: (H, W, 3) or (B, H, W, 3)
        target: same shape as rendered
        masks: one MaskSpec, or a list with one per batch item
        grid: patch grid the masks refer to
        mode: "masked" averages squared error over pixels of masked patches;
            "all" over every pixel; "masked_normalized" standardizes render
            and target with each target patch's mean and variance, then
            averages over masked patches

    Returns:
        scalar tensor
    """
    if mode not in LOSS_MODES:
        raise InvalidInputError(f"unknown loss mode {mode!r}")
    rendered = torch.as_tensor(rendered)
    target = torch.as_tensor(target).to(rendered)
    if rendered.shape != target.shape:
        raise InvalidInputError(f"render shape {tuple(rendered.shape)} != target shape {tuple(target.shape)}")
    if rendered.dim() == 3:
        rendered, target, masks = rendered[None], target[None], [masks]
    if len(masks) != rendered.shape[0]:
        raise InvalidInputError(f"{rendered.shape[0]} images but {len(masks)} masks")

    if mode == "all":
        return ((rendered - target) ** 2).mean()

    for m in masks:
        if m.num_patches != grid.num_patches:
            raise InvalidInputError(f"mask covers {m.num_patches} patches, grid has {grid.num_patches}")
        if len(m.masked) == 0:
            raise InvalidInputError("loss over masked patches needs at least one masked patch")

    if mode == "masked":
        weight = torch.from_numpy(np.stack([grid.pixel_mask(m.masked) for m in masks])).to(rendered)
        err = ((rendered - target) ** 2).sum(dim=-1)
        return (err * weight).sum() / (weight.sum() * 3)

    # Both sides are standardized with the target patch's statistics; the
    # render lives in [0, 1] and cannot produce a standardized patch itself.
    pred = patchify(rendered, grid)
    tgt = patchify(target, grid)
    mean = tgt.mean(dim=-1, keepdim=True)
    std = (tgt.var(dim=-1, keepdim=True) + NORM_EPS) ** 0.5
    loss = (((pred - mean) / std - (tgt - mean) / std) ** 2).mean(dim=-1)
    weight = torch.zeros(loss.shape, dtype=loss.dtype)
    for b, m in enumerate(masks):
        weight[b, torch.from_numpy(m.masked)] = 1.0
    return (loss * weight).sum() / weight.sum()


def lr_schedule(step: int, config: TrainConfig, steps_per_epoch: int) -> float:
    """Linear warmup from 0 to base_lr, then half-cosine decay to min_lr at the final step."""
    if step < 0:
        raise InvalidInputError(f"step must be non-negative, got {step}")
    warmup = config.warmup_epochs * steps_per_epoch
    total = config.epochs * steps_per_epoch
    if step < warmup:
        return config.base_lr * step / warmup
    if total <= warmup:
        return config.base_lr
    progress = min(1.0, (step - warmup) / (total - warmup))
    return config.min_lr + (config.base_lr - config.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def param_groups(model: torch.nn.Module, weight_decay: float) -> list[dict]:
    """Decay matrices only; biases, norm weights and other 1-D tensors are left alone."""
    decay, no_decay = [], []
    for _, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (decay if p.ndim >= 2 else no_decay).append(p)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


def build_optimizer(model: torch.nn.Module, config: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        param_groups(model, config.weight_decay),
        lr=config.base_lr,
        betas=(config.beta1, config.beta2),
    )


@dataclass
class StepResult:
    loss: float
    lr: float


def train_step(
    model: GaussianMAE,
    optimizer: torch.optim.Optimizer,
    images: torch.Tensor,
    masks: list[MaskSpec],
    lr: float,
    cam: CameraConfig,
    loss_mode: str = "masked",
    batch_index: int = 0,
    tiled: bool = True,
) -> StepResult:
    """
    One forward/backward pass and one optimizer update.

    Non-finite Gaussian parameters or a non-finite loss raise NonFiniteError
    before any gradient or optimizer state is touched.
    """
    model.train()
    raw = model(images, masks)
    if not torch.isfinite(raw).all():
        raise NonFiniteError(f"non-finite Gaussian parameters at batch {batch_index}")
    rendered = splat(raw, model.config.clamp, cam, tiled=tiled)
    loss = masked_mse(rendered, images, masks, model.grid, loss_mode)
    if not torch.isfinite(loss):
        raise NonFiniteError(f"non-finite loss ({loss.item()}) at batch {batch_index}")
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return StepResult(loss=float(loss.item()), lr=lr)


def camera_for(model_config: ModelConfig, cam: CameraConfig | None = None) -> CameraConfig:
    """The training camera: ``cam`` if given, checked against the model's image size."""
    if cam is None:
        return CameraConfig(height=model_config.image_size, width=model_config.image_size)
    if (cam.height, cam.width) != (model_config.image_size, model_config.image_size):
        raise ConfigError(
            "image_size",
            f"camera is {cam.height}x{cam.width} but model expects {model_config.image_size}",
        )
    return cam


def format_float(x: float) -> str:
    return f"{x:.17g}"


class Trainer:
    """
    Pre-training loop over an in-memory image array.

    Each epoch draws its shuffling, augmentation and mask seeds from a numpy
    generator seeded with ``(train_config.seed, epoch)``; model initialization
    uses the same seed through torch. Two trainers built with equal arguments
    produce identical loss logs and checkpoints, and a run resumed from an
    epoch checkpoint continues exactly as the uninterrupted run would.
    """

    def __init__(
        self,
        images: np.ndarray,
        model_config: ModelConfig,
        train_config: TrainConfig,
        run_dir,
        cam: CameraConfig | None = None,
        tiled: bool = True,
    ):
        if images.ndim != 4 or images.shape[1:] != (model_config.image_size, model_config.image_size, 3):
            raise InvalidInputError(
                f"training images have shape {images.shape}, expected (M, {model_config.image_size}, "
                f"{model_config.image_size}, 3)"
            )
        self.images = images
        self.model_config = model_config
        self.config = train_config
        self.cam = camera_for(model_config, cam)
        self.tiled = tiled
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

        self.model = build_model(model_config, train_config.seed)
        self.optimizer = build_optimizer(self.model, train_config)
        self.rng = np.random.default_rng([train_config.seed, 0])
        self.augment = Augmenter(train_config.random_crop, train_config.hflip, train_config.randaug)
        self.steps_per_epoch = steps_per_epoch(len(images), train_config.batch_size)
        self.global_step = 0
        self.epoch = 0
        self.epoch_losses: list[float] = []

    @property
    def loss_log(self) -> Path:
        return self.run_dir / "loss.csv"

    def checkpoint_path(self, epoch: int) -> Path:
        return self.run_dir / f"checkpoint_epoch{epoch:04d}.gmae"

    def save(self) -> Path:
        path = self.checkpoint_path(self.epoch)
        ckpt = checkpoint_from_training(
            self.model, self.optimizer, self.model_config, self.config, self.global_step, self.epoch
        )
        save_checkpoint(path, ckpt)
        logger.info(f"saved checkpoint {path}")
        return path

    def resume(self, path) -> None:
        """Continue from an epoch checkpoint: weights, optimizer state, step and epoch."""
        ckpt = load_checkpoint(path)
        if ckpt.epoch > self.config.epochs:
            raise ConfigError(
                "epochs", f"checkpoint is at epoch {ckpt.epoch}, past the configured {self.config.epochs}"
            )
        apply_checkpoint(ckpt, self.model, self.optimizer)
        self.global_step = ckpt.global_step
        self.epoch = ckpt.epoch
        logger.info(f"resuming from {path} at epoch {self.epoch}, step {self.global_step}")

    def next_batch(self, index: np.ndarray) -> tuple[torch.Tensor, list[MaskSpec]]:
        batch = np.stack([self.augment(self.images[i], self.rng) for i in index])
        seeds = self.rng.integers(0, 2**63 - 1, size=len(index))
        n = self.model_config.grid.num_patches
        masks = [make_mask(n, self.config.mask_ratio, int(s)) for s in seeds]
        return torch.from_numpy(batch).to(self.model_config.dtype), masks

    def train(self) -> list[float]:
        """Run all epochs; returns the epoch-averaged losses."""
        cfg = self.config
        if cfg.epochs == 0:
            self.save()
            return []

        fresh = not self.loss_log.exists() or self.global_step == 0
        with open(self.loss_log, "w" if fresh else "a", newline="") as f:
            writer = csv.writer(f)
            if fresh:
                writer.writerow(["step", "epoch", "lr", "loss"])
            for epoch in range(self.epoch, cfg.epochs):
                self.epoch = epoch
                self.rng = np.random.default_rng([cfg.seed, epoch])
                t0 = time.perf_counter()
                losses = []
                batches = iterate_batches(len(self.images), cfg.batch_size, self.rng)
                for batch_index, index in enumerate(batches):
                    images, masks = self.next_batch(index)
                    lr = lr_schedule(self.global_step, cfg, self.steps_per_epoch)
                    result = train_step(
                        self.model, self.optimizer, images, masks, lr, self.cam,
                        loss_mode=cfg.loss_mode, batch_index=batch_index, tiled=self.tiled,
                    )
                    writer.writerow([self.global_step, epoch, format_float(lr), format_float(result.loss)])
                    losses.append(result.loss)
                    self.global_step += 1
                f.flush()
                mean_loss = float(np.mean(losses))
                self.epoch_losses.append(mean_loss)
                logger.info(
                    f"epoch {epoch + 1}/{cfg.epochs}: loss {mean_loss:.5f} "
                    f"({(time.perf_counter() - t0) * 1000:.0f}ms)"
                )
                if (epoch + 1) % cfg.checkpoint_every == 0 and epoch + 1 < cfg.epochs:
                    self.epoch = epoch + 1
                    self.save()
        self.epoch = cfg.epochs
        self.save()
        return self.epoch_losses


def random_raw(k: int, rng: np.random.Generator) -> np.ndarray:
    """Raw vectors for k small, translucent Gaussians scattered over the image."""
    raw = np.zeros((k, RAW_DIM))
    raw[:, 0:2] = np.arctanh(rng.uniform(-0.95, 0.95, size=(k, 2)))
    raw[:, 2] = rng.normal(0.0, 1.0, size=k)
    raw[:, 3:6] = rng.normal(-3.0, 0.3, size=(k, 3))
    raw[:, 6:10] = rng.normal(0.0, 1.0, size=(k, 4))
    raw[:, 10:13] = rng.normal(0.0, 0.5, size=(k, 3))
    raw[:, 13] = rng.normal(0.0, 0.5, size=k)
    return raw


@dataclass
class FitResult:
    raw: np.ndarray       # (K, 14)
    losses: list[float]   # per step
    image: np.ndarray     # final render


def fit(
    image: np.ndarray,
    k: int,
    steps: int,
    lr: float = 0.01,
    cam: CameraConfig | None = None,
    clamp: ScaleClamp = ScaleClamp(),
    seed: int = 0,
    tiled: bool = True,
) -> FitResult:
    """
    Optimize k raw Gaussians directly against a single image with Adam.

    No backbone is involved; the result is an overfit scene usable by the
    zero-shot procedures.
    """
    h, w, _ = image.shape
    cam = cam or CameraConfig(height=h, width=w)
    target = torch.from_numpy(np.asarray(image, dtype=np.float64))
    raw = torch.nn.Parameter(torch.from_numpy(random_raw(k, np.random.default_rng(seed))))
    optimizer = torch.optim.Adam([raw], lr=lr)
    losses = []
    t0 = time.perf_counter()
    for step in range(steps):
        rendered = splat(raw[None], clamp, cam, tiled=tiled)[0]
        loss = ((rendered - target) ** 2).mean()
        if not torch.isfinite(loss):
            raise NonFiniteError(f"non-finite loss ({loss.item()}) at step {step}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(float(loss.item()))
        if (step + 1) % 100 == 0:
            logger.info(f"fit step {step + 1}/{steps}: loss {losses[-1]:.6f}")
    logger.debug(f"fit K={k}, {steps} steps: {(time.perf_counter() - t0) * 1000:.0f}ms")
    final = raw.detach().numpy().copy()
    with torch.no_grad():
        rendered = splat(torch.from_numpy(final)[None], clamp, cam, tiled=tiled)[0].numpy()
    return FitResult(raw=final, losses=losses, image=rendered)
