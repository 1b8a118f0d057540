"""Training-time training: localization loss plus weighted self-supervised query loss."""

from __future__ import annotations

import base64
import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .augment import random_view
from .checkpoint import Checkpoint
from .cls_head import downsample_mask, make_queries, ssl_loss
from .errors import EmptyDatasetError, TrainingDivergedError
from .loc_head import bce_loss
from .model import ForgeryTTT, ModelConfig, build_model, resize_mask, to_tensor
from .seeding import rng_for
from .synth import DatasetManifest

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "loc_loss", "ssl_loss", "total", "lr")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 2
    lr: float = 2e-4
    lr_decay: float = 0.9
    ssl_weight: float = 0.01
    dropout: float = 0.5
    hflip: bool = True
    crop: bool = True
    crop_min: float = 0.8
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.ssl_weight < 0:
            raise ValueError("ssl_weight must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def make_optimizer(model: ForgeryTTT, lr: float, params=None) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters() if params is None else params, lr=lr,
                            betas=(0.9, 0.999), eps=1e-8)


def compute_losses(model: ForgeryTTT, images: torch.Tensor, masks: torch.Tensor, ssl_weight: float,
                   dropout: float, rng: np.random.Generator):
    """Forward pass for one batch. Returns (total, loc, ssl) tensors."""
    feats = model.encoder(images)
    pred = model.loc_head(feats, images.shape[-2:])
    loc = bce_loss(pred, masks)
    grid = model.cls_head.token_grid(feats)
    patch = model.config.cls_patch
    queries = []
    for b in range(images.shape[0]):
        labels = downsample_mask(masks[b].numpy(), patch)
        queries.extend(make_queries(grid[b], labels, dropout, rng))
    if queries:
        y = model.cls_head([q.tokens for q in queries])
        ssl = ssl_loss(y, [q.label for q in queries])
    else:
        ssl = loc.new_zeros(())
    return loc + ssl_weight * ssl, loc, ssl


def train_step(model: ForgeryTTT, optimizer: torch.optim.Optimizer, images: torch.Tensor,
               masks: torch.Tensor, config: TrainConfig, rng: np.random.Generator) -> dict[str, float]:
    """One optimizer update on all three parameter sets."""
    if images.shape[0] == 0:
        raise EmptyDatasetError("empty batch")
    model.train()
    total, loc, ssl = compute_losses(model, images, masks, config.ssl_weight, config.dropout, rng)
    if not torch.isfinite(total):
        raise TrainingDivergedError(f"non-finite loss: loc={float(loc)} ssl={float(ssl)}")
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    if config.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    optimizer.step()
    loc_f, ssl_f = loc.item(), ssl.item()
    return {"loc": loc_f, "ssl": ssl_f, "total": loc_f + config.ssl_weight * ssl_f}


def augment_batch(images: torch.Tensor, masks: torch.Tensor, config: TrainConfig,
                  rng: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    if not (config.hflip or config.crop):
        return images, masks
    views = [random_view(images[i], masks[i], rng, config.hflip, config.crop, config.crop_min)
             for i in range(images.shape[0])]
    return torch.stack([v[0] for v in views]), torch.stack([v[1] for v in views])


def load_training_arrays(manifest: DatasetManifest, resolution: int) -> tuple[torch.Tensor, torch.Tensor]:
    images, masks = manifest.load_all()
    x = to_tensor(images, resolution)
    m = torch.as_tensor(np.stack([resize_mask(mk, resolution) for mk in masks]).astype(np.float32))
    return x, m


def train(manifest: DatasetManifest | tuple, config: TrainConfig, model_config: ModelConfig | None = None,
          resume: Checkpoint | None = None, log_path=None, history: list | None = None) -> Checkpoint:
    """Train for ``config.epochs`` epochs (continuing from ``resume`` if given).

    ``manifest`` may also be a pre-loaded ``(images, masks)`` tensor pair. Per-step
    loss rows are appended to ``history`` when given.
    Every random draw derives from (seed, epoch), so resuming from a saved
    checkpoint reproduces an uninterrupted run exactly.
    """
    if isinstance(manifest, DatasetManifest):
        if len(manifest) == 0:
            raise EmptyDatasetError(f"dataset at {manifest.root} is empty")
        mc = resume.model.config if resume is not None else (model_config or ModelConfig())
        images, masks = load_training_arrays(manifest, mc.resolution)
    else:
        images, masks = manifest
        if images.shape[0] == 0:
            raise EmptyDatasetError("no training samples")
    if resume is not None:
        model, start = resume.model, resume.epoch
    else:
        model, start = build_model(model_config or ModelConfig(), seed=config.seed), 0
    optimizer = make_optimizer(model, config.lr)
    if resume is not None and resume.optimizer_state is not None:
        optimizer.load_state_dict(resume.optimizer_state)

    rows = []
    n = images.shape[0]
    for epoch in range(start, config.epochs):
        lr = config.lr * config.lr_decay ** epoch
        for g in optimizer.param_groups:
            g["lr"] = lr
        rng = rng_for(config.seed, 2, epoch)
        order = rng.permutation(n)
        sums = np.zeros(3)
        steps = math.ceil(n / config.batch_size)
        for step in range(steps):
            idx = torch.as_tensor(order[step * config.batch_size:(step + 1) * config.batch_size])
            x, m = augment_batch(images[idx], masks[idx], config, rng)
            losses = train_step(model, optimizer, x, m, config, rng)
            rows.append({"epoch": epoch, "step": step, "loc_loss": losses["loc"], "ssl_loss": losses["ssl"],
                         "total": losses["total"], "lr": lr})
            sums += (losses["loc"], losses["ssl"], losses["total"])
        sums /= steps
        log.info("epoch %d: loc %.4f ssl %.4f total %.4f lr %.2e", epoch, *sums, lr)

    if history is not None:
        history.extend(rows)
    if log_path is not None:
        write_train_log(log_path, rows, append=resume is not None)
    model.eval()
    return Checkpoint(model, optimizer.state_dict(), {"train": asdict(config)}, max(start, config.epochs),
                      {"torch": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode("ascii"),
                       "seed": config.seed})


def write_train_log(path, rows, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with path.open("w" if new else "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        if new:
            writer.writeheader()
        for r in rows:
            writer.writerow({k: (f"{v:.8g}" if isinstance(v, float) else v) for k, v in r.items()})
