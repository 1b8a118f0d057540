"""Per-sample test-time training of the encoder through the classification head.

For each test image the frozen localization head predicts an initial mask, the
mask groups the encoded tokens, and manipulated queries built from those tokens
(pseudo-label 1) drive a few optimizer steps on a private copy of the encoder.
Three strategies build the per-step query batch:

* ``ttt_base``: B augmented views, each encoded, one full query per view.
* ``ttt_td``:   as base, with token dropout applied to every query.
* ``ttt_obqg``: one encoding, B independent token-dropout draws on its grid.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .augment import random_view
from .checkpoint import Checkpoint
from .cls_head import AUTHENTIC, MANIPULATED, Query, downsample_mask, make_queries, ssl_loss
from .encoder import HierarchicalEncoder
from .model import ForgeryTTT, to_tensor
from .seeding import derive_seed, rng_for
from .training import make_optimizer

STRATEGIES = ("ttt_base", "ttt_td", "ttt_obqg")
REFRESH = ("initial_mask", "per_step")
QUERY_KINDS = {"manipulated": (MANIPULATED,), "authentic": (AUTHENTIC,), "both": (MANIPULATED, AUTHENTIC)}


@dataclass
class TTTConfig:
    steps: int = 10
    lr: float = 2e-5
    dropout: float = 0.5
    batch: int = 32
    strategy: str = "ttt_obqg"
    mask_refresh: str = "initial_mask"
    query_kind: str = "manipulated"
    augment: bool = True
    crop_min: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.mask_refresh not in REFRESH:
            raise ValueError(f"mask_refresh must be one of {REFRESH}")
        if self.query_kind not in QUERY_KINDS:
            raise ValueError(f"query_kind must be one of {tuple(QUERY_KINDS)}")


@dataclass
class TTTReport:
    ssl_losses: list[float] = field(default_factory=list)  # K + 1 entries, index 0 before adapting
    query_probs: list[float] = field(default_factory=list)  # y of the undropped manipulated query
    passes: int = 0
    wall_time: float = 0.0
    step_times: list[float] = field(default_factory=list)
    peak_live_elements: int = 0
    skipped: bool = False
    skip_reason: str = ""
    initial_mask: np.ndarray | None = None
    final_mask: np.ndarray | None = None
    step_masks: list[np.ndarray] = field(default_factory=list)


def _kinds_available(labels: np.ndarray, kinds) -> bool:
    if MANIPULATED in kinds and not labels.any():
        return False
    if AUTHENTIC in kinds and labels.all():
        return False
    return True


def make_query_batch_obqg(grid: torch.Tensor, labels: np.ndarray, batch: int, r: float, seed: int,
                          kinds=(MANIPULATED,)) -> list[Query]:
    """``batch`` independent dropout draws over one (R, C, d) token grid."""
    out = []
    for b in range(batch):
        out.extend(make_queries(grid, labels, r, rng_for(seed, b), kinds))
    return out


def _augmented_views(image: torch.Tensor, soft_mask: torch.Tensor, batch: int, seed: int,
                     config: TTTConfig, patch: int, kinds) -> tuple[torch.Tensor, list[np.ndarray]]:
    views, labels = [], []
    for b in range(batch):
        rng = rng_for(seed, b)
        view, vmask = image, (soft_mask > 0.5).to(image.dtype)
        if config.augment:
            for _ in range(10):
                v, m = random_view(image, soft_mask, rng, crop_min=config.crop_min)
                if _kinds_available(downsample_mask(m.numpy(), patch), kinds):
                    view, vmask = v, m
                    break
        views.append(view)
        labels.append(downsample_mask(vmask.numpy(), patch))
    return torch.stack(views), labels


def make_query_batch_base(encoder: HierarchicalEncoder, model: ForgeryTTT, image: torch.Tensor,
                          soft_mask: torch.Tensor, batch: int, r: float, seed: int, config: TTTConfig,
                          kinds=(MANIPULATED,)) -> tuple[list[Query], int]:
    """Encode ``batch`` augmented views separately; one query set per view.

    ``r = 0`` gives ttt_base, ``r > 0`` gives ttt_td. Returns the queries and
    the number of encoded feature elements (for the memory proxy).
    """
    patch = model.config.cls_patch
    views, labels = _augmented_views(image, soft_mask, batch, seed, config, patch, kinds)
    feats = encoder(views)
    grids = model.cls_head.token_grid(feats)
    queries = []
    for b in range(batch):
        queries.extend(make_queries(grids[b], labels[b], r, rng_for(seed, 1000 + b), kinds))
    return queries, sum(f.numel() for f in feats)


def _resolve(checkpoint) -> ForgeryTTT:
    return checkpoint.model if isinstance(checkpoint, Checkpoint) else checkpoint


def ttt_adapt(image, checkpoint: Checkpoint | ForgeryTTT, config: TTTConfig | None = None,
              record_masks: bool = False) -> tuple[HierarchicalEncoder, TTTReport]:
    """Adapt a private copy of the encoder to one image; heads are only read.

    Losses and query probabilities in the report are measured on a fixed
    reference batch, so entries are comparable across steps. Those monitoring
    passes and the initial mask prediction are not counted as encoder passes.
    """
    config = config or TTTConfig()
    model = _resolve(checkpoint)
    patch = model.config.cls_patch
    kinds = QUERY_KINDS[config.query_kind]
    x = to_tensor(image, model.config.resolution) if not isinstance(image, torch.Tensor) else image
    if x.dim() == 3:
        x = x[None]
    encoder = copy.deepcopy(model.encoder)
    encoder.reset_pass_counter()
    report = TTTReport()
    started = time.perf_counter()

    def monitor(labels):
        with torch.no_grad(), encoder.uncounted():
            feats = encoder(x)
            soft = model.loc_head(feats, x.shape[-2:])[0]
            grid = model.cls_head.token_grid(feats)[0]
            ref = make_query_batch_obqg(grid, labels, config.batch, config.dropout,
                                        derive_seed(config.seed, 9), kinds)
            y = model.cls_head([q.tokens for q in ref])
            loss = float(ssl_loss(y, [q.label for q in ref]))
            prob = float("nan")
            if labels.any():
                full = make_queries(grid, labels, 0.0, np.random.default_rng(0), (MANIPULATED,))
                prob = float(model.cls_head.classify(full[0]))
        return soft, loss, prob

    with torch.no_grad(), encoder.uncounted():
        soft0 = model.loc_head(encoder(x), x.shape[-2:])[0]
    report.initial_mask = soft0.numpy().copy()
    labels = downsample_mask(report.initial_mask, patch)
    if not _kinds_available(labels, kinds):
        report.skipped = True
        report.skip_reason = "no foreground tokens in the initial prediction" if MANIPULATED in kinds \
            else "no background tokens in the initial prediction"
        report.final_mask = report.initial_mask
        report.wall_time = time.perf_counter() - started
        return encoder, report

    soft_mask = soft0
    params = list(encoder.parameters())
    optimizer = make_optimizer(model, config.lr, params)
    for k in range(config.steps + 1):
        soft, loss, prob = monitor(labels)
        report.ssl_losses.append(loss)
        report.query_probs.append(prob)
        if record_masks:
            report.step_masks.append(soft.numpy().copy())
        if k == config.steps:
            report.final_mask = soft.numpy().copy()
            break
        if config.mask_refresh == "per_step":
            fresh = downsample_mask(soft.numpy(), patch)
            if _kinds_available(fresh, kinds):
                labels, soft_mask = fresh, soft
        step_start = time.perf_counter()
        seed = derive_seed(config.seed, 3, k)
        if config.strategy == "ttt_obqg":
            feats = encoder(x)
            grid = model.cls_head.token_grid(feats)[0]
            queries = make_query_batch_obqg(grid, labels, config.batch, config.dropout, seed, kinds)
            encoded = sum(f.numel() for f in feats)
        else:
            r = config.dropout if config.strategy == "ttt_td" else 0.0
            queries, encoded = make_query_batch_base(encoder, model, x[0], soft_mask, config.batch, r,
                                                     seed, config, kinds)
        y = model.cls_head([q.tokens for q in queries])
        loss_t = ssl_loss(y, [q.label for q in queries])
        live = encoded + sum((q.tokens.shape[0] + 1) * q.tokens.shape[1] for q in queries)
        report.peak_live_elements = max(report.peak_live_elements, live)
        grads = torch.autograd.grad(loss_t, params, allow_unused=True)
        for p, g in zip(params, grads):
            p.grad = g
        optimizer.step()
        report.step_times.append(time.perf_counter() - step_start)
    report.passes = encoder.pass_counter()
    report.wall_time = time.perf_counter() - started
    for p in params:
        p.grad = None
    return encoder, report


def predict_with_ttt(image, checkpoint: Checkpoint | ForgeryTTT, config: TTTConfig | None = None,
                     record_masks: bool = False) -> tuple[np.ndarray, TTTReport]:
    """Adapt to ``image`` then predict its mask with the adapted encoder."""
    _, report = ttt_adapt(image, checkpoint, config, record_masks)
    return report.final_mask, report
