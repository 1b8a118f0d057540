from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .cls_head import ClassificationHead
from .encoder import HierarchicalEncoder
from .loc_head import LocalizationHead


@dataclass
class ModelConfig:
    resolution: int = 64
    base_patch: int = 4
    dims: tuple[int, ...] = (32, 64, 128, 256)
    depths: tuple[int, ...] = (2, 2, 2, 2)
    head_dim: int = 16
    mlp_ratio: float = 4.0
    overlap: bool = False
    loc_width: int = 64
    cls_width: int = 32
    cls_patch: int = 16
    cls_dim: int = 64
    cls_depth: int = 5
    cls_heads: int = 4
    cls_pos_embed: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["depths"] = list(self.depths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["dims"] = tuple(d["dims"])
        d["depths"] = tuple(d["depths"])
        return cls(**d)


class ForgeryTTT(nn.Module):
    """Shared encoder, localization head and self-supervised classification head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.encoder = HierarchicalEncoder(c.dims, c.depths, c.base_patch, c.head_dim, c.mlp_ratio, c.overlap)
        self.loc_head = LocalizationHead(c.dims, c.loc_width)
        grid = (c.resolution // c.cls_patch,) * 2 if c.cls_pos_embed else None
        self.cls_head = ClassificationHead(c.dims, c.cls_width, c.base_patch, c.cls_patch, c.cls_dim,
                                           c.cls_depth, c.cls_heads, c.mlp_ratio, grid)

    def predict_mask(self, images: torch.Tensor) -> torch.Tensor:
        feats = self.encoder(images)
        return self.loc_head(feats, images.shape[-2:])


def build_model(config: ModelConfig | None = None, seed: int = 0) -> ForgeryTTT:
    config = config or ModelConfig()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ForgeryTTT(config)
    return model


def to_tensor(images: np.ndarray, resolution: int | None = None) -> torch.Tensor:
    """(H, W, 3) or (N, H, W, 3) float array -> (N, 3, R, R) tensor, bilinear-resized if needed."""
    x = torch.as_tensor(np.asarray(images, dtype=np.float32))
    if x.dim() == 3:
        x = x[None]
    x = x.permute(0, 3, 1, 2).contiguous()
    if resolution is not None and tuple(x.shape[-2:]) != (resolution, resolution):
        x = F.interpolate(x, size=(resolution, resolution), mode="bilinear", align_corners=False)
    return x


def resize_mask(mask: np.ndarray, resolution: int) -> np.ndarray:
    m = torch.as_tensor((np.asarray(mask) > 0).astype(np.float32))[None, None]
    if tuple(m.shape[-2:]) != (resolution, resolution):
        m = F.interpolate(m, size=(resolution, resolution), mode="nearest-exact")
    return m[0, 0].numpy().astype(np.uint8)


@torch.no_grad()
def predict(model: ForgeryTTT, image: np.ndarray) -> np.ndarray:
    """Soft mask for one image at the model resolution, encoder pass not counted."""
    x = to_tensor(image, model.config.resolution)
    with model.encoder.uncounted():
        return model.predict_mask(x)[0].numpy()


__all__ = ["ModelConfig", "ForgeryTTT", "build_model", "to_tensor", "resize_mask", "predict"]
