"""Localization head: all-MLP decoder from multi-scale features to a per-pixel probability."""

import torch
import torch.nn as nn

from .errors import ShapeError
from .layers import upsample_to

EPS = 1e-7


class LocalizationHead(nn.Module):
    def __init__(self, in_dims=(32, 64, 128, 256), width: int = 64):
        super().__init__()
        self.in_dims = tuple(in_dims)
        # 1x1 convolutions are per-pixel linear layers
        self.proj = nn.ModuleList(nn.Conv2d(c, width, 1) for c in in_dims)
        self.fuse = nn.Conv2d(width * len(in_dims), width, 1)
        self.act = nn.GELU()
        self.pred = nn.Conv2d(width, 1, 1)

    def forward(self, features: list[torch.Tensor], out_size: tuple[int, int]) -> torch.Tensor:
        """Soft mask (B, H, W) in [0, 1] at ``out_size``."""
        if len(features) != len(self.proj):
            raise ShapeError(f"expected {len(self.proj)} feature scales, got {len(features)}")
        size = tuple(features[0].shape[-2:])
        parts = []
        for f, proj, c in zip(features, self.proj, self.in_dims):
            if f.shape[1] != c:
                raise ShapeError(f"feature width {f.shape[1]} != configured {c}")
            parts.append(upsample_to(proj(f), size))
        x = self.act(self.fuse(torch.cat(parts, dim=1)))
        prob = torch.sigmoid(self.pred(x))
        return upsample_to(prob, tuple(out_size))[:, 0]


def bce_loss(pred: torch.Tensor, target: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Pixel-mean binary cross-entropy per image, then mean over the batch."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    p = pred.clamp(eps, 1 - eps)
    t = target.to(p.dtype)
    per_pixel = -(t * torch.log(p) + (1 - t) * torch.log1p(-p))
    if per_pixel.dim() <= 2:
        return per_pixel.mean()
    return per_pixel.flatten(1).mean(dim=1).mean()
