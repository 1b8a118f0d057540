"""Hierarchical patch-token encoder: the shared backbone adapted at test time."""

from contextlib import contextmanager

import torch
import torch.nn as nn

from .errors import ShapeError
from .layers import Block, init_weights


class PatchMerging(nn.Module):
    """Concatenate each 2x2 neighbourhood and project: halves resolution, changes width."""

    def __init__(self, dim_in: int, dim_out: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim_in)
        self.reduction = nn.Linear(4 * dim_in, dim_out, bias=False)

    def forward(self, x):  # (B, H, W, C)
        x = torch.cat([x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]], dim=-1)
        return self.reduction(self.norm(x))


class ConvMerging(nn.Module):
    """Overlapping 3x3 stride-2 conv downsampling followed by LayerNorm."""

    def __init__(self, dim_in: int, dim_out: int):
        super().__init__()
        self.conv = nn.Conv2d(dim_in, dim_out, 3, stride=2, padding=1)
        self.norm = nn.LayerNorm(dim_out)

    def forward(self, x):  # (B, H, W, C)
        return self.norm(self.conv(x.permute(0, 3, 1, 2)).permute(0, 2, 3, 1))


class HierarchicalEncoder(nn.Module):
    def __init__(self, dims=(32, 64, 128, 256), depths=(2, 2, 2, 2), base_patch: int = 4,
                 head_dim: int = 16, mlp_ratio: float = 4.0, overlap: bool = False):
        super().__init__()
        if len(dims) != len(depths):
            raise ValueError("dims and depths must have one entry per stage")
        self.dims = tuple(dims)
        self.base_patch = base_patch
        self.overlap = overlap
        # overlap=True: overlapping conv embedding/merging and depthwise-conv MLPs, so neighbouring
        # pixels share tokens; overlap=False: plain non-overlapping patches and 2x2 patch merging
        if overlap:
            self.patch_embed = nn.Conv2d(3, dims[0], kernel_size=2 * base_patch - 1, stride=base_patch,
                                         padding=base_patch - 1)
        else:
            self.patch_embed = nn.Conv2d(3, dims[0], kernel_size=base_patch, stride=base_patch)
        self.embed_norm = nn.LayerNorm(dims[0])
        self.stages = nn.ModuleList(
            nn.ModuleList(Block(d, max(1, d // head_dim), mlp_ratio, conv_mlp=overlap) for _ in range(n))
            for d, n in zip(dims, depths))
        merge = ConvMerging if overlap else PatchMerging
        self.merges = nn.ModuleList(merge(dims[i], dims[i + 1]) for i in range(len(dims) - 1))
        self.out_norms = nn.ModuleList(nn.LayerNorm(d) for d in dims)
        init_weights(self)
        self.passes = 0
        self._counting = True

    @property
    def num_stages(self) -> int:
        return len(self.dims)

    @property
    def stride(self) -> int:
        return self.base_patch * 2 ** (self.num_stages - 1)

    def reset_pass_counter(self) -> None:
        self.passes = 0

    def pass_counter(self) -> int:
        """Images encoded since the last reset."""
        return self.passes

    @contextmanager
    def uncounted(self):
        prev, self._counting = self._counting, False
        try:
            yield self
        finally:
            self._counting = prev

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        """(B, 3, H, W) in [0, 1] -> one (B, c_s, H/(base*2^s), W/(base*2^s)) map per stage."""
        B, _, H, W = images.shape
        if H % self.stride or W % self.stride:
            raise ShapeError(f"input {H}x{W} not divisible by encoder stride {self.stride}; resize first")
        if self._counting:
            self.passes += B
        x = self.patch_embed((images - 0.5) / 0.25).permute(0, 2, 3, 1)
        x = self.embed_norm(x)
        feats = []
        for s, blocks in enumerate(self.stages):
            b, h, w, c = x.shape
            t = x.reshape(b, h * w, c)
            for blk in blocks:
                t = blk(t, hw=(h, w))
            x = t.reshape(b, h, w, c)
            feats.append(self.out_norms[s](x).permute(0, 3, 1, 2))
            if s < len(self.merges):
                x = self.merges[s](x)
        return feats
