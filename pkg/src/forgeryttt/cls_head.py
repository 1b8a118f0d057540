"""Self-supervised manipulation classification head.

Multi-scale features are fused into a token grid. A mask max-pooled to token
resolution splits the grid into foreground (manipulated) and background
(authentic) tokens; each group is thinned by the same random dropout ratio and
the survivors form a query. A manipulated query is foreground then background
tokens (pseudo-label 1); an authentic query is background tokens only (label 0).
A learnable class token is prepended and the transformer blocks decide whether
the query is manipulated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn

from .errors import EmptyGroupError, InvalidQueryError, ShapeError
from .layers import Block, init_weights, upsample_to
from .loc_head import EPS

MANIPULATED = "manipulated"
AUTHENTIC = "authentic"


class TokenGroup(NamedTuple):
    tokens: torch.Tensor  # (n, d)
    indices: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class Query:
    tokens: torch.Tensor  # (L, d)
    kind: str
    source_indices: list[tuple[int, int]]

    @property
    def label(self) -> int:
        return 1 if self.kind == MANIPULATED else 0


class ClassificationHead(nn.Module):
    def __init__(self, in_dims=(32, 64, 128, 256), width: int = 32, base_patch: int = 4,
                 patch: int = 16, dim: int = 64, depth: int = 5, num_heads: int = 4,
                 mlp_ratio: float = 4.0, pos_embed_grid: tuple[int, int] | None = None):
        super().__init__()
        if patch % base_patch:
            raise ValueError(f"patch {patch} must be a multiple of the encoder base patch {base_patch}")
        if depth < 1:
            raise ValueError("classification head needs at least one block")
        self.in_dims = tuple(in_dims)
        self.patch = patch
        self.dim = dim
        self.proj = nn.ModuleList(nn.Conv2d(c, width, 1) for c in in_dims)
        k = patch // base_patch  # patch size measured on the finest feature map
        self.patch_embed = nn.Conv2d(width * len(in_dims), dim, kernel_size=k, stride=k)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = None
        if pos_embed_grid is not None:
            self.pos_embed = nn.Parameter(torch.zeros(1, pos_embed_grid[0], pos_embed_grid[1], dim))
        self.blocks = nn.ModuleList(Block(dim, num_heads, mlp_ratio) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)
        self.fc = nn.Linear(dim, 1)
        init_weights(self)
        nn.init.normal_(self.cls_token, std=0.02)
        if self.pos_embed is not None:
            nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def fuse(self, features: list[torch.Tensor]) -> torch.Tensor:
        """Project every scale to a common width, upsample to the finest grid, concatenate."""
        if len(features) != len(self.proj):
            raise ShapeError(f"expected {len(self.proj)} feature scales, got {len(features)}")
        size = tuple(features[0].shape[-2:])
        parts = []
        for f, proj, c in zip(features, self.proj, self.in_dims):
            if f.shape[1] != c:
                raise ShapeError(f"feature width {f.shape[1]} != configured {c}")
            parts.append(upsample_to(proj(f), size))
        return torch.cat(parts, dim=1)

    def embed(self, fused: torch.Tensor) -> torch.Tensor:
        """Fused map (B, C, h1, w1) -> token grid (B, h/p, w/p, d)."""
        k = self.patch_embed.kernel_size[0]
        if fused.shape[-2] % k or fused.shape[-1] % k:
            raise ShapeError(f"fused map {tuple(fused.shape[-2:])} not divisible by token patch {k}")
        grid = self.patch_embed(fused).permute(0, 2, 3, 1)
        if self.pos_embed is not None:
            if grid.shape[1:3] != self.pos_embed.shape[1:3]:
                raise ShapeError("token grid does not match the learned position grid")
            grid = grid + self.pos_embed
        return grid

    def token_grid(self, features: list[torch.Tensor]) -> torch.Tensor:
        return self.embed(self.fuse(features))

    def forward(self, queries: list[torch.Tensor]) -> torch.Tensor:
        """Probability that each query is manipulated, shape (Q,). Queries may differ in length."""
        if not queries:
            raise InvalidQueryError("no queries to classify")
        for q in queries:
            if q.dim() != 2 or q.shape[1] != self.dim:
                raise ShapeError(f"query tokens must be (L, {self.dim}); got {tuple(q.shape)}")
            if q.shape[0] == 0:
                raise InvalidQueryError("empty query")
        lengths = [q.shape[0] for q in queries]
        longest = max(lengths)
        cls = self.cls_token.expand(len(queries), 1, self.dim)
        if all(n == longest for n in lengths):
            x = torch.cat([cls, torch.stack(queries)], dim=1)
            key_mask = None
        else:
            padded = queries[0].new_zeros(len(queries), longest, self.dim)
            key_mask = torch.zeros(len(queries), longest + 1, dtype=torch.bool, device=padded.device)
            key_mask[:, 0] = True
            rows = []
            for i, q in enumerate(queries):
                rows.append(torch.cat([q, q.new_zeros(longest - q.shape[0], self.dim)]))
                key_mask[i, 1:1 + q.shape[0]] = True
            x = torch.cat([cls, torch.stack(rows)], dim=1)
        for blk in self.blocks:
            x = blk(x, key_mask)
        return torch.sigmoid(self.fc(self.norm(x[:, 0]))[:, 0])

    def classify(self, query: Query | torch.Tensor) -> torch.Tensor:
        tokens = query.tokens if isinstance(query, Query) else query
        return self([tokens])[0]


def downsample_mask(mask, patch: int) -> np.ndarray:
    """Token labels (h/p, w/p), True where any pixel of the p x p cell is manipulated.

    Soft masks are thresholded at 0.5 first.
    """
    if isinstance(mask, torch.Tensor):
        mask = mask.detach().cpu().numpy()
    m = np.asarray(mask)
    m = m > 0.5 if m.dtype.kind == "f" else m > 0
    H, W = m.shape
    if H % patch or W % patch:
        raise ShapeError(f"mask {H}x{W} not divisible by patch {patch}")
    return m.reshape(H // patch, patch, W // patch, patch).any(axis=(1, 3))


def group_tokens(grid: torch.Tensor, labels) -> tuple[TokenGroup, TokenGroup]:
    """Split a (R, C, d) grid into foreground and background groups in row-major order."""
    labels = np.asarray(labels, dtype=bool)
    if tuple(grid.shape[:2]) != labels.shape:
        raise ShapeError(f"grid {tuple(grid.shape[:2])} vs labels {labels.shape}")
    flat = grid.reshape(-1, grid.shape[-1])
    lab = labels.reshape(-1)
    cols = labels.shape[1]
    fg = np.flatnonzero(lab)
    bg = np.flatnonzero(~lab)

    def pick(idx):
        return TokenGroup(flat[torch.as_tensor(idx, dtype=torch.long)],
                          [(int(i) // cols, int(i) % cols) for i in idx])

    return pick(fg), pick(bg)


def retained_count(n: int, r: float) -> int:
    """max(1, round((1 - r) * n)), halves rounded up."""
    return max(1, int(math.floor((1.0 - r) * n + 0.5 + 1e-9)))


def dropout_tokens(group: TokenGroup, r: float, seed: int | np.random.Generator) -> TokenGroup:
    """Keep a uniformly random subset of ``retained_count`` tokens, original order preserved."""
    n = len(group)
    if n == 0:
        raise EmptyGroupError("cannot drop tokens from an empty group")
    if not 0.0 <= r < 1.0:
        raise ValueError(f"dropout ratio must lie in [0, 1), got {r}")
    keep = retained_count(n, r)
    if keep == n:
        return group
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=keep, replace=False))
    return TokenGroup(group.tokens[torch.as_tensor(idx, dtype=torch.long)],
                      [group.indices[i] for i in idx])


def build_query(fg: TokenGroup | None, bg: TokenGroup | None, kind: str) -> Query:
    fg_n = len(fg) if fg is not None else 0
    bg_n = len(bg) if bg is not None else 0
    if kind == MANIPULATED:
        if fg_n == 0:
            raise InvalidQueryError("a manipulated query needs at least one foreground token")
        if bg_n == 0:
            return Query(fg.tokens, kind, list(fg.indices))
        return Query(torch.cat([fg.tokens, bg.tokens]), kind, list(fg.indices) + list(bg.indices))
    if kind == AUTHENTIC:
        if bg_n == 0:
            raise InvalidQueryError("an authentic query needs at least one background token")
        return Query(bg.tokens, kind, list(bg.indices))
    raise InvalidQueryError(f"unknown query kind {kind!r}")


def make_queries(grid: torch.Tensor, labels, r: float, rng: np.random.Generator,
                 kinds=(MANIPULATED, AUTHENTIC)) -> list[Query]:
    """Group, drop out and build one query of each requested kind that the labels allow.

    Both query kinds share the same retained background tokens.
    """
    fg, bg = group_tokens(grid, labels)
    fg_kept = dropout_tokens(fg, r, rng) if len(fg) else fg
    bg_kept = dropout_tokens(bg, r, rng) if len(bg) else bg
    out = []
    for kind in kinds:
        if kind == MANIPULATED and len(fg_kept) == 0:
            continue
        if kind == AUTHENTIC and len(bg_kept) == 0:
            continue
        out.append(build_query(fg_kept, bg_kept, kind))
    return out


def ssl_loss(y: torch.Tensor, labels, eps: float = EPS) -> torch.Tensor:
    """Binary cross-entropy of query probabilities against pseudo-labels, averaged over queries."""
    y = torch.as_tensor(y)
    t = torch.as_tensor(labels, dtype=y.dtype, device=y.device)
    p = y.clamp(eps, 1 - eps)
    return -(t * torch.log(p) + (1 - t) * torch.log1p(-p)).mean()
