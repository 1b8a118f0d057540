"""Synthetic forgery generation: splicing, copy-move and removal with exact masks.

Source images are procedural textures carrying soft-edged objects; each object's
support (alpha > 0.5) is an instance annotation. Forgeries are composited with a
hard alpha by default, so the ground-truth mask is exactly the pasted support.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import imageio
from .errors import (
    DegenerateOffsetError,
    EmptyDatasetError,
    ExhaustedPoolError,
    InvalidInstanceError,
    PlacementError,
)
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

KINDS = ("splice", "copy_move", "removal")
FILL_METHODS = ("mean_fill", "diffusion_fill")


@dataclass
class ForgerySample:
    image: np.ndarray  # float32 (H, W, 3) in [0, 1]
    mask: np.ndarray  # uint8 (H, W), 1 = manipulated
    kind: str
    seed: int
    provenance: tuple[str, ...] = ()

    @property
    def manipulated_fraction(self) -> float:
        return float(self.mask.mean())


@dataclass
class SourceImage:
    id: str
    image: np.ndarray
    instances: list[np.ndarray] = field(default_factory=list)


@dataclass
class SynthConfig:
    size: int = 64
    splice: int = 667
    copy_move: int = 667
    removal: int = 666
    authentic: int = 0
    pool_size: int = 200
    min_fraction: float = 0.01
    max_fraction: float = 0.5
    scale_min: float = 0.75
    scale_max: float = 1.25
    feather: float = 0.0
    removal_method: str = "mean_fill"
    split: str = "train"
    max_attempts: int = 20
    # acquisition traces of the procedural source images
    noise_min: float = 0.01
    noise_max: float = 0.06
    edge_min: float = 1.5  # Gaussian sigma softening authentic object edges
    edge_max: float = 2.5

    def counts(self) -> dict[str, int]:
        return {"splice": self.splice, "copy_move": self.copy_move,
                "removal": self.removal, "authentic": self.authentic}


@dataclass
class ManifestEntry:
    id: str
    kind: str
    seed: int
    split: str
    provenance: tuple[str, ...] = ()

    @property
    def image_path(self) -> str:
        return f"images/{self.id}.png"

    @property
    def mask_path(self) -> str:
        return f"masks/{self.id}.png"

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "kind": self.kind, "seed": self.seed,
                           "split": self.split, "provenance": list(self.provenance)},
                          sort_keys=True)


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    split: str
    global_seed: int

    def __len__(self) -> int:
        return len(self.entries)

    def kind_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.kind] = out.get(e.kind, 0) + 1
        return out

    def load_entry(self, entry: ManifestEntry) -> tuple[np.ndarray, np.ndarray]:
        return (imageio.read_rgb(self.root / entry.image_path),
                imageio.read_mask(self.root / entry.mask_path))

    def load_all(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack every entry into (N, H, W, 3) float32 images and (N, H, W) uint8 masks."""
        if not self.entries:
            raise EmptyDatasetError(f"dataset at {self.root} has no entries")
        pairs = [self.load_entry(e) for e in self.entries]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

    @classmethod
    def load(cls, root) -> "DatasetManifest":
        root = Path(root)
        path = root / "manifest.jsonl"
        if not path.is_file():
            raise EmptyDatasetError(f"no manifest.jsonl under {root}")
        entries = []
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            entries.append(ManifestEntry(rec["id"], rec["kind"], int(rec["seed"]), rec["split"],
                                         tuple(rec.get("provenance", ()))))
        meta_path = root / "dataset.json"
        meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
        split = meta.get("split", entries[0].split if entries else "test")
        return cls(root, entries, split, int(meta.get("global_seed", 0)))


def _as_instance(instance) -> np.ndarray:
    inst = np.asarray(instance) > 0
    if not inst.any():
        raise InvalidInstanceError("instance mask covers no pixels")
    return inst


def _feather_alpha(mask: np.ndarray, sigma: float) -> np.ndarray:
    alpha = mask.astype(np.float32)
    if sigma <= 0:
        return alpha
    return cv2.GaussianBlur(alpha, (0, 0), sigmaX=sigma, sigmaY=sigma, borderType=cv2.BORDER_REFLECT)


def _composite(base: np.ndarray, canvas: np.ndarray, mask: np.ndarray, feather: float) -> np.ndarray:
    if feather <= 0:
        return np.where(mask[..., None], canvas, base).astype(np.float32)
    alpha = _feather_alpha(mask, feather)[..., None]
    return np.clip(alpha * canvas + (1.0 - alpha) * base, 0.0, 1.0).astype(np.float32)


def splice(donor, donor_instance, host, placement, scale: float = 1.0, seed: int = 0,
           feather: float = 0.0) -> ForgerySample:
    """Paste the donor instance into ``host`` with its bounding box's top-left at ``placement``."""
    donor = np.asarray(donor, dtype=np.float32)
    host = np.asarray(host, dtype=np.float32)
    inst = _as_instance(donor_instance)
    ys, xs = np.nonzero(inst)
    y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
    patch = donor[y0:y1, x0:x1]
    pmask = inst[y0:y1, x0:x1]
    if scale != 1.0:
        ph = max(1, int(round(pmask.shape[0] * scale)))
        pw = max(1, int(round(pmask.shape[1] * scale)))
        patch = cv2.resize(patch, (pw, ph), interpolation=cv2.INTER_LINEAR)
        pmask = cv2.resize(pmask.astype(np.uint8), (pw, ph), interpolation=cv2.INTER_NEAREST) > 0
        if not pmask.any():
            raise InvalidInstanceError("instance vanished after rescaling")
    py, px = (int(v) for v in placement)
    ph, pw = pmask.shape
    H, W = host.shape[:2]
    if py < 0 or px < 0 or py + ph > H or px + pw > W:
        raise PlacementError(f"instance of size {ph}x{pw} at {(py, px)} does not fit {H}x{W}")
    mask = np.zeros((H, W), dtype=bool)
    mask[py:py + ph, px:px + pw] = pmask
    canvas = host.copy()
    canvas[py:py + ph, px:px + pw] = patch
    out = _composite(host, canvas, mask, feather)
    return ForgerySample(out, mask.astype(np.uint8), "splice", seed)


def copy_move(image, instance, offset, seed: int = 0, feather: float = 0.0) -> ForgerySample:
    """Translate the instance by ``offset`` within the same image; mask marks the destination."""
    image = np.asarray(image, dtype=np.float32)
    inst = _as_instance(instance)
    dy, dx = (int(v) for v in offset)
    if dy == 0 and dx == 0:
        raise DegenerateOffsetError("copy-move offset (0, 0) reproduces the source region")
    H, W = inst.shape
    ys, xs = np.nonzero(inst)
    if ys.min() + dy < 0 or xs.min() + dx < 0 or ys.max() + dy >= H or xs.max() + dx >= W:
        raise PlacementError(f"offset {(dy, dx)} pushes the instance outside {H}x{W}")
    mask = np.zeros((H, W), dtype=bool)
    mask[ys + dy, xs + dx] = True
    # full translated copy so a feathered edge blends real neighbouring content
    canvas = image.copy()
    sy0, sy1 = max(0, -dy), min(H, H - dy)
    sx0, sx1 = max(0, -dx), min(W, W - dx)
    canvas[sy0 + dy:sy1 + dy, sx0 + dx:sx1 + dx] = image[sy0:sy1, sx0:sx1]
    out = _composite(image, canvas, mask, feather)
    return ForgerySample(out, mask.astype(np.uint8), "copy_move", seed)


_NEIGHBOURS_8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
_NEIGHBOURS_4 = [(-1, 0), (1, 0), (0, -1), (0, 1)]


def _neighbour_mean(x: np.ndarray, offsets) -> np.ndarray:
    """Mean over in-bounds neighbours for every pixel of an (H, W, C) array."""
    H, W = x.shape[:2]
    pad = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    valid = np.pad(np.ones((H, W), dtype=np.float64), 1)
    total = np.zeros_like(x)
    count = np.zeros((H, W), dtype=np.float64)
    for dy, dx in offsets:
        total += pad[1 + dy:1 + dy + H, 1 + dx:1 + dx + W]
        count += valid[1 + dy:1 + dy + H, 1 + dx:1 + dx + W]
    return total / count[..., None]


def _crop_around(inst: np.ndarray, margin: int = 1):
    ys, xs = np.nonzero(inst)
    H, W = inst.shape
    return (slice(max(0, ys.min() - margin), min(H, ys.max() + 1 + margin)),
            slice(max(0, xs.min() - margin), min(W, xs.max() + 1 + margin)))


def mean_fill(image: np.ndarray, inst: np.ndarray, tol: float = 1e-4, max_iter: int = 20000) -> np.ndarray:
    """Iterative 8-neighbour averaging inside the hole until the largest update is below ``tol``."""
    win = _crop_around(inst)
    sub = image[win].astype(np.float64)
    hole = inst[win]
    x = sub.copy()
    x[hole] = sub[~hole].mean(axis=0) if (~hole).any() else 0.5
    for _ in range(max_iter):
        avg = _neighbour_mean(x, _NEIGHBOURS_8)
        delta = np.abs(avg[hole] - x[hole]).max()
        x[hole] = avg[hole]
        if delta < tol:
            break
    out = image.copy()
    out[win][hole] = x[hole].astype(image.dtype)
    return out


def diffusion_fill(image: np.ndarray, inst: np.ndarray, iterations: int = 200) -> np.ndarray:
    """Laplacian smoothing of the hole content, boundary held by the surrounding pixels."""
    win = _crop_around(inst)
    hole = inst[win]
    x = image[win].astype(np.float64)
    for _ in range(iterations):
        avg = _neighbour_mean(x, _NEIGHBOURS_4)
        x[hole] = avg[hole]
    out = image.copy()
    out[win][hole] = x[hole].astype(image.dtype)
    return out


def remove(image, instance, method: str = "mean_fill", seed: int = 0) -> ForgerySample:
    image = np.asarray(image, dtype=np.float32)
    inst = _as_instance(instance)
    if inst.all():
        raise InvalidInstanceError("instance covers the whole image; nothing to inpaint from")
    if method == "mean_fill":
        filled = mean_fill(image, inst)
    elif method == "diffusion_fill":
        filled = diffusion_fill(image, inst)
    else:
        raise ValueError(f"unknown removal method {method!r}; expected one of {FILL_METHODS}")
    out = image.copy()
    out[inst] = filled[inst]
    return ForgerySample(out, inst.astype(np.uint8), "removal", seed)


# procedural source pool

def _smooth_field(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    base = rng.uniform(0.15, 0.85, size=3).astype(np.float32)
    img = np.broadcast_to(base, (size, size, 3)).copy()
    for _ in range(3):
        freq = rng.uniform(0.5, 4.0)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        img += wave[..., None] * rng.uniform(-0.12, 0.12, size=3).astype(np.float32)
    return img


def _object_shape(rng: np.random.Generator, size: int) -> np.ndarray:
    s = size / 64.0
    canvas = np.zeros((size, size), dtype=np.uint8)
    r = rng.uniform(5, 16) * s
    cy, cx = rng.uniform(r, size - r, size=2)
    if rng.random() < 0.5:
        axes = (max(2, int(round(r))), max(2, int(round(r * rng.uniform(0.5, 1.0)))))
        cv2.ellipse(canvas, (int(round(cx)), int(round(cy))), axes, float(rng.uniform(0, 180)),
                    0, 360, 1, thickness=-1)
    else:
        n = int(rng.integers(3, 8))
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        radii = r * rng.uniform(0.6, 1.0, size=n)
        pts = np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)
        cv2.fillPoly(canvas, [np.round(pts).astype(np.int32)], 1)
    return canvas.astype(np.float32)


def make_source_image(rng: np.random.Generator, size: int, image_id: str, noise=(0.01, 0.06),
                      edge=(1.5, 2.5)) -> SourceImage:
    img = _smooth_field(rng, size)
    instances: list[np.ndarray] = []
    for _ in range(int(rng.integers(1, 4))):
        shape = _object_shape(rng, size)
        sigma = rng.uniform(*edge)
        alpha = cv2.GaussianBlur(shape, (0, 0), sigmaX=sigma, sigmaY=sigma)[..., None]
        obj = _smooth_field(rng, size)
        img = alpha * obj + (1 - alpha) * img
        support = alpha[..., 0] > 0.5
        instances = [m & ~support for m in instances]
        instances.append(support)
    noise_sigma = rng.uniform(*noise)
    img = img + rng.normal(0.0, noise_sigma, size=img.shape).astype(np.float32)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    instances = [m for m in instances if m.sum() >= 10]
    return SourceImage(image_id, img, instances)


def make_source_pool(n: int, size: int, seed: int, noise=(0.01, 0.06), edge=(1.5, 2.5)) -> list[SourceImage]:
    return [make_source_image(rng_for(seed, i), size, f"src{i:05d}", noise, edge) for i in range(n)]


# dataset generation

def _random_fit(rng: np.random.Generator, extent: int, total: int) -> int:
    if extent > total:
        raise PlacementError("instance larger than target")
    return int(rng.integers(0, total - extent + 1))


def _attempt(kind: str, pool: list[SourceImage], cfg: SynthConfig, rng: np.random.Generator,
             seed: int) -> ForgerySample:
    usable = [s for s in pool if s.instances]
    if kind == "authentic":
        src = pool[int(rng.integers(len(pool)))]
        return ForgerySample(src.image.copy(), np.zeros(src.image.shape[:2], np.uint8),
                             "authentic", seed, (src.id,))
    if not usable:
        raise ExhaustedPoolError("source pool has no annotated instances")
    if kind == "splice":
        if len(pool) < 2:
            raise ExhaustedPoolError("splicing needs at least two source images")
        donor = usable[int(rng.integers(len(usable)))]
        host = pool[int(rng.integers(len(pool)))]
        while host is donor:
            host = pool[int(rng.integers(len(pool)))]
        inst = donor.instances[int(rng.integers(len(donor.instances)))]
        scale = float(rng.uniform(cfg.scale_min, cfg.scale_max))
        ys, xs = np.nonzero(inst)
        ph = max(1, int(round((ys.max() - ys.min() + 1) * scale)))
        pw = max(1, int(round((xs.max() - xs.min() + 1) * scale)))
        H, W = host.image.shape[:2]
        placement = (_random_fit(rng, ph, H), _random_fit(rng, pw, W))
        s = splice(donor.image, inst, host.image, placement, scale, seed, cfg.feather)
        s.provenance = (donor.id, host.id)
        return s
    src = usable[int(rng.integers(len(usable)))]
    inst = src.instances[int(rng.integers(len(src.instances)))]
    if kind == "copy_move":
        H, W = inst.shape
        ys, xs = np.nonzero(inst)
        dy = _random_fit(rng, ys.max() - ys.min() + 1, H) - ys.min()
        dx = _random_fit(rng, xs.max() - xs.min() + 1, W) - xs.min()
        s = copy_move(src.image, inst, (dy, dx), seed, cfg.feather)
    elif kind == "removal":
        s = remove(src.image, inst, cfg.removal_method, seed)
    else:
        raise ValueError(f"unknown manipulation kind {kind!r}")
    s.provenance = (src.id,)
    return s


def make_sample(kind: str, pool: list[SourceImage], cfg: SynthConfig, seed: int) -> ForgerySample | None:
    """One forgery whose manipulated fraction lies in the configured bounds, or None after
    ``max_attempts`` failures."""
    rng = np.random.default_rng(seed)
    for _ in range(cfg.max_attempts):
        try:
            s = _attempt(kind, pool, cfg, rng, seed)
        except (PlacementError, DegenerateOffsetError, InvalidInstanceError):
            continue
        if kind == "authentic" or cfg.min_fraction <= s.manipulated_fraction <= cfg.max_fraction:
            return s
    return None


def iter_samples(cfg: SynthConfig, global_seed: int, pool: list[SourceImage] | None = None):
    """Yield (entry_id, ForgerySample) pairs; a pure function of (cfg, global_seed, pool)."""
    if pool is None:
        pool = make_source_pool(cfg.pool_size, cfg.size, derive_seed(global_seed, 0),
                                (cfg.noise_min, cfg.noise_max), (cfg.edge_min, cfg.edge_max))
    total = sum(cfg.counts().values())
    if total and not pool:
        raise ExhaustedPoolError("source pool is empty")
    i = 0
    for kind, count in cfg.counts().items():
        for _ in range(count):
            seed = derive_seed(global_seed, 1, i)
            sample = make_sample(kind, pool, cfg, seed)
            entry_id = f"{cfg.split}_{i:06d}"
            i += 1
            if sample is None:
                log.warning("skipping %s (%s): no valid sample in %d attempts", entry_id, kind,
                            cfg.max_attempts)
                continue
            yield entry_id, sample


def generate_dataset(cfg: SynthConfig, global_seed: int, root, pool: list[SourceImage] | None = None
                     ) -> DatasetManifest:
    """Write images, masks and ``manifest.jsonl`` under ``root``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for entry_id, sample in iter_samples(cfg, global_seed, pool):
        entry = ManifestEntry(entry_id, sample.kind, sample.seed, cfg.split, sample.provenance)
        imageio.write_rgb(root / entry.image_path, sample.image)
        imageio.write_mask(root / entry.mask_path, sample.mask)
        entries.append(entry)
    (root / "manifest.jsonl").write_text("".join(e.to_json() + "\n" for e in entries))
    (root / "dataset.json").write_text(json.dumps(
        {"split": cfg.split, "global_seed": global_seed, "count": len(entries)}, sort_keys=True) + "\n")
    return DatasetManifest(root, entries, cfg.split, global_seed)
