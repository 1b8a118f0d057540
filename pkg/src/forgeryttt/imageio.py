"""PNG helpers. Images are float32 HxWx3 in [0, 1]; masks are uint8 HxW in {0, 1}."""

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_rgb(path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image), mode="RGB").save(Path(path), format="PNG")


def read_rgb(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(Path(path), format="PNG")


def read_mask(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        return (np.asarray(im.convert("L")) > 127).astype(np.uint8)


def write_soft_mask(path, prob: np.ndarray) -> None:
    """Grayscale PNG with value round(255 * p)."""
    Image.fromarray(to_uint8(prob), mode="L").save(Path(path), format="PNG")


def overlay(image: np.ndarray, prob: np.ndarray, gt: np.ndarray | None = None) -> np.ndarray:
    """Red tint where p > 0.5; ground truth rendered side by side when given."""
    img = np.asarray(image, dtype=np.float32).copy()
    hit = np.asarray(prob) > 0.5
    img[hit, 0] = 0.5 * img[hit, 0] + 0.5
    img[hit, 1:] *= 0.5
    if gt is None:
        return img
    gt_rgb = np.repeat((np.asarray(gt) > 0).astype(np.float32)[..., None], 3, axis=2)
    return np.concatenate([img, gt_rgb], axis=1)


def write_overlay(path, image, prob, gt=None) -> None:
    write_rgb(path, overlay(image, prob, gt))
