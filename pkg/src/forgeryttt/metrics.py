"""Pixel F1 (fixed and best threshold), image-level AUC / balanced accuracy, distortions."""

from __future__ import annotations

import io
from dataclasses import dataclass

import cv2
import numpy as np
from PIL import Image
from scipy.stats import rankdata

from .errors import AUCUndefinedError, ShapeError, UnsupportedDistortionError
from .imageio import to_uint8

F_BEST_GRID = np.arange(256) / 256.0


def _check_shapes(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return pred, gt > 0


def _f1(tp, fp, fn, n_gt):
    tp, fp, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn))
    denom = 2 * tp + fp + fn
    if n_gt == 0:
        # empty ground truth: perfect only if nothing is predicted
        return np.where(fp == 0, 1.0, 0.0)
    return np.divide(2 * tp, denom, out=np.zeros_like(denom), where=denom > 0)


def f1_at_threshold(pred, gt, t: float) -> float:
    pred, gt = _check_shapes(pred, gt)
    pos = pred > t
    tp = int(np.sum(pos & gt))
    fp = int(np.sum(pos & ~gt))
    fn = int(np.sum(~pos & gt))
    return float(_f1(tp, fp, fn, int(gt.sum())))


def f_fix(pred, gt) -> float:
    return f1_at_threshold(pred, gt, 0.5)


def f1_curve(pred, gt, thresholds=F_BEST_GRID) -> np.ndarray:
    """F1 at every threshold, computed from sorted scores instead of one pass per threshold."""
    pred, gt = _check_shapes(pred, gt)
    pos_scores = np.sort(pred[gt].ravel())
    neg_scores = np.sort(pred[~gt].ravel())
    t = np.asarray(thresholds, dtype=np.float64)
    tp = pos_scores.size - np.searchsorted(pos_scores, t, side="right")
    fp = neg_scores.size - np.searchsorted(neg_scores, t, side="right")
    fn = pos_scores.size - tp
    return _f1(tp, fp, fn, pos_scores.size)


def f_best(pred, gt) -> float:
    """Best F1 over the fixed grid t = k/256, k = 0..255."""
    return float(f1_curve(pred, gt).max())


def image_score(pred) -> float:
    """Image-level manipulation score: the strongest pixel response."""
    return float(np.max(pred))


def balanced_accuracy(scores, labels, threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    hit = scores > threshold
    rates = []
    if labels.any():
        rates.append(np.mean(hit[labels]))
    if (~labels).any():
        rates.append(np.mean(~hit[~labels]))
    return float(np.mean(rates))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores earn half credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise AUCUndefinedError("AUC needs at least one positive and one negative",
                                balanced_accuracy(scores, labels) if scores.size else float("nan"))
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def image_level_metrics(scores, labels) -> tuple[float, float]:
    """(AUC, balanced accuracy at 0.5). Raises AUCUndefinedError, carrying ``acc``, on one class."""
    if len(scores) != len(labels):
        raise ShapeError("scores and labels differ in length")
    return auc(scores, labels), balanced_accuracy(scores, labels)


# distortions

@dataclass(frozen=True)
class Distortion:
    kind: str  # "blur" | "noise" | "jpeg"
    param: int

    ALLOWED = {"blur": (3, 5), "noise": (0, 3, 5), "jpeg": (50, 100)}

    def __post_init__(self):
        allowed = self.ALLOWED.get(self.kind)
        if allowed is None:
            raise UnsupportedDistortionError(f"unknown distortion {self.kind!r}")
        if self.param not in allowed:
            raise UnsupportedDistortionError(f"{self.kind} supports {allowed}, got {self.param}")

    def __str__(self) -> str:
        return f"{self.kind}:{self.param}"

    @classmethod
    def parse(cls, text: str) -> "Distortion":
        try:
            kind, param = text.strip().split(":")
            return cls(kind.strip(), int(param))
        except ValueError as exc:
            raise UnsupportedDistortionError(f"bad distortion spec {text!r}; expected kind:param") from exc


DISTORTION_SUITE = tuple(Distortion(k, p) for k, p in
                         (("blur", 3), ("blur", 5), ("noise", 3), ("noise", 5), ("jpeg", 50), ("jpeg", 100)))


def distort(image, distortion: Distortion | str, seed: int = 0) -> np.ndarray:
    """Gaussian blur (kernel k), Gaussian noise (sigma on the 0-255 scale) or JPEG round trip."""
    if isinstance(distortion, str):
        distortion = Distortion.parse(distortion)
    image = np.asarray(image, dtype=np.float32)
    if distortion.kind == "blur":
        k = distortion.param
        out = cv2.GaussianBlur(image, (k, k), 0, borderType=cv2.BORDER_REFLECT)
    elif distortion.kind == "noise":
        if distortion.param == 0:
            return image.copy()
        rng = np.random.default_rng(seed)
        out = image + rng.normal(0.0, distortion.param / 255.0, size=image.shape).astype(np.float32)
    else:
        buf = io.BytesIO()
        Image.fromarray(to_uint8(image), mode="RGB").save(buf, format="JPEG", quality=distortion.param)
        buf.seek(0)
        with Image.open(buf) as im:
            out = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.clip(out, 0.0, 1.0).astype(np.float32)
