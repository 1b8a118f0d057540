"""Dataset-level evaluation: plain inference, test-time training, distortions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .errors import AUCUndefinedError, EmptyDatasetError
from .model import ForgeryTTT, predict, resize_mask
from .seeding import derive_seed
from .synth import DatasetManifest
from .ttt import TTTConfig, TTTReport, predict_with_ttt

ROW_COLUMNS = ("id", "kind", "f_fix", "f_best", "image_score", "label")


@dataclass
class EvalResult:
    rows: list[dict] = field(default_factory=list)
    # step curves, one list per image, only filled when TTT ran
    step_f_fix: list[list[float]] = field(default_factory=list)
    step_losses: list[list[float]] = field(default_factory=list)
    step_probs: list[list[float]] = field(default_factory=list)
    reports: list[TTTReport] = field(default_factory=list)

    @property
    def passes(self) -> list[int]:
        return [r.passes for r in self.reports]

    @property
    def skipped(self) -> list[bool]:
        return [r.skipped for r in self.reports]

    def mean(self, key: str) -> float:
        return float(np.mean([r[key] for r in self.rows])) if self.rows else float("nan")

    def summary(self) -> dict[str, float]:
        scores = [r["image_score"] for r in self.rows]
        labels = [r["label"] for r in self.rows]
        try:
            auc, acc = metrics.image_level_metrics(scores, labels)
        except AUCUndefinedError as err:
            auc, acc = float("nan"), err.acc
        return {"f_best": self.mean("f_best"), "f_fix": self.mean("f_fix"), "auc": auc, "acc": acc,
                "n": len(self.rows)}

    def curve(self) -> list[float]:
        """Mean F_fix after each adaptation step (index 0 = no adaptation)."""
        if not self.step_f_fix:
            return []
        return [float(v) for v in np.mean(np.array(self.step_f_fix), axis=0)]


def _entries(manifest: DatasetManifest, limit: int = 0):
    if len(manifest) == 0:
        raise EmptyDatasetError(f"dataset at {manifest.root} has no entries")
    return manifest.entries[:limit] if limit > 0 else manifest.entries


def evaluate(model: ForgeryTTT, manifest: DatasetManifest, ttt: TTTConfig | None = None,
             distortion: metrics.Distortion | None = None, seed: int = 0, limit: int = 0,
             record_curve: bool = False) -> EvalResult:
    """Score every entry; with ``ttt`` each image is adapted independently before prediction."""
    result = EvalResult()
    res = model.config.resolution
    for i, entry in enumerate(_entries(manifest, limit)):
        image, gt = manifest.load_entry(entry)
        if distortion is not None:
            image = metrics.distort(image, distortion, seed=derive_seed(seed, 7, i))
        gt = resize_mask(gt, res)
        if ttt is None or ttt.steps == 0 and not record_curve:
            pred = predict(model, image)
        else:
            pred, report = predict_with_ttt(image, model, ttt, record_masks=record_curve)
            if record_curve:
                # skipped images keep their initial prediction at every step
                masks = report.step_masks or [pred] * (ttt.steps + 1)
                result.step_f_fix.append([metrics.f_fix(m, gt) for m in masks])
                result.step_losses.append(report.ssl_losses or [math.nan] * (ttt.steps + 1))
                result.step_probs.append(report.query_probs or [math.nan] * (ttt.steps + 1))
            # masks are summarised above; drop them so large evaluations stay small in memory
            report.initial_mask = report.final_mask = None
            report.step_masks = []
            result.reports.append(report)
        result.rows.append({"id": entry.id, "kind": entry.kind, "f_fix": metrics.f_fix(pred, gt),
                            "f_best": metrics.f_best(pred, gt), "image_score": metrics.image_score(pred),
                            "label": int(gt.any())})
    return result


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def write_rows(path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ROW_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(r[k]) for k in ROW_COLUMNS})


def _column_nanmean(rows: list[list[float]]) -> np.ndarray:
    """Per-step mean over images, NaN (without a warning) where every image was skipped."""
    a = np.array(rows, dtype=float)
    if a.size == 0:
        return a
    counts = np.sum(~np.isnan(a), axis=0)
    sums = np.nansum(a, axis=0)
    return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def write_curve(path, result: EvalResult) -> None:
    """Mean F_fix, ssl loss and query probability per adaptation step."""
    losses, probs = _column_nanmean(result.step_losses), _column_nanmean(result.step_probs)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean_f_fix", "mean_ssl_loss", "mean_query_prob"])
        for k, f in enumerate(result.curve()):
            writer.writerow([k, _fmt(f), _fmt(float(losses[k])), _fmt(float(probs[k]))])


def _cell(v: float) -> str:
    return "  n/a" if v != v else f"{100 * v:5.1f}"


def format_table(summaries: dict[str, dict], baseline: str | None = None) -> str:
    """Rows of F_best / F_fix / AUC / ACC (x100, one decimal); optional delta columns vs ``baseline``."""
    name_w = max([len("setting")] + [len(n) for n in summaries])
    header = f"{'setting':<{name_w}}  F_best  F_fix    AUC    ACC"
    if baseline is not None:
        header += "  dF_best  dF_fix"
    lines = [header, "-" * len(header)]
    base = summaries.get(baseline) if baseline else None
    for name, s in summaries.items():
        line = f"{name:<{name_w}}   {_cell(s['f_best'])}  {_cell(s['f_fix'])}  {_cell(s['auc'])}  {_cell(s['acc'])}"
        if base is not None:
            line += f"   {100 * (s['f_best'] - base['f_best']):+6.1f}  {100 * (s['f_fix'] - base['f_fix']):+6.1f}"
        lines.append(line)
    return "\n".join(lines) + "\n"
