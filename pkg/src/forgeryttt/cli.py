"""Command-line entry point: ``forgeryttt synth|train|infer|ttt-eval|distort-eval``."""

from __future__ import annotations

import csv
import logging
import os
import sys
from pathlib import Path

import click

from . import imageio
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .errors import ForgeryTTTError
from .evaluation import evaluate, format_table, write_curve, write_rows
from .metrics import Distortion
from .model import predict, resize_mask, to_tensor
from .synth import DatasetManifest, generate_dataset
from .training import train
from .ttt import predict_with_ttt

OUT_ENV = "FORGERYTTT_OUT"
log = logging.getLogger("forgeryttt")


def _default_out(name: str) -> str:
    return str(Path(os.environ.get(OUT_ENV, "runs")) / name)


def shared_options(default_out: str):
    def wrap(fn):
        fn = click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
                          help="Override one config value; repeatable.")(fn)
        fn = click.option("--out", type=click.Path(file_okay=False), default=lambda: _default_out(default_out),
                          show_default=f"${OUT_ENV}/{default_out}, or runs/{default_out} when unset",
                          help="Output directory.")(fn)
        fn = click.option("--seed", type=int, default=None, show_default="run.seed",
                          help="Global seed for every random draw.")(fn)
        fn = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                          default=None, show_default="packaged default_config.ini",
                          help="INI config file layered over the defaults.")(fn)
        return fn
    return wrap


timing_option = click.option("--timing", is_flag=True, default=False,
                             help="Fill the elapsed_ms column (left empty by default so reruns are byte-identical).")


def _elapsed_ms(report, k: int, timing: bool) -> str:
    return f"{1000 * sum(report.step_times[:k]):.1f}" if timing else ""


def _setup(config_path, overrides, seed, out) -> tuple[RunConfig, Path]:
    try:
        cfg = load_config(config_path, overrides, seed)
    except (ValueError, OSError) as exc:
        raise click.ClickException(f"config error: {exc}") from exc
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.ini")
    return cfg, out


def _load_ckpt(path, cfg: RunConfig):
    ckpt = load_checkpoint(path)
    if ckpt.model.config.resolution != cfg.model.resolution:
        log.info("using checkpoint resolution %d (config says %d)", ckpt.model.config.resolution,
                 cfg.model.resolution)
    return ckpt


@click.group(context_settings={"help_option_names": ["-h", "--help"], "show_default": True})
@click.option("-v", "--verbose", is_flag=True, default=False, help="Log progress to stderr.")
def main(verbose):
    """Manipulation localization with self-supervised test-time training."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)


@main.command()
@shared_options("synth")
@click.option("--split", type=click.Choice(["train", "test"]), default=None,
              show_default="synth.split from the config", help="Split tag written to the manifest.")
def synth(config_path, seed, out, overrides, split):
    """Generate a synthetic forgery dataset (images/, masks/, manifest.jsonl)."""
    if split is not None:
        overrides = (*overrides, f"synth.split={split}")
    cfg, out = _setup(config_path, overrides, seed, out)
    man = generate_dataset(cfg.synth, cfg.seed, out)
    click.echo(f"wrote {len(man)} samples to {out} ({man.kind_counts()})")


@main.command(name="train")
@shared_options("checkpoint")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Dataset directory produced by `synth`.")
def train_cmd(config_path, seed, out, overrides, data_dir):
    """Train encoder, localization head and classification head jointly."""
    cfg, out = _setup(config_path, overrides, seed, out)
    manifest = DatasetManifest.load(data_dir)
    ckpt = train(manifest, cfg.resolved_train(), cfg.model, log_path=out / "train_log.csv")
    ckpt.config = {"run": cfg.to_ini()}
    save_checkpoint(out, ckpt)
    click.echo(f"checkpoint written to {out}")


@main.command()
@shared_options("infer")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--gt", "gt_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Ground-truth mask shown beside the overlay.")
@timing_option
def infer(config_path, seed, out, overrides, ckpt_path, image_path, gt_path, timing):
    """Predict one mask (with test-time training when ttt.steps > 0)."""
    cfg, out = _setup(config_path, overrides, seed, out)
    ckpt = _load_ckpt(ckpt_path, cfg)
    res = ckpt.model.config.resolution
    image = imageio.read_rgb(image_path)
    ttt_cfg = cfg.resolved_ttt()
    if ttt_cfg.steps == 0:
        prob = predict(ckpt.model, image)
    else:
        prob, report = predict_with_ttt(image, ckpt, ttt_cfg)
        _write_steps(out / "ttt_steps.csv", [(Path(image_path).stem, report)], timing)
    shown = to_tensor(image, res)[0].permute(1, 2, 0).numpy()
    gt = resize_mask(imageio.read_mask(gt_path), res) if gt_path else None
    imageio.write_soft_mask(out / "mask.png", prob)
    imageio.write_overlay(out / "overlay.png", shown, prob, gt)
    click.echo(f"mask written to {out / 'mask.png'}")


def _write_steps(path, reports, timing: bool) -> None:
    """Per-image adaptation log: one row per step, step 0 before any update."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "step", "ssl_loss", "query_prob", "passes", "skipped", "elapsed_ms"])
        for image_id, rep in reports:
            for k, loss in enumerate(rep.ssl_losses or [float("nan")]):
                prob = rep.query_probs[k] if rep.query_probs else float("nan")
                writer.writerow([image_id, k, f"{loss:.6f}", f"{prob:.6f}", rep.passes, int(rep.skipped),
                                 _elapsed_ms(rep, k, timing)])


@main.command(name="ttt-eval")
@shared_options("ttt_eval")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True)
@timing_option
def ttt_eval(config_path, seed, out, overrides, ckpt_path, data_dir, timing):
    """Evaluate with and without test-time training; write per-image CSVs and step curves."""
    cfg, out = _setup(config_path, overrides, seed, out)
    ckpt = _load_ckpt(ckpt_path, cfg)
    manifest = DatasetManifest.load(data_dir)
    limit = cfg.eval.limit
    plain = evaluate(ckpt.model, manifest, limit=limit)
    adapted = evaluate(ckpt.model, manifest, cfg.resolved_ttt(), limit=limit, record_curve=True)
    write_rows(out / "per_image_no_ttt.csv", plain.rows)
    write_rows(out / "per_image_ttt.csv", adapted.rows)
    write_curve(out / "ttt_curve.csv", adapted)
    with (out / "ttt_per_image_steps.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "step", "f_fix", "ssl_loss", "query_prob", "passes", "skipped", "elapsed_ms"])
        for row, fs, rep in zip(adapted.rows, adapted.step_f_fix, adapted.reports):
            losses = rep.ssl_losses or [float("nan")] * len(fs)
            probs = rep.query_probs or [float("nan")] * len(fs)
            for k, (f, l, p) in enumerate(zip(fs, losses, probs)):
                writer.writerow([row["id"], k, f"{f:.6f}", f"{l:.6f}", f"{p:.6f}", rep.passes, int(rep.skipped),
                                 _elapsed_ms(rep, k, timing)])
    table = format_table({"no_ttt": plain.summary(), cfg.ttt.strategy: adapted.summary()}, baseline="no_ttt")
    (out / "summary.txt").write_text(table)
    click.echo(table, nl=False)


@main.command(name="distort-eval")
@shared_options("distort_eval")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--distortion", "distortions", multiple=True, metavar="KIND:PARAM",
              show_default="eval.distortions (blur:3,5 noise:3,5 jpeg:50,100)",
              help="Distortion setting; repeatable.")
def distort_eval(config_path, seed, out, overrides, ckpt_path, data_dir, distortions):
    """Evaluate under blur, noise and JPEG settings; report deltas against clean inputs."""
    cfg, out = _setup(config_path, overrides, seed, out)
    try:
        settings = [Distortion.parse(d) for d in (distortions or cfg.eval.distortions)]
    except ForgeryTTTError as exc:
        raise click.ClickException(str(exc)) from exc
    ckpt = _load_ckpt(ckpt_path, cfg)
    manifest = DatasetManifest.load(data_dir)
    ttt_cfg = cfg.resolved_ttt() if cfg.eval.distort_with_ttt else None
    summaries = {}
    clean = evaluate(ckpt.model, manifest, ttt_cfg, limit=cfg.eval.limit)
    write_rows(out / "per_image_clean.csv", clean.rows)
    summaries["clean"] = clean.summary()
    for d in settings:
        res = evaluate(ckpt.model, manifest, ttt_cfg, distortion=d, seed=cfg.seed, limit=cfg.eval.limit)
        write_rows(out / f"per_image_{d.kind}_{d.param}.csv", res.rows)
        summaries[str(d)] = res.summary()
    table = format_table(summaries, baseline="clean")
    (out / "summary.txt").write_text(table)
    click.echo(table, nl=False)


def run():
    try:
        main(standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        sys.exit(1)
    except (ForgeryTTTError, OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    run()
