import configparser
import subprocess
import sys

import pytest
from click.testing import CliRunner

from forgeryttt.cli import main
from forgeryttt.config import RunConfig, load_config

TINY_INI = """
[synth]
size = 16
splice = 3
copy_move = 3
removal = 2
pool_size = 8
max_fraction = 0.6

[model]
resolution = 16
dims = 8,16
depths = 1,1
head_dim = 4
mlp_ratio = 2.0
loc_width = 8
cls_width = 4
cls_patch = 8
cls_dim = 8
cls_depth = 2
cls_heads = 2

[train]
epochs = 1
batch_size = 4

[ttt]
steps = 2
batch = 2
lr = 0.001
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.ini"
    cfg.write_text(TINY_INI)
    runner = CliRunner()
    r = runner.invoke(main, ["synth", "--config", str(cfg), "--seed", "4", "--out", str(root / "data")])
    assert r.exit_code == 0, r.output
    r = runner.invoke(main, ["train", "--config", str(cfg), "--seed", "4", "--data", str(root / "data"),
                             "--out", str(root / "ckpt")])
    assert r.exit_code == 0, r.output
    return root, cfg


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def test_synth_layout_and_config_echo(workspace):
    root, _ = workspace
    data = root / "data"
    assert len((data / "manifest.jsonl").read_text().splitlines()) == 8
    assert len(list((data / "images").glob("*.png"))) == 8
    echoed = load_config(data / "config.ini")
    assert echoed.seed == 4 and echoed.synth.splice == 3


def test_train_outputs(workspace):
    root, _ = workspace
    ckpt = root / "ckpt"
    assert (ckpt / "manifest.json").exists() and (ckpt / "tensors.bin").exists()
    assert (ckpt / "train_log.csv").read_text().startswith("epoch,step,loc_loss")


def test_infer_with_and_without_ttt(workspace, tmp_path):
    root, cfg = workspace
    image = next((root / "data" / "images").glob("*.png"))
    mask = root / "data" / "masks" / image.name
    r = invoke("infer", "--config", cfg, "--checkpoint", root / "ckpt", "--image", image, "--gt", mask,
               "--out", tmp_path / "a")
    assert r.exit_code == 0, r.output
    assert (tmp_path / "a" / "mask.png").exists() and (tmp_path / "a" / "overlay.png").exists()
    assert (tmp_path / "a" / "ttt_steps.csv").read_text().splitlines()[0].endswith("elapsed_ms")
    r = invoke("infer", "--config", cfg, "--checkpoint", root / "ckpt", "--image", image, "--set", "ttt.steps=0",
               "--out", tmp_path / "b")
    assert r.exit_code == 0 and not (tmp_path / "b" / "ttt_steps.csv").exists()


def test_ttt_eval_outputs_are_reproducible(workspace, tmp_path):
    root, cfg = workspace
    outs = []
    for name in ("a", "b"):
        r = invoke("ttt-eval", "--config", cfg, "--checkpoint", root / "ckpt", "--data", root / "data",
                   "--out", tmp_path / name)
        assert r.exit_code == 0, r.output
        assert "F_fix" in r.output and "dF_fix" in r.output
        outs.append(tmp_path / name)
    for f in ("per_image_no_ttt.csv", "per_image_ttt.csv", "ttt_curve.csv", "ttt_per_image_steps.csv",
              "summary.txt", "config.ini"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
    curve = (outs[0] / "ttt_curve.csv").read_text().splitlines()
    assert curve[0] == "step,mean_f_fix,mean_ssl_loss,mean_query_prob" and len(curve) == 4


def test_timing_flag_fills_elapsed(workspace, tmp_path):
    root, cfg = workspace
    r = invoke("ttt-eval", "--config", cfg, "--checkpoint", root / "ckpt", "--data", root / "data",
               "--set", "eval.limit=2", "--timing", "--out", tmp_path)
    assert r.exit_code == 0, r.output
    rows = (tmp_path / "ttt_per_image_steps.csv").read_text().splitlines()[1:]
    assert all(row.rsplit(",", 1)[1] != "" for row in rows)


def test_distort_eval_all_settings(workspace, tmp_path):
    root, cfg = workspace
    r = invoke("distort-eval", "--config", cfg, "--checkpoint", root / "ckpt", "--data", root / "data",
               "--out", tmp_path)
    assert r.exit_code == 0, r.output
    for name in ("clean", "blur:3", "blur:5", "noise:3", "noise:5", "jpeg:50", "jpeg:100"):
        assert name in r.output
    assert len(list(tmp_path.glob("per_image_*.csv"))) == 7


def test_distort_eval_rejects_unknown_setting(workspace, tmp_path):
    root, cfg = workspace
    r = invoke("distort-eval", "--config", cfg, "--checkpoint", root / "ckpt", "--data", root / "data",
               "--distortion", "blur:7", "--out", tmp_path)
    assert r.exit_code != 0 and "blur" in r.output


def test_bad_override_is_a_config_error(tmp_path):
    r = invoke("synth", "--set", "synth.nonsense=1", "--out", tmp_path)
    assert r.exit_code != 0 and "config error" in r.output
    r = invoke("synth", "--set", "train.seed=3", "--out", tmp_path)
    assert r.exit_code != 0 and "run.seed" in r.output


def test_env_var_sets_default_output_root(tmp_path):
    r = CliRunner(env={"FORGERYTTT_OUT": str(tmp_path)}).invoke(
        main, ["synth", "--set", "synth.size=16", "--set", "synth.splice=1", "--set", "synth.copy_move=0",
               "--set", "synth.removal=0", "--set", "synth.pool_size=4", "--set", "synth.max_fraction=0.6"])
    assert r.exit_code == 0, r.output
    assert (tmp_path / "synth" / "manifest.jsonl").exists()


def test_console_script_reports_library_errors(tmp_path):
    (tmp_path / "ck").mkdir()
    img = tmp_path / "x.png"
    img.write_bytes(b"")
    proc = subprocess.run([sys.executable, "-m", "forgeryttt.cli", "infer", "--checkpoint", str(tmp_path / "ck"),
                           "--image", str(img), "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stderr.startswith("error:") and len(proc.stderr.strip().splitlines()) == 1


def test_default_config_matches_dataclass_defaults():
    cp = configparser.ConfigParser()
    cp.read_string(RunConfig().to_ini())
    assert load_config() == RunConfig()


def test_help_shows_defaults():
    r = invoke("ttt-eval", "--help")
    assert r.exit_code == 0 and "[default:" in r.output and "FORGERYTTT_OUT" in r.output
