"""Run configuration: one INI file with a section per stage, every key defaulted."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .model import ModelConfig
from .synth import SynthConfig
from .training import TrainConfig
from .ttt import TTTConfig


@dataclass
class EvalConfig:
    distortions: tuple[str, ...] = ("blur:3", "blur:5", "noise:3", "noise:5", "jpeg:50", "jpeg:100")
    distort_with_ttt: bool = False
    limit: int = 0  # evaluate only the first N entries when > 0


@dataclass
class RunConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ttt: TTTConfig = field(default_factory=TTTConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    SECTIONS = ("synth", "model", "train", "ttt", "eval")

    def resolved_train(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    def resolved_ttt(self) -> TTTConfig:
        return dataclasses.replace(self.ttt, seed=self.seed)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["run"] = {"seed": str(self.seed)}
        for name in self.SECTIONS:
            section = getattr(self, name)
            cp[name] = {f.name: _format(getattr(section, f.name)) for f in dataclasses.fields(section)
                        if not (name in ("train", "ttt") and f.name == "seed")}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_ini())


def _format(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


_BOOLS = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _coerce(text: str, default, key: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            return _BOOLS[text.lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(t) for t in items)
            return tuple(items)
    except (KeyError, ValueError) as exc:
        raise ValueError(f"bad value {text!r} for {key}") from exc
    return text


def default_ini() -> str:
    return resources.files("forgeryttt").joinpath("default_config.ini").read_text()


def _apply(cfg: RunConfig, section: str, key: str, text: str) -> RunConfig:
    if section == "run":
        if key != "seed":
            raise ValueError(f"unknown key run.{key}")
        return dataclasses.replace(cfg, seed=int(text))
    if section not in RunConfig.SECTIONS:
        raise ValueError(f"unknown config section [{section}]")
    current = getattr(cfg, section)
    names = {f.name for f in dataclasses.fields(current)}
    if key not in names:
        raise ValueError(f"unknown key {section}.{key}")
    if key == "seed":
        raise ValueError(f"{section}.seed is derived from run.seed; set that instead")
    updated = dataclasses.replace(current, **{key: _coerce(text, getattr(current, key), f"{section}.{key}")})
    return dataclasses.replace(cfg, **{section: updated})


def load_config(path=None, overrides: list[str] | tuple[str, ...] = (), seed: int | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``section.key=value`` overrides, then ``seed``."""
    cfg = RunConfig()
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(default_ini())
        if path is not None:
            cp.read_string(Path(path).read_text())
    except configparser.Error as exc:
        raise ValueError(f"cannot parse config: {exc}") from exc
    for section in cp.sections():
        for key, text in cp[section].items():
            cfg = _apply(cfg, section, key, text)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValueError(f"override {item!r} must look like section.key=value")
        lhs, text = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        cfg = _apply(cfg, section, key.strip(), text)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg
