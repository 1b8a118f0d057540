"""Checkpoint directory: ``manifest.json`` plus a raw little-endian float32 blob.

The manifest lists every tensor with its shape, dtype and byte offset and carries
a SHA-256 of the blob. Optimizer moments live in the same blob under
``optim.<param>.<slot>`` names.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .model import ForgeryTTT, ModelConfig, build_model

FORMAT = "forgeryttt-checkpoint/1"
BLOB = "tensors.bin"


@dataclass
class Checkpoint:
    model: ForgeryTTT
    optimizer_state: dict | None = None
    config: dict = field(default_factory=dict)
    epoch: int = 0
    rng: dict = field(default_factory=dict)


def _optimizer_tensors(model: ForgeryTTT, opt_state: dict):
    names = [n for n, _ in model.named_parameters()]
    tensors, steps = {}, {}
    for idx, slots in opt_state["state"].items():
        pname = names[int(idx)]
        for slot, value in slots.items():
            if slot == "step":
                steps[pname] = float(value)
            else:
                tensors[f"optim.{pname}.{slot}"] = value
    groups = []
    for g in opt_state["param_groups"]:
        g = dict(g)
        g["params"] = [names[i] for i in g["params"]]
        groups.append({k: (list(v) if isinstance(v, tuple) else v) for k, v in g.items()})
    return tensors, steps, groups


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = {k: v for k, v in ckpt.model.state_dict().items()}
    opt_meta = None
    if ckpt.optimizer_state is not None:
        opt_tensors, steps, groups = _optimizer_tensors(ckpt.model, ckpt.optimizer_state)
        tensors.update(opt_tensors)
        opt_meta = {"steps": steps, "param_groups": groups}
    entries, chunks, offset = [], [], 0
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy()
        if arr.dtype != np.float32:
            raise CheckpointError(f"tensor {name} has dtype {arr.dtype}; only float32 is stored")
        raw = arr.astype("<f4", copy=False).tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32",
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    (path / BLOB).write_bytes(blob)
    manifest = {
        "format": FORMAT,
        "model_config": ckpt.model.config.to_dict(),
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "rng": ckpt.rng,
        "optimizer": opt_meta,
        "tensors": entries,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        blob = (path / BLOB).read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint at {path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unrecognised checkpoint format {manifest.get('format')!r}")
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise CheckpointError(f"content hash mismatch for {path / BLOB}")
    arrays = {}
    for e in manifest["tensors"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = torch.from_numpy(np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).copy())
    model = build_model(ModelConfig.from_dict(manifest["model_config"]))
    model_keys = set(model.state_dict())
    try:
        model.load_state_dict({k: v for k, v in arrays.items() if k in model_keys}, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint tensors do not match the model config: {exc}") from exc
    opt_state = None
    meta = manifest.get("optimizer")
    if meta is not None:
        names = [n for n, _ in model.named_parameters()]
        index = {n: i for i, n in enumerate(names)}
        state = {}
        for pname, step in meta["steps"].items():
            slots = {"step": torch.tensor(step)}
            for key, value in arrays.items():
                prefix = f"optim.{pname}."
                if key.startswith(prefix):
                    slots[key[len(prefix):]] = value
            state[index[pname]] = slots
        groups = []
        for g in meta["param_groups"]:
            g = dict(g)
            g["params"] = [index[n] for n in g["params"]]
            if "betas" in g:
                g["betas"] = tuple(g["betas"])
            groups.append(g)
        opt_state = {"state": state, "param_groups": groups}
    return Checkpoint(model, opt_state, manifest.get("config", {}), int(manifest.get("epoch", 0)),
                      manifest.get("rng", {}))
