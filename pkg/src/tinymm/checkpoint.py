"""Checkpointing: a JSON manifest (step, config hash, RNG state, tensor index)
next to a flat binary file of raw little-endian tensor payloads.

The byte layout is deterministic: tensors are written in manifest index order,
and the manifest is serialized with sorted keys, so saving an unchanged state
twice produces identical files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np
import torch

MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "params.bin"
FORMAT_NAME = "tinymm-checkpoint"
FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


def config_hash(*configs: Any) -> str:
    """Stable short hash over dataclass config trees."""
    def plain(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        if isinstance(obj, dict):
            return {str(k): plain(v) for k, v in sorted(obj.items())}
        if isinstance(obj, (str, int, float, bool)) or obj is None:
            return obj
        return repr(obj)

    blob = json.dumps([plain(c) for c in configs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _named_tensors(model: torch.nn.Module,
                   optimizer: torch.optim.Optimizer | None) -> list[tuple[str, torch.Tensor]]:
    out = [(f"model.{name}", t) for name, t in model.state_dict().items()]
    if optimizer is not None:
        params = [p for group in optimizer.param_groups for p in group["params"]]
        name_of = {id(p): n for n, p in model.named_parameters()}
        for p in params:
            state = optimizer.state.get(p)
            if not state:
                continue
            pname = name_of[id(p)]
            for key, val in sorted(state.items()):
                if isinstance(val, torch.Tensor):
                    out.append((f"optim.{pname}.{key}", val))
                else:
                    out.append((f"optim.{pname}.{key}",
                                torch.tensor(float(val), dtype=torch.float64)))
    return out


def save_checkpoint(directory: str | Path, model: torch.nn.Module,
                    optimizer: torch.optim.Optimizer | None, step: int,
                    cfg_hash: str, generator: torch.Generator | None = None,
                    extra: dict[str, Any] | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    offset = 0
    chunks = []
    for name, tensor in _named_tensors(model, optimizer):
        arr = tensor.detach().cpu().numpy()
        raw = np.ascontiguousarray(arr).astype(_DTYPES[tensor.dtype]).tobytes()
        index.append({"name": name, "dtype": _DTYPES[tensor.dtype],
                      "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)

    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "step": step,
        "config_hash": cfg_hash,
        "rng": {"torch": generator.get_state().numpy().tobytes().hex()
                if generator is not None else None},
        "tensors": index,
        "extra": extra or {},
    }
    (directory / PAYLOAD_NAME).write_bytes(b"".join(chunks))
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return directory


def read_manifest(directory: str | Path) -> dict[str, Any]:
    manifest = json.loads((Path(directory) / MANIFEST_NAME).read_text())
    if manifest.get("format") != FORMAT_NAME:
        raise ValueError(f"not a {FORMAT_NAME} directory: {directory}")
    return manifest


def load_tensors(directory: str | Path) -> dict[str, torch.Tensor]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    payload = (directory / PAYLOAD_NAME).read_bytes()
    out = {}
    for entry in manifest["tensors"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"])
        out[entry["name"]] = torch.from_numpy(arr.copy()).to(_TORCH_DTYPES[entry["dtype"]])
    return out


def load_checkpoint(directory: str | Path, model: torch.nn.Module,
                    optimizer: torch.optim.Optimizer | None = None,
                    generator: torch.Generator | None = None,
                    expect_hash: str | None = None) -> dict[str, Any]:
    """Restore model (and optionally optimizer/generator) state. Returns the manifest."""
    manifest = read_manifest(directory)
    if expect_hash is not None and manifest["config_hash"] != expect_hash:
        raise ValueError(f"checkpoint config hash {manifest['config_hash']} does not "
                         f"match current configuration {expect_hash}")
    tensors = load_tensors(directory)
    model_state = {name[len("model."):]: t for name, t in tensors.items()
                   if name.startswith("model.")}
    model.load_state_dict(model_state)

    if optimizer is not None:
        by_param: dict[str, dict[str, torch.Tensor]] = {}
        for name, t in tensors.items():
            if not name.startswith("optim."):
                continue
            pname, key = name[len("optim."):].rsplit(".", 1)
            by_param.setdefault(pname, {})[key] = t
        params = dict(model.named_parameters())
        for pname, state in by_param.items():
            optimizer.state[params[pname]] = {
                key: (t if t.ndim else t.to(torch.float32))
                for key, t in state.items()}

    if generator is not None and manifest["rng"]["torch"] is not None:
        raw = bytes.fromhex(manifest["rng"]["torch"])
        generator.set_state(torch.from_numpy(np.frombuffer(raw, dtype=np.uint8).copy()))
    return manifest
