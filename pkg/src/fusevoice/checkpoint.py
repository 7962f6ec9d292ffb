"""Versioned binary checkpoints with named sections.

Layout: 4-byte magic, uint32 format version, uint32 header length, a JSON
header (sorted keys), then the concatenated little-endian array payload.
Every tensor is filed under a section named for the subsystem it belongs to
(gsf_encoder, fusion/*, text_encoder, duration_flow, acoustic_flow,
posterior, decoder, optimizer), so sections can be inspected or diffed
independently.  Serialisation is pure — identical model state and metadata
produce identical bytes.
"""

from __future__ import annotations

import dataclasses
import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, config_hash, from_mapping
from .backbone import Model

MAGIC = b"FVCK"
FORMAT_VERSION = 1

_PREFIX = struct.Struct("<4sII")

_TEXT_BLOCK = re.compile(r"^text_encoder\.blocks\.(\d+)\.")
_FLOW_BLOCK = re.compile(r"^flow\.layers\.(\d+)\.block\.")


class CheckpointError(ValueError):
    pass


def section_of(param_name: str) -> str:
    """Map a state_dict key to its checkpoint section."""
    if param_name.startswith("frontend."):
        return "gsf_encoder"
    m = _TEXT_BLOCK.match(param_name)
    if m:
        return f"fusion/text.{m.group(1)}"
    if param_name.startswith("text_encoder."):
        return "text_encoder"
    if param_name.startswith("dur_block."):
        return "fusion/duration"
    m = _FLOW_BLOCK.match(param_name)
    if m:
        return f"fusion/flow.{m.group(1)}"
    if param_name.startswith("flow."):
        return "acoustic_flow"
    if param_name.startswith("dur_flow."):
        return "duration_flow"
    if param_name.startswith("posterior."):
        return "posterior"
    if param_name.startswith("decoder."):
        return "decoder"
    raise CheckpointError(f"no checkpoint section covers parameter {param_name!r}")


def _to_le(arr: np.ndarray) -> np.ndarray:
    dt = arr.dtype.newbyteorder("<")
    return np.ascontiguousarray(arr.astype(dt, copy=False))


@dataclass
class LoadedCheckpoint:
    model: Model
    cfg: RunConfig
    seed: int
    step: int
    header: dict
    optimizer_state: dict | None  # param name -> {"step","exp_avg","exp_avg_sq"}


def save_checkpoint(
    path: str | Path,
    model: Model,
    seed: int,
    step: int,
    optimizer: torch.optim.Optimizer | None = None,
) -> None:
    cfg = model.cfg
    arrays: list[dict] = []
    payload = bytearray()

    def push(section: str, name: str, arr: np.ndarray) -> None:
        arr = _to_le(arr)
        arrays.append(
            {
                "section": section,
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.str,
                "offset": len(payload),
                "nbytes": arr.nbytes,
            }
        )
        payload.extend(arr.tobytes())

    state = model.state_dict()
    for name in sorted(state):
        push(section_of(name), name, state[name].detach().cpu().numpy())

    opt_header: dict | None = None
    if optimizer is not None:
        name_of = {id(p): n for n, p in model.named_parameters()}
        group = optimizer.param_groups[0]
        opt_header = {
            "lr": group["lr"],
            "betas": list(group["betas"]),
            "eps": group["eps"],
        }
        for param, st in optimizer.state.items():
            pname = name_of.get(id(param))
            if pname is None:
                raise CheckpointError("optimizer tracks a parameter not in the model")
            for key in sorted(st):
                val = st[key]
                arr = val.detach().cpu().numpy() if torch.is_tensor(val) else np.asarray(val)
                push("optimizer", f"{pname}.{key}", arr)

    header = {
        "format": FORMAT_VERSION,
        "config": dataclasses.asdict(cfg),
        "config_hash": config_hash(cfg),
        "seed": seed,
        "step": step,
        "n_speakers": model.n_speakers,
        "n_styles": model.n_styles,
        "arrays": arrays,
        "optimizer": opt_header,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) < _PREFIX.size:
            raise CheckpointError(f"{path}: truncated checkpoint prefix")
        magic, version, header_len = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format version {version} (supported: {FORMAT_VERSION})"
            )
        return json.loads(fh.read(header_len).decode())


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint prefix")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {version} (supported: {FORMAT_VERSION})"
        )
    header = json.loads(blob[_PREFIX.size : _PREFIX.size + header_len].decode())
    base = _PREFIX.size + header_len

    def pull(entry: dict) -> np.ndarray:
        start = base + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(blob):
            raise CheckpointError(f"{path}: array {entry['name']!r} runs past end of file")
        arr = np.frombuffer(blob[start:end], dtype=np.dtype(entry["dtype"]))
        return arr.reshape(entry["shape"]).copy()

    cfg = from_mapping(header["config"])
    model = Model(cfg, header["n_speakers"], header["n_styles"])
    state = {}
    opt_state: dict = {}
    for entry in header["arrays"]:
        arr = pull(entry)
        if entry["section"] == "optimizer":
            pname, key = entry["name"].rsplit(".", 1)
            opt_state.setdefault(pname, {})[key] = torch.from_numpy(arr)
        else:
            state[entry["name"]] = torch.from_numpy(arr)
    model.load_state_dict(state, strict=True)
    return LoadedCheckpoint(
        model=model,
        cfg=cfg,
        seed=header["seed"],
        step=header["step"],
        header=header,
        optimizer_state=opt_state if header.get("optimizer") else None,
    )


def restore_optimizer(
    optimizer: torch.optim.Optimizer, model: Model, opt_state: dict
) -> None:
    """Install a loaded optimizer-state mapping onto a fresh optimizer."""
    params = dict(model.named_parameters())
    for pname, st in opt_state.items():
        if pname not in params:
            raise CheckpointError(f"optimizer state names unknown parameter {pname!r}")
        optimizer.state[params[pname]] = dict(st)
