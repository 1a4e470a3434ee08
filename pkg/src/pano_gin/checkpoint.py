"""``pano-gin-v1`` checkpoints: a text manifest plus one raw float32 blob.

A checkpoint is a directory holding ``manifest.txt`` and ``tensors.bin``::

    pano-gin-v1
    blob tensors.bin 123456
    [config]
    lr=0.0004
    ...
    [state]
    step=10
    rng={...json...}
    [tensors]
    face_gen.enc0.feature_weight<TAB>16,4,4,4<TAB>0<TAB>4096
    ...

Tensor lines give name, comma-separated shape, byte offset and byte length
into the little-endian float32 blob. Both files are written to temporary
names and renamed into place.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .layers import VERSION

MANIFEST = "manifest.txt"
BLOB = "tensors.bin"
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_checkpoint(path, tensors: dict[str, np.ndarray], config: dict, state: dict) -> Path:
    """Low-level writer; ``state`` values must be JSON-serialisable."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        if any(c in name for c in "\t\n"):
            raise CheckpointError(f"invalid tensor name {name!r}")
        raw = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
        shape = ",".join(str(n) for n in np.shape(arr))
        lines.append(f"{name}\t{shape}\t{offset}\t{len(raw)}")
        chunks.append(raw)
        offset += len(raw)
    head = [VERSION, f"blob {BLOB} {offset}", "[config]"]
    head += [f"{k}={v}" for k, v in config.items()]
    head += ["[state]"] + [f"{k}={json.dumps(v)}" for k, v in state.items()]
    head += ["[tensors]"]
    _atomic_write(path / BLOB, b"".join(chunks))
    _atomic_write(path / MANIFEST, ("\n".join(head + lines) + "\n").encode())
    return path


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str], dict]:
    """Return (tensors, raw config strings, state) or raise CheckpointError."""
    path = Path(path)
    try:
        text = (path / MANIFEST).read_text()
        blob = (path / BLOB).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    lines = text.splitlines()
    if not lines or lines[0].strip() != VERSION:
        found = lines[0].strip() if lines else "<empty>"
        raise CheckpointError(f"checkpoint version {found!r} is not {VERSION!r}")
    try:
        tag, blob_name, size = lines[1].split()
        size = int(size)
    except (IndexError, ValueError):
        raise CheckpointError("malformed blob line in manifest") from None
    if tag != "blob" or blob_name != BLOB:
        raise CheckpointError("malformed blob line in manifest")
    if len(blob) != size:
        raise CheckpointError(f"blob has {len(blob)} bytes, manifest declares {size} (truncated?)")

    section = None
    config, state, tensors = {}, {}, {}
    for n, line in enumerate(lines[2:], 3):
        if not line:
            continue
        if line in ("[config]", "[state]", "[tensors]"):
            section = line
            continue
        try:
            if section == "[config]":
                k, v = line.split("=", 1)
                config[k] = v
            elif section == "[state]":
                k, v = line.split("=", 1)
                state[k] = json.loads(v)
            elif section == "[tensors]":
                name, shape, off, length = line.split("\t")
                shape = tuple(int(s) for s in shape.split(",") if s)
                off, length = int(off), int(length)
                count = int(np.prod(shape)) if shape else 1
                if length != 4 * count or off < 0 or off + length > len(blob):
                    raise ValueError("extent does not match shape or blob")
                tensors[name] = np.frombuffer(blob, _LE_F32, count, off).astype(np.float32)\
                    .reshape(shape)
            else:
                raise ValueError("line outside any section")
        except ValueError as exc:
            raise CheckpointError(f"manifest line {n}: {exc}: {line[:80]!r}") from None
    return tensors, config, state


def save_checkpoint(path, trainer) -> Path:
    """Model parameters, both optimiser states, RNG state and config of a Trainer."""
    tensors = dict(trainer.model.state_dict())
    for tag, opt in (("opt_g", trainer.opt_g), ("opt_d", trainer.opt_d)):
        for name in opt.m:
            tensors[f"{tag}.m.{name}"] = opt.m[name]
            tensors[f"{tag}.v.{name}"] = opt.v[name]
    state = {
        "step": trainer.step_count,
        "opt_g_step": trainer.opt_g.step,
        "opt_d_step": trainer.opt_d.step,
        "rng": trainer.rng.bit_generator.state,
    }
    return write_checkpoint(path, tensors, trainer.config.to_dict(), state)


def load_checkpoint(path, faces=None, overrides: dict | None = None):
    """Rebuild a Trainer exactly as it was saved (``overrides`` patch the config)."""
    from .train import ConfigError, TrainConfig, Trainer

    tensors, config, state = read_checkpoint(path)
    try:
        cfg = TrainConfig.from_dict({**config, **(overrides or {})})
    except ConfigError as exc:
        raise CheckpointError(f"bad config in checkpoint: {exc}") from None
    trainer = Trainer(cfg, faces)
    model_state = {k: v for k, v in tensors.items() if not k.startswith(("opt_g.", "opt_d."))}
    try:
        trainer.model.load_state_dict(model_state)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    for tag, opt in (("opt_g", trainer.opt_g), ("opt_d", trainer.opt_d)):
        prefix_m, prefix_v = f"{tag}.m.", f"{tag}.v."
        opt.m = {k[len(prefix_m):]: v.copy() for k, v in tensors.items() if k.startswith(prefix_m)}
        opt.v = {k[len(prefix_v):]: v.copy() for k, v in tensors.items() if k.startswith(prefix_v)}
        opt.step = int(state.get(f"{tag}_step", 0))
    trainer.step_count = int(state.get("step", 0))
    if "rng" in state:
        trainer.rng.bit_generator.state = state["rng"]
    return trainer


def load_model(path):
    """Model and config only, for inference and evaluation."""
    from .layers import InpaintModel
    from .train import TrainConfig

    tensors, config, _ = read_checkpoint(path)
    cfg = TrainConfig.from_dict(config)
    model = InpaintModel(cfg.model_config())
    model.load_state_dict({k: v for k, v in tensors.items()
                           if not k.startswith(("opt_g.", "opt_d."))})
    return model, cfg
