"""Binary checkpoints of a layered field and its optimizer state.

Layout (little endian):

    magic        8 bytes  b"NDOMECKP"
    version      u32
    n_tables     u32, then per table: u32 name length, name (utf-8), u32 count, count x u32 widths
    n_frames     u32
    latent_dim   u32
    step         u64
    config hash  64 bytes (ascii hex sha256, zero padded)
    n_floats     u64
    parameters   n_floats x f32 in declaration order
    first moment n_floats x f32
    second mom.  n_floats x f32

A JSON sidecar (`<path>.json`) records the tensor offsets and shapes plus the
run state needed to resume (seed, training phase, pseudo-segmentation files).
"""

import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch

from domefactory.utils.exceptions import CheckpointError
from domefactory.utils.util_funs import read_json, write_json

logger = logging.getLogger(__name__)

MAGIC = b"NDOMECKP"
VERSION = 1
HASH_BYTES = 64


@dataclass
class Checkpoint:
    step: int
    params: OrderedDict
    m: OrderedDict
    v: OrderedDict
    config_hash: str
    layer_widths: dict
    n_frames: int
    latent_dim: int
    extra: dict = field(default_factory=dict)
    optimizer_steps: int = 0


def _flatten(tensors):
    if len(tensors) == 0:
        return np.zeros(0, dtype="<f4")
    return np.concatenate([t.detach().cpu().numpy().astype("<f4").reshape(-1) for t in tensors.values()])


def _check_optimizer(field_model, optimizer):
    ordered = [p for group in optimizer.param_groups for p in group["params"]]
    params = list(field_model.parameters())
    if len(ordered) != len(params) or any(a is not b for a, b in zip(ordered, params)):
        raise CheckpointError("optimizer parameters do not match the field parameters")


def optimizer_moments(field_model, optimizer):
    """(exp_avg, exp_avg_sq, update count) of an Adam optimizer over `field_model`, by parameter name.

    Parameters the optimizer never stepped get zero moments.
    """
    names = [k for k, _ in field_model.named_parameters()]
    m = OrderedDict((k, torch.zeros_like(p.detach())) for k, p in field_model.named_parameters())
    v = OrderedDict((k, torch.zeros_like(p.detach())) for k, p in field_model.named_parameters())
    if optimizer is None:
        return m, v, 0
    _check_optimizer(field_model, optimizer)
    count = 0
    for i, s in optimizer.state_dict()["state"].items():
        m[names[i]] = s["exp_avg"].detach()
        v[names[i]] = s["exp_avg_sq"].detach()
        count = max(count, int(s["step"]))
    return m, v, count


def save_checkpoint(path, field_model, optimizer, config_hash, extra=None, step=None):
    """Write the field parameters and the Adam moments of `optimizer` to `path` (+ sidecar).

    `step` is the training step recorded in the header; it defaults to the
    optimizer's update count.
    """
    params = OrderedDict((k, p.detach()) for k, p in field_model.named_parameters())
    m, v, optimizer_steps = optimizer_moments(field_model, optimizer)
    step = optimizer_steps if step is None else int(step)

    widths = field_model.layer_widths()
    header = bytearray(MAGIC)
    header += struct.pack("<I", VERSION)
    header += struct.pack("<I", len(widths))
    for name, w in widths.items():
        encoded = name.encode("utf-8")
        header += struct.pack("<I", len(encoded)) + encoded
        header += struct.pack("<I", len(w)) + struct.pack("<" + "I" * len(w), *w)
    header += struct.pack("<IIQ", field_model.n_frames, field_model.latent_dim(), step)
    header += config_hash.encode("ascii").ljust(HASH_BYTES, b"\0")[:HASH_BYTES]

    flat_p, flat_m, flat_v = _flatten(params), _flatten(m), _flatten(v)
    header += struct.pack("<Q", len(flat_p))
    with open(path, "wb") as f:
        f.write(bytes(header))
        f.write(flat_p.tobytes())
        f.write(flat_m.tobytes())
        f.write(flat_v.tobytes())

    tensors, offset = [], 0
    for k, p in params.items():
        tensors.append({"name": k, "offset": offset, "shape": list(p.shape)})
        offset += p.numel()
    write_json(
        path + ".json",
        {
            "version": VERSION,
            "step": step,
            "optimizer_steps": optimizer_steps,
            "config_hash": config_hash,
            "data_offset": len(header),
            "tensors": tensors,
            "extra": extra or {},
        },
    )
    logger.info("checkpoint at step %d written to %s", step, path)
    return path


def _read(buf, offset, fmt):
    size = struct.calcsize(fmt)
    if offset + size > len(buf):
        raise CheckpointError("checkpoint truncated in header")
    return struct.unpack_from(fmt, buf, offset), offset + size


def load_checkpoint(path, expected_hash=None):
    """Parse a checkpoint; refuses a bad magic, another version or a different config hash."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic): " + str(path))
    (version,), offset = _read(buf, len(MAGIC), "<I")
    if version != VERSION:
        raise CheckpointError("checkpoint version " + str(version) + " is not supported (expected " + str(VERSION) + ")")
    (n_tables,), offset = _read(buf, offset, "<I")
    widths = {}
    for _ in range(n_tables):
        (n,), offset = _read(buf, offset, "<I")
        name = buf[offset : offset + n].decode("utf-8")
        offset += n
        (count,), offset = _read(buf, offset, "<I")
        values, offset = _read(buf, offset, "<" + "I" * count)
        widths[name] = list(values)
    (n_frames, latent_dim, step), offset = _read(buf, offset, "<IIQ")
    stored_hash = buf[offset : offset + HASH_BYTES].rstrip(b"\0").decode("ascii")
    offset += HASH_BYTES
    if expected_hash is not None and stored_hash != expected_hash:
        raise CheckpointError("config hash mismatch: checkpoint " + stored_hash + " vs run " + expected_hash)
    (n_floats,), offset = _read(buf, offset, "<Q")
    if len(buf) - offset != 3 * 4 * n_floats:
        raise CheckpointError("checkpoint payload has the wrong size")
    flat = np.frombuffer(buf, dtype="<f4", offset=offset).reshape(3, n_floats)

    sidecar = read_json(path + ".json")
    if sidecar["step"] != step or sidecar["config_hash"] != stored_hash:
        raise CheckpointError("checkpoint sidecar does not match the binary file")
    arrays = [OrderedDict(), OrderedDict(), OrderedDict()]
    for t in sidecar["tensors"]:
        size = int(np.prod(t["shape"], dtype=np.int64))
        for i in range(3):
            arrays[i][t["name"]] = flat[i, t["offset"] : t["offset"] + size].reshape(t["shape"]).copy()
    return Checkpoint(
        step,
        arrays[0],
        arrays[1],
        arrays[2],
        stored_hash,
        widths,
        n_frames,
        latent_dim,
        sidecar.get("extra", {}),
        int(sidecar.get("optimizer_steps", 0)),
    )


def apply_checkpoint(ckpt, field_model, optimizer=None):
    """Copy checkpoint parameters into `field_model` and, when given, the moments into `optimizer`.

    Returns the checkpoint step.
    """
    if ckpt.layer_widths != field_model.layer_widths():
        raise CheckpointError("layer widths differ: " + str(ckpt.layer_widths) + " vs " + str(field_model.layer_widths()))
    if ckpt.n_frames != field_model.n_frames or ckpt.latent_dim != field_model.latent_dim():
        raise CheckpointError("frame count or latent dimension differs from the field")
    named = OrderedDict(field_model.named_parameters())
    if list(named.keys()) != list(ckpt.params.keys()):
        raise CheckpointError("parameter names differ from the field")
    with torch.no_grad():
        for k, p in named.items():
            p.copy_(torch.as_tensor(ckpt.params[k], dtype=p.dtype))
    if optimizer is not None:
        _check_optimizer(field_model, optimizer)
        state = optimizer.state_dict()
        state["state"] = {}
        if ckpt.optimizer_steps > 0:
            for i, (k, p) in enumerate(named.items()):
                state["state"][i] = {
                    "step": torch.tensor(float(ckpt.optimizer_steps)),
                    "exp_avg": torch.as_tensor(ckpt.m[k], dtype=p.dtype),
                    "exp_avg_sq": torch.as_tensor(ckpt.v[k], dtype=p.dtype),
                }
        optimizer.load_state_dict(state)
    return ckpt.step
