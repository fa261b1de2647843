"""Per-timestep checkpoint container.

Layout in a checkpoint directory:

* ``manifest.json`` — network spec, scaling parameters, normalization bounds,
  spec hash, payload dtype, tensor order (name + shape), and per-step
  metadata (file name, final loss, epochs used).
* ``ckpt_{k:04d}.bin`` — one container per timestep: magic ``PFCK``,
  little-endian u32 format version, then each tensor in manifest-declared
  order as a little-endian u64 byte-length header followed by raw
  little-endian values, and finally a SHA-256 checksum of everything before
  it.

Files are written to a temp name and renamed into place, so a concurrent
reader never sees a partial checkpoint.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptCheckpoint,
    MissingCheckpoint,
    SpecHashMismatch,
    ValidationError,
    VersionMismatch,
)
from .network import NetworkSpec, NormalizationBounds, ScalingParams

_MAGIC = b"PFCK"
_VERSION = 1


@dataclass(frozen=True)
class StepCheckpoint:
    step: int
    weights: dict[str, np.ndarray]
    final_loss: float
    epochs_used: int
    physics_loss: float | None = None
    data_loss: float | None = None


@dataclass
class CheckpointSet:
    """Trained weights for timesteps 1..ts plus everything needed to replay them."""

    network_spec: NetworkSpec
    scaling: ScalingParams
    bounds: NormalizationBounds
    steps: dict[int, StepCheckpoint] = field(default_factory=dict)
    dtype: str = "<f8"

    @property
    def spec_hash(self) -> str:
        return self.network_spec.spec_hash()

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def add(self, ckpt: StepCheckpoint):
        self.steps[ckpt.step] = ckpt

    def step_checkpoint(self, k: int) -> StepCheckpoint:
        if k not in self.steps:
            raise MissingCheckpoint(f"no checkpoint for step {k}")
        return self.steps[k]

    def verify_complete(self, n_steps: int):
        missing = [k for k in range(1, n_steps + 1) if k not in self.steps]
        if missing:
            raise MissingCheckpoint(f"missing checkpoints for steps {missing}")

    def verify_spec(self, expected: NetworkSpec):
        if expected.spec_hash() != self.spec_hash:
            raise SpecHashMismatch(
                "checkpoint was written under a different network architecture"
            )


def _tensor_order(ckpt: StepCheckpoint):
    return [[name, list(arr.shape)] for name, arr in ckpt.weights.items()]


def _write_atomic(path: Path, payload: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def save_checkpoints(cs: CheckpointSet, path) -> Path:
    """Write a checkpoint set to a directory; returns the directory path."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if not cs.steps:
        raise ValidationError("cannot save an empty checkpoint set")
    order = None
    step_meta = {}
    dtype = np.dtype(cs.dtype)
    for k in sorted(cs.steps):
        ckpt = cs.steps[k]
        if order is None:
            order = _tensor_order(ckpt)
        elif _tensor_order(ckpt) != order:
            raise ValidationError("tensor order differs between step checkpoints")
        blob = bytearray(_MAGIC)
        blob += struct.pack("<I", _VERSION)
        for name, _ in order:
            raw = np.ascontiguousarray(ckpt.weights[name], dtype=dtype).tobytes()
            blob += struct.pack("<Q", len(raw))
            blob += raw
        blob += hashlib.sha256(bytes(blob)).digest()
        fname = f"ckpt_{k:04d}.bin"
        _write_atomic(out / fname, bytes(blob))
        step_meta[str(k)] = {
            "file": fname,
            "final_loss": ckpt.final_loss,
            "epochs_used": ckpt.epochs_used,
            "physics_loss": ckpt.physics_loss,
            "data_loss": ckpt.data_loss,
        }
    manifest = {
        "format_version": _VERSION,
        "spec_hash": cs.spec_hash,
        "network_spec": asdict(cs.network_spec),
        "scaling": asdict(cs.scaling),
        "bounds": asdict(cs.bounds),
        "dtype": cs.dtype,
        "tensor_order": order,
        "steps": step_meta,
    }
    _write_atomic(
        out / "manifest.json",
        json.dumps(manifest, sort_keys=True, indent=2).encode() + b"\n",
    )
    return out


def _read_payload(path: Path, order, dtype) -> dict[str, np.ndarray]:
    blob = path.read_bytes()
    if len(blob) < len(_MAGIC) + 4 + 32 or blob[: len(_MAGIC)] != _MAGIC:
        raise CorruptCheckpoint(f"{path.name}: bad header")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint(f"{path.name}: checksum mismatch")
    (version,) = struct.unpack_from("<I", body, len(_MAGIC))
    if version != _VERSION:
        raise VersionMismatch(f"{path.name}: container version {version}")
    offset = len(_MAGIC) + 4
    weights = {}
    itemsize = np.dtype(dtype).itemsize
    for name, shape in order:
        if offset + 8 > len(body):
            raise CorruptCheckpoint(f"{path.name}: truncated before tensor {name}")
        (nbytes,) = struct.unpack_from("<Q", body, offset)
        offset += 8
        expected = int(np.prod(shape)) * itemsize if shape else itemsize
        if nbytes != expected or offset + nbytes > len(body):
            raise CorruptCheckpoint(f"{path.name}: bad length for tensor {name}")
        arr = np.frombuffer(body, dtype=dtype, count=nbytes // itemsize, offset=offset)
        weights[name] = arr.reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise CorruptCheckpoint(f"{path.name}: trailing bytes after last tensor")
    return weights


def load_checkpoints(path) -> CheckpointSet:
    src = Path(path)
    manifest_path = src / "manifest.json"
    if not manifest_path.exists():
        raise MissingCheckpoint(f"no manifest.json under {src}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != _VERSION:
        raise VersionMismatch(
            f"manifest format version {manifest.get('format_version')}"
        )
    spec = NetworkSpec(**manifest["network_spec"])
    if spec.spec_hash() != manifest["spec_hash"]:
        raise SpecHashMismatch("manifest spec hash disagrees with its network spec")
    cs = CheckpointSet(
        network_spec=spec,
        scaling=ScalingParams(**manifest["scaling"]),
        bounds=NormalizationBounds(**manifest["bounds"]),
        dtype=manifest["dtype"],
    )
    order = manifest["tensor_order"]
    dtype = np.dtype(manifest["dtype"])
    for key, meta in manifest["steps"].items():
        k = int(key)
        fpath = src / meta["file"]
        if not fpath.exists():
            raise MissingCheckpoint(f"{meta['file']} listed in manifest but absent")
        cs.add(
            StepCheckpoint(
                step=k,
                weights=_read_payload(fpath, order, dtype),
                final_loss=meta["final_loss"],
                epochs_used=meta["epochs_used"],
                physics_loss=meta.get("physics_loss"),
                data_loss=meta.get("data_loss"),
            )
        )
    return cs
