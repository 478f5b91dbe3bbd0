"""Binary containers and sidecar files.

Motion tensors ("MCMV"), model checkpoints ("MCMW"), external feature
arrays ("MCMF"), beat-time JSON, and JSONL training logs. All binary
payloads are little-endian float32; writes go through a temp file and
an atomic rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import IoError, ValidationError
from .motion import FRAME_DIM, MotionSequence

MAGIC_MOTION = b"MCMV"
MAGIC_MODEL = b"MCMW"
MAGIC_FEATURES = b"MCMF"
VERSION = 1


def atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoError(f"failed writing {path}: {exc}") from exc


def write_motion(path, seq: MotionSequence) -> None:
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    header = MAGIC_MOTION + struct.pack("<IIIf", VERSION, frames.shape[0], frames.shape[1], float(seq.fps))
    atomic_write(path, header + frames.tobytes())


def read_motion(path) -> MotionSequence:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if raw[:4] != MAGIC_MOTION:
        raise IoError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC_MOTION!r}")
    version, t, d, fps = struct.unpack_from("<IIIf", raw, 4)
    if version != VERSION:
        raise IoError(f"{path}: unsupported motion container version {version}")
    need = 20 + 4 * t * d
    if len(raw) != need:
        raise IoError(f"{path}: payload size mismatch ({len(raw)} vs {need} bytes)")
    frames = np.frombuffer(raw, dtype="<f4", offset=20).reshape(t, d).copy()
    return MotionSequence(frames=frames, fps=fps)


def motion_to_json(seq: MotionSequence) -> str:
    return json.dumps({"fps": seq.fps, "frames": seq.frames.tolist()})


def motion_from_json(text: str) -> MotionSequence:
    doc = json.loads(text)
    frames = np.asarray(doc["frames"], dtype=np.float32)
    if frames.ndim != 2 or frames.shape[1] != FRAME_DIM:
        raise ValidationError(f"JSON motion must be T x {FRAME_DIM}")
    return MotionSequence(frames=frames, fps=float(doc["fps"]))


def write_features(path, array: np.ndarray, fps: float = 0.0) -> None:
    """External feature container: header (count, dim, fps-or-zero)."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 2:
        raise ValidationError("feature arrays must be 2-d")
    header = MAGIC_FEATURES + struct.pack("<IIIf", VERSION, arr.shape[0], arr.shape[1], float(fps))
    atomic_write(path, header + arr.tobytes())


def read_features(path) -> tuple[np.ndarray, float]:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if raw[:4] != MAGIC_FEATURES:
        raise IoError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC_FEATURES!r}")
    version, n, d, fps = struct.unpack_from("<IIIf", raw, 4)
    if version != VERSION:
        raise IoError(f"{path}: unsupported feature container version {version}")
    arr = np.frombuffer(raw, dtype="<f4", offset=20).reshape(n, d).copy()
    return arr, fps


def write_checkpoint(path, params: dict, meta: dict) -> None:
    """Checkpoint: magic, version, manifest (meta JSON + named shapes +
    offsets), then concatenated float32 payloads."""
    names = sorted(params)
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    entries = []
    payloads = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(params[name].data if hasattr(params[name], "data") else params[name], dtype="<f4")
        nb = name.encode()
        entries.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape) + struct.pack("<Q", offset))
        payloads.append(arr.tobytes())
        offset += len(payloads[-1])
    blob = (
        MAGIC_MODEL
        + struct.pack("<I", VERSION)
        + struct.pack("<I", len(meta_blob))
        + meta_blob
        + struct.pack("<I", len(names))
        + b"".join(entries)
        + b"".join(payloads)
    )
    atomic_write(path, blob)


def read_checkpoint(path) -> tuple[dict, dict]:
    """Returns (name -> float32 ndarray, meta dict)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if raw[:4] != MAGIC_MODEL:
        raise IoError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC_MODEL!r}")
    pos = 4
    (version,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if version != VERSION:
        raise IoError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    meta = json.loads(raw[pos : pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    manifest = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        (offset,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        manifest.append((name, shape, offset))
    base = pos
    out = {}
    for name, shape, offset in manifest:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=base + offset).reshape(shape).copy()
        out[name] = arr
    return out, meta


def write_beats(path, times) -> None:
    atomic_write(path, json.dumps({"times": [float(t) for t in np.asarray(times).reshape(-1)]}).encode())


def read_beats(path) -> np.ndarray:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return np.asarray(doc["times"], dtype=np.float64)


def write_jsonl(path, records: list[dict]) -> None:
    atomic_write(path, ("\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n").encode())


def write_json(path, doc: dict) -> None:
    atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
