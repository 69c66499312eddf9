"""On-disk formats: PFM rasters, PNG images, stable JSON, checkpoints.

PFM files are little-endian (negative scale header) with scanlines stored
bottom-up; float32 values round-trip bit-exactly, including NaN markers.
Checkpoints are a flat binary of 64-bit scalars behind a JSON header that
lists tensor names, shapes, and byte offsets; save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import ConfigError

CHECKPOINT_MAGIC = b"FFCKPT01"


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def write_pfm(path, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 2:
        header = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    else:
        raise ConfigError(f"PFM supports (H, W) or (H, W, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(arr).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ConfigError(f"not a PFM file: {path}")
        w, h = (int(t) for t in f.readline().split())
        scale = float(f.readline())
        data = f.read()
    channels = 3 if header == b"PF" else 1
    dt = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dt, count=h * w * channels)
    arr = arr.reshape(h, w, channels) if channels == 3 else arr.reshape(h, w)
    return np.flipud(arr).astype(np.float32)


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------


def write_png(path, array: np.ndarray) -> None:
    """Unit-range float RGB -> 8-bit PNG (values clipped, round-to-nearest)."""
    arr = np.asarray(array, dtype=np.float64)
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """8-bit PNG -> unit-range float32 RGB."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


# ---------------------------------------------------------------------------
# JSON / CSV / hashing
# ---------------------------------------------------------------------------


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def format_float(x: float) -> str:
    """Shortest round-trip decimal; keeps CSV output deterministic."""
    return repr(float(x))


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(
                format_float(v) if isinstance(v, float) else str(v) for v in row
            ) + "\n")


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write named tensors as contiguous float64 behind a JSON header."""
    names = sorted(tensors)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = json.dumps(
        {"meta": meta, "tensors": entries}, sort_keys=True, separators=(",", ":")
    ).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.uint64(len(header)).tobytes())
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"not a checkpoint file: {path}")
        (hlen,) = np.frombuffer(f.read(8), dtype=np.uint64)
        header = json.loads(f.read(int(hlen)).decode())
        data = f.read()
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(shape).copy()
    return tensors, header["meta"]


def rng_state_to_json(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_json(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
