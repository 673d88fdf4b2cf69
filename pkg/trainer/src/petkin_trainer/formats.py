"""Readers and writers for the shared on-disk formats.

Volumes are directories holding ``meta.json`` plus ``data.f32`` (raw 32-bit
IEEE-754 little-endian floats, C order, slowest axis first). AIF curves are
CSV with header ``time_s,value_kbq_ml``. This module implements the contract
independently; the engine package is never imported.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

MAGIC = "PETKIN1"
MAP_CHANNELS = ("K1", "k2", "k3", "Vb")
CSV_HEADER = ["time_s", "value_kbq_ml"]


class FormatError(ValueError):
    pass


def read_volume(path) -> tuple[dict, np.ndarray]:
    src = Path(path)
    meta_path = src / "meta.json"
    raw_path = src / "data.f32"
    if not meta_path.is_file() or not raw_path.is_file():
        raise FormatError(f"{src} is not a volume directory")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("magic") != MAGIC:
        raise FormatError(f"bad magic in {meta_path}")
    dims = tuple(int(d) for d in meta["dims"])
    blob = raw_path.read_bytes()
    expected = int(np.prod(dims)) * 4
    if len(blob) != expected:
        raise FormatError(f"payload size {len(blob)} != expected {expected} in {raw_path}")
    data = np.frombuffer(blob, dtype="<f4").reshape(dims)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"non-finite values in {raw_path}")
    return meta, data


def write_volume(path, meta: dict, data: np.ndarray) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    dims = tuple(int(d) for d in meta["dims"])
    if int(np.prod(dims)) != data.size:
        raise FormatError("data length does not match dims")
    with open(out / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    (out / "data.f32").write_bytes(np.ascontiguousarray(data.reshape(dims), dtype="<f4").tobytes())


def read_dynamic(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (values (T,Z,Y,X) float32, frame_start_s, frame_duration_s)."""
    meta, data = read_volume(path)
    if meta.get("kind") != "dynamic":
        raise FormatError(f"expected a dynamic volume at {path}")
    sched = meta["schedule"]
    return (
        data,
        np.asarray(sched["frame_start_s"], dtype=np.float64),
        np.asarray(sched["frame_duration_s"], dtype=np.float64),
    )


def read_maps(path) -> np.ndarray:
    meta, data = read_volume(path)
    if meta.get("kind") != "maps" or tuple(meta.get("channels", ())) != MAP_CHANNELS:
        raise FormatError(f"expected canonical maps at {path}")
    return data


def write_maps(path, data: np.ndarray) -> None:
    """Write a (4, Z, Y, X) array in canonical channel order."""
    if data.ndim != 4 or data.shape[0] != 4:
        raise FormatError("maps must have shape (4, Z, Y, X)")
    meta = {
        "magic": MAGIC,
        "kind": "maps",
        "dims": list(data.shape),
        "channels": list(MAP_CHANNELS),
        "units": "mL/min/mL,1/min,1/min,1",
        "endianness": "little",
    }
    write_volume(path, meta, data)


def read_aif_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise FormatError(f"AIF CSV header must be {','.join(CSV_HEADER)}")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    t = np.asarray([r[0] for r in rows])
    v = np.asarray([r[1] for r in rows])
    return t, v


def write_aif_csv(path, times: np.ndarray, values: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for t, v in zip(times, values):
            writer.writerow([repr(float(t)), repr(float(v))])


def mid_times(frame_start: np.ndarray, frame_duration: np.ndarray) -> np.ndarray:
    return frame_start + 0.5 * frame_duration
