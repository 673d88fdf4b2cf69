"""Bit-exact volume files: a directory with ``meta.json`` plus ``data.f32``.

The payload is raw 32-bit IEEE-754 little-endian floats in C order, slowest
axis first (t or c, then z, y, x). Kinds:

* ``dynamic`` — (T, Z, Y, X) activity; header embeds the frame schedule.
* ``maps``    — (4, Z, Y, X) kinetic parameters; channels exactly
  ``["K1", "k2", "k3", "Vb"]`` in canonical order.
* ``labels``  — (1, Z, Y, X) integer-valued region labels / masks.
* ``scalar``  — (1, Z, Y, X) single named channel (e.g. a Ki volume).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ValidationError
from .kinetics import MAP_CHANNELS, DynamicImage, ParametricMaps
from .timegrid import FrameSchedule

MAGIC = "PETKIN1"
_KINDS = ("dynamic", "maps", "labels", "scalar")


@dataclass(frozen=True)
class VolumeHeader:
    kind: str
    dims: tuple[int, int, int, int]  # (t|c, z, y, x)
    schedule: Optional[FrameSchedule] = None
    channels: Optional[tuple[str, ...]] = None
    units: str = ""
    magic: str = MAGIC
    endianness: str = "little"

    def __post_init__(self) -> None:
        if self.magic != MAGIC:
            raise ValidationError(f"bad magic {self.magic!r}; expected {MAGIC!r}")
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown volume kind {self.kind!r}")
        if self.endianness != "little":
            raise ValidationError("payload must be little-endian")
        if len(self.dims) != 4 or any(int(d) < 1 for d in self.dims):
            raise ValidationError("dims must be four positive integers (t|c, z, y, x)")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.kind == "dynamic":
            if self.schedule is None:
                raise ValidationError("dynamic volumes require a schedule")
            if self.schedule.n_frames != self.dims[0]:
                raise ValidationError(
                    f"frame count {self.schedule.n_frames} does not match t dim {self.dims[0]}"
                )
        elif self.kind == "maps":
            if self.channels is None or tuple(self.channels) != MAP_CHANNELS:
                raise ValidationError(
                    f"maps require channel names {list(MAP_CHANNELS)} in that order"
                )
            if self.dims[0] != 4:
                raise ValidationError("maps volumes must have 4 channels")
        elif self.kind in ("labels", "scalar"):
            if self.dims[0] != 1:
                raise ValidationError(f"{self.kind} volumes must have a single channel")
            if self.kind == "scalar" and (self.channels is None or len(self.channels) != 1):
                raise ValidationError("scalar volumes need exactly one channel name")
        if self.channels is not None:
            object.__setattr__(self, "channels", tuple(self.channels))


def _header_to_json(h: VolumeHeader) -> dict:
    obj: dict = {
        "magic": h.magic,
        "kind": h.kind,
        "dims": list(h.dims),
        "units": h.units,
        "endianness": h.endianness,
    }
    if h.schedule is not None:
        obj["schedule"] = {
            "frame_start_s": h.schedule.frame_start.tolist(),
            "frame_duration_s": h.schedule.frame_duration.tolist(),
        }
    if h.channels is not None:
        obj["channels"] = list(h.channels)
    return obj


def _header_from_json(obj: dict) -> VolumeHeader:
    try:
        schedule = None
        if "schedule" in obj:
            schedule = FrameSchedule(
                frame_start=np.asarray(obj["schedule"]["frame_start_s"], dtype=np.float64),
                frame_duration=np.asarray(obj["schedule"]["frame_duration_s"], dtype=np.float64),
            )
        return VolumeHeader(
            kind=obj["kind"],
            dims=tuple(obj["dims"]),
            schedule=schedule,
            channels=tuple(obj["channels"]) if "channels" in obj else None,
            units=obj.get("units", ""),
            magic=obj.get("magic", ""),
            endianness=obj.get("endianness", ""),
        )
    except KeyError as exc:
        raise ValidationError(f"volume header missing key {exc}") from exc


def write_volume(path, header: VolumeHeader, data: np.ndarray) -> None:
    """Write ``meta.json`` and ``data.f32`` into directory ``path``."""
    data = np.asarray(data)
    expected = int(np.prod(header.dims))
    if data.size != expected:
        raise ValidationError(f"data length {data.size} != product of dims {expected}")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "meta.json", "w", encoding="utf-8") as f:
        json.dump(_header_to_json(header), f, indent=2, sort_keys=True)
        f.write("\n")
    payload = np.ascontiguousarray(data.reshape(header.dims), dtype="<f4")
    (out / "data.f32").write_bytes(payload.tobytes())


def read_volume(path) -> tuple[VolumeHeader, np.ndarray]:
    """Read and validate a volume directory; rejects truncated or non-finite payloads."""
    src = Path(path)
    meta = src / "meta.json"
    raw = src / "data.f32"
    if not meta.is_file() or not raw.is_file():
        raise ValidationError(f"{src} is not a volume directory (meta.json + data.f32)")
    with open(meta, "r", encoding="utf-8") as f:
        header = _header_from_json(json.load(f))
    blob = raw.read_bytes()
    expected = int(np.prod(header.dims)) * 4
    if len(blob) != expected:
        raise ValidationError(
            f"truncated payload in {raw}: expected {expected} bytes, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4").reshape(header.dims)
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"non-finite values in {raw}")
    return header, data


# --- typed conveniences -----------------------------------------------------

def write_dynamic(path, img: DynamicImage, units: str = "kBq/mL") -> None:
    header = VolumeHeader(
        kind="dynamic",
        dims=(img.schedule.n_frames,) + img.dims,
        schedule=img.schedule,
        units=units,
    )
    write_volume(path, header, img.values)


def read_dynamic(path) -> DynamicImage:
    header, data = read_volume(path)
    if header.kind != "dynamic":
        raise ValidationError(f"expected a dynamic volume at {path}, found {header.kind!r}")
    return DynamicImage(schedule=header.schedule, values=np.asarray(data, dtype=np.float64))


def write_maps(path, maps: ParametricMaps, units: str = "mL/min/mL,1/min,1/min,1") -> None:
    header = VolumeHeader(kind="maps", dims=(4,) + maps.dims, channels=MAP_CHANNELS, units=units)
    write_volume(path, header, maps.data)


def read_maps(path, mask: Optional[np.ndarray] = None) -> ParametricMaps:
    header, data = read_volume(path)
    if header.kind != "maps":
        raise ValidationError(f"expected a maps volume at {path}, found {header.kind!r}")
    data = np.asarray(data, dtype=np.float64)
    if mask is None:
        mask = np.any(data != 0, axis=0)
    return ParametricMaps(data=data, mask=mask)


def write_labels(path, labels: np.ndarray) -> None:
    header = VolumeHeader(kind="labels", dims=(1,) + labels.shape, units="label")
    write_volume(path, header, labels.astype(np.float32))


def read_labels(path) -> np.ndarray:
    header, data = read_volume(path)
    if header.kind != "labels":
        raise ValidationError(f"expected a labels volume at {path}, found {header.kind!r}")
    return np.rint(data[0]).astype(np.int32)


def write_scalar(path, name: str, volume: np.ndarray, units: str = "") -> None:
    header = VolumeHeader(kind="scalar", dims=(1,) + volume.shape, channels=(name,), units=units)
    write_volume(path, header, volume.astype(np.float32))


def read_scalar(path) -> tuple[str, np.ndarray]:
    header, data = read_volume(path)
    if header.kind != "scalar":
        raise ValidationError(f"expected a scalar volume at {path}, found {header.kind!r}")
    return header.channels[0], np.asarray(data[0], dtype=np.float64)
