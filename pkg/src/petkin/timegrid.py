"""Non-uniform PET frame schedules and the fine uniform grid used for convolution.

All times are in seconds. Frames are contiguous: each frame starts where the
previous one ends, and the first frame starts at t = 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError

_CONTIGUITY_TOL = 1e-6  # seconds


@dataclass(frozen=True)
class FrameSchedule:
    """Contiguous acquisition frames given by start times and durations (seconds)."""

    frame_start: np.ndarray
    frame_duration: np.ndarray

    def __post_init__(self) -> None:
        start = np.asarray(self.frame_start, dtype=np.float64)
        dur = np.asarray(self.frame_duration, dtype=np.float64)
        if start.ndim != 1 or dur.ndim != 1 or start.size != dur.size:
            raise ValidationError("frame_start and frame_duration must be 1-D and equal length")
        if start.size < 1:
            raise ValidationError("schedule needs at least one frame")
        if not np.all(np.isfinite(start)) or not np.all(np.isfinite(dur)):
            raise ValidationError("schedule times must be finite")
        if np.any(dur <= 0):
            raise ValidationError("frame durations must be positive")
        if abs(start[0]) > _CONTIGUITY_TOL:
            raise ValidationError("first frame must start at t = 0")
        if start.size > 1 and np.any(np.abs(start[1:] - (start[:-1] + dur[:-1])) > _CONTIGUITY_TOL):
            raise ValidationError("frames must be contiguous and ordered")
        start.setflags(write=False)
        dur.setflags(write=False)
        object.__setattr__(self, "frame_start", start)
        object.__setattr__(self, "frame_duration", dur)

    @property
    def n_frames(self) -> int:
        return int(self.frame_start.size)

    @property
    def frame_end(self) -> np.ndarray:
        return self.frame_start + self.frame_duration

    @property
    def end_time(self) -> float:
        return float(self.frame_start[-1] + self.frame_duration[-1])


@dataclass(frozen=True)
class FineGrid:
    """Uniform grid t_j = j*dt, j = 0..n-1, covering a frame schedule."""

    dt: float
    n: int

    def __post_init__(self) -> None:
        if not (self.dt > 0):
            raise ValidationError("fine-grid dt must be positive")
        if self.n < 2:
            raise ValidationError("fine grid needs at least two points")

    def times(self) -> np.ndarray:
        return np.arange(self.n, dtype=np.float64) * self.dt


def make_schedule(segments: Sequence[tuple[int, float]]) -> FrameSchedule:
    """Expand run-length segments (count, duration_seconds) into a contiguous schedule.

    Args:
        segments: e.g. ``[(1, 30), (24, 5), (9, 20), (8, 300)]`` for the
            standard 42-frame mouse protocol.

    Returns:
        The expanded FrameSchedule with ``sum(count)`` frames.
    """
    if len(segments) == 0:
        raise ValidationError("segment list must not be empty")
    durations: list[float] = []
    for count, dur in segments:
        if int(count) != count or count < 1:
            raise ValidationError(f"segment count must be a positive integer, got {count!r}")
        if not (dur > 0):
            raise ValidationError(f"segment duration must be positive, got {dur!r}")
        durations.extend([float(dur)] * int(count))
    dur_arr = np.asarray(durations, dtype=np.float64)
    start = np.concatenate([[0.0], np.cumsum(dur_arr)[:-1]])
    return FrameSchedule(frame_start=start, frame_duration=dur_arr)


def to_segments(s: FrameSchedule) -> list[tuple[int, float]]:
    """Run-length compress a schedule back to (count, duration) segments."""
    segments: list[tuple[int, float]] = []
    for dur in s.frame_duration:
        if segments and segments[-1][1] == dur:
            segments[-1] = (segments[-1][0] + 1, float(dur))
        else:
            segments.append((1, float(dur)))
    return segments


def mid_times(s: FrameSchedule) -> np.ndarray:
    """Frame reference times: mid[i] = start[i] + duration[i]/2."""
    return s.frame_start + 0.5 * s.frame_duration


def fine_grid(s: FrameSchedule, dt: float) -> FineGrid:
    """Build the uniform grid used to evaluate convolutions for this schedule.

    ``dt`` must not exceed the smallest frame duration, otherwise frame
    averaging over the short frames would be degenerate.
    """
    if not (dt > 0):
        raise ValidationError("dt must be positive")
    min_dur = float(np.min(s.frame_duration))
    if dt > min_dur:
        raise ValidationError(
            f"dt={dt} s exceeds the smallest frame duration ({min_dur} s)"
        )
    end = s.end_time
    n = int(math.ceil(end / dt - 1e-9)) + 1
    while (n - 1) * dt < end - 1e-9:  # guard against float round-down
        n += 1
    return FineGrid(dt=float(dt), n=n)


def schedule_to_json(s: FrameSchedule) -> dict:
    return {"segments": [[c, d] for c, d in to_segments(s)]}


def schedule_from_json(obj: dict) -> FrameSchedule:
    """Accept either run-length ``segments`` or the expanded arrays form."""
    if "segments" in obj:
        return make_schedule([(int(c), float(d)) for c, d in obj["segments"]])
    if "frame_start_s" in obj and "frame_duration_s" in obj:
        return FrameSchedule(
            frame_start=np.asarray(obj["frame_start_s"], dtype=np.float64),
            frame_duration=np.asarray(obj["frame_duration_s"], dtype=np.float64),
        )
    raise ValidationError("schedule JSON needs 'segments' or 'frame_start_s'/'frame_duration_s'")


def load_schedule(path) -> FrameSchedule:
    with open(path, "r", encoding="utf-8") as f:
        return schedule_from_json(json.load(f))


def save_schedule(path, s: FrameSchedule) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(schedule_to_json(s), f, indent=2, sort_keys=True)
        f.write("\n")
