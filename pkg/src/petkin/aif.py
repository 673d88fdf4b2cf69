"""Arterial input function representations.

A ``SampledCurve`` holds measured samples of a time-activity curve (blood
samples, or any concentration-vs-time signal, kBq/mL). ``FengAif`` is the
standard parametric bolus family

    c(t) = (A1*u - A2 - A3)*exp(l1*u) + A2*exp(l2*u) + A3*exp(l3*u),   u = (t - tau)/60

with u in minutes so the decay rates stay near unity; the public interface
remains in seconds. The formula is exactly zero at onset and for t <= tau.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ValidationError


@dataclass
class CurveDiagnostics:
    """Counters for lossy curve evaluations; pass one object per caller."""

    clamped_negative: int = 0
    extrapolated_hold_last: int = 0


@dataclass(frozen=True)
class SampledCurve:
    """Non-negative concentration samples at strictly increasing times (s)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.ndim != 1 or v.ndim != 1 or t.size != v.size:
            raise ValidationError("curve times and values must be 1-D and equal length")
        if t.size < 2:
            raise ValidationError("curve needs at least two samples")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(v)):
            raise ValidationError("curve samples must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("curve times must be strictly increasing")
        if np.any(v < 0):
            raise ValidationError("curve values must be non-negative")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class FengAif:
    """Parametric bolus AIF; tau in seconds, amplitudes kBq/mL (A1 per minute), rates 1/min."""

    tau_s: float = 30.0
    a1: float = 800.0
    a2: float = 20.0
    a3: float = 20.0
    l1: float = -4.0
    l2: float = -0.1
    l3: float = -0.01

    def __post_init__(self) -> None:
        if not (self.l1 < self.l2 < self.l3 < 0):
            raise ValidationError("decay rates must satisfy l1 < l2 < l3 < 0")
        if not (self.a1 > 0):
            raise ValidationError("a1 must be positive")
        if self.a2 < 0 or self.a3 < 0:
            raise ValidationError("a2 and a3 must be non-negative")
        if self.tau_s < 0:
            raise ValidationError("onset delay tau must be non-negative")


def feng_eval(
    p: FengAif,
    t: Union[float, np.ndarray],
    diag: CurveDiagnostics | None = None,
) -> Union[float, np.ndarray]:
    """Evaluate the bolus model at time(s) ``t`` in seconds.

    Zero for t <= tau; negative excursions of the formula are clamped to zero
    and tallied in ``diag`` when provided.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    u = (t_arr - p.tau_s) / 60.0
    with np.errstate(over="ignore"):
        raw = (
            (p.a1 * u - p.a2 - p.a3) * np.exp(p.l1 * u)
            + p.a2 * np.exp(p.l2 * u)
            + p.a3 * np.exp(p.l3 * u)
        )
    raw = np.where(u > 0, raw, 0.0)
    clipped = np.maximum(raw, 0.0)
    if diag is not None:
        diag.clamped_negative += int(np.count_nonzero(raw < 0))
    if np.isscalar(t) or t_arr.ndim == 0:
        return float(clipped)
    return clipped


def feng_curve(p: FengAif, times: np.ndarray, diag: CurveDiagnostics | None = None) -> SampledCurve:
    """Sample a FengAif onto explicit times, returning a SampledCurve."""
    return SampledCurve(times=np.asarray(times, dtype=np.float64), values=feng_eval(p, times, diag))


def interp(
    c: SampledCurve,
    t: Union[float, np.ndarray],
    diag: CurveDiagnostics | None = None,
) -> Union[float, np.ndarray]:
    """Piecewise-linear evaluation: 0 before the first sample, hold-last after.

    Hold-last extrapolations are tallied in ``diag`` when provided, since frame
    mid-times can extend past blood-sample coverage.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    out = np.interp(t_arr, c.times, c.values, left=0.0, right=float(c.values[-1]))
    if diag is not None:
        diag.extrapolated_hold_last += int(np.count_nonzero(t_arr > c.times[-1]))
    if np.isscalar(t) or t_arr.ndim == 0:
        return float(out)
    return out


def cumulative_integral(c: SampledCurve) -> SampledCurve:
    """Trapezoid cumulative integral on the same time nodes (kBq*s/mL); starts at 0."""
    steps = np.diff(c.times) * 0.5 * (c.values[1:] + c.values[:-1])
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    return SampledCurve(times=c.times, values=cum)


# --- file formats ---------------------------------------------------------

_CSV_HEADER = ["time_s", "value_kbq_ml"]


def write_aif_csv(path, c: SampledCurve) -> None:
    """AIF CSV: header ``time_s,value_kbq_ml``, one sample per row, LF endings."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(_CSV_HEADER)
        for t, v in zip(c.times, c.values):
            writer.writerow([repr(float(t)), repr(float(v))])


def read_aif_csv(path) -> SampledCurve:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise ValidationError(f"AIF CSV header must be {','.join(_CSV_HEADER)}")
        times, values = [], []
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ValidationError(f"AIF CSV rows need 2 columns, got {row!r}")
            times.append(float(row[0]))
            values.append(float(row[1]))
    return SampledCurve(times=np.asarray(times), values=np.asarray(values))


_FENG_KEYS = ("tau_s", "a1", "a2", "a3", "l1", "l2", "l3")


def feng_to_json(p: FengAif) -> dict:
    return {k: getattr(p, k) for k in _FENG_KEYS}


def feng_from_json(obj: dict) -> FengAif:
    missing = [k for k in _FENG_KEYS if k not in obj]
    if missing:
        raise ValidationError(f"FengAif JSON missing keys: {missing}")
    return FengAif(**{k: float(obj[k]) for k in _FENG_KEYS})


def load_feng(path) -> FengAif:
    with open(path, "r", encoding="utf-8") as f:
        return feng_from_json(json.load(f))


def save_feng(path, p: FengAif) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(feng_to_json(p), f, indent=2, sort_keys=True)
        f.write("\n")
