"""Irreversible two-tissue compartment forward model.

The tissue impulse response is

    h(t) = K1/(k2 + k3) * [k3 + k2 * exp(-(k2 + k3) t)],   t in minutes,

the tissue curve is the convolution C_T = h (*) C_A evaluated by trapezoid
quadrature on a fine uniform grid, and the observable voxel signal is

    C_PET(t) = Vb * C_A(t) + (1 - Vb) * C_T(t)

discretized to acquisition frames either by averaging over each frame
interval (the default, since PET frames integrate counts over their duration)
or by sampling at frame mid-times.

Rate constants are carried per minute; time grids are in seconds and the
conversion happens once inside the evaluation context.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.signal import lfilter

from .aif import FengAif, SampledCurve, feng_eval, interp
from .errors import NumericError, ValidationError
from .timegrid import FineGrid, FrameSchedule, fine_grid

DEFAULT_DT = 0.5  # seconds; <= 1/10 of the shortest standard frame (5 s)

MAP_CHANNELS = ("K1", "k2", "k3", "Vb")


@dataclass(frozen=True)
class KineticParams:
    """Per-voxel rate constants: K1 mL/min/mL, k2 and k3 1/min, Vb fraction."""

    K1: float
    k2: float
    k3: float
    Vb: float

    def __post_init__(self) -> None:
        for name in ("K1", "k2", "k3"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and non-negative, got {v!r}")
        if not np.isfinite(self.Vb) or not (0.0 <= self.Vb <= 1.0):
            raise ValidationError(f"Vb must lie in [0, 1], got {self.Vb!r}")
        if self.K1 > 0 and self.k2 + self.k3 <= 0:
            raise ValidationError("k2 + k3 must be positive when K1 > 0 (kernel well-defined)")

    def as_array(self) -> np.ndarray:
        return np.array([self.K1, self.k2, self.k3, self.Vb], dtype=np.float64)


@dataclass(frozen=True)
class ParametricMaps:
    """4-channel 3-D volume of kinetic parameters, ordered (K1, k2, k3, Vb)."""

    data: np.ndarray  # (4, Z, Y, X)
    mask: np.ndarray  # (Z, Y, X) bool

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if data.ndim != 4 or data.shape[0] != 4:
            raise ValidationError("maps data must have shape (4, Z, Y, X)")
        if mask.shape != data.shape[1:]:
            raise ValidationError("mask dims must match the map volume dims")
        if not np.all(np.isfinite(data)):
            raise ValidationError("map values must be finite")
        k1, k2, k3, vb = data[0][mask], data[1][mask], data[2][mask], data[3][mask]
        if k1.size:
            if np.any(k1 < 0) or np.any(k2 < 0) or np.any(k3 < 0):
                raise ValidationError("masked rate constants must be non-negative")
            if np.any(vb < 0) or np.any(vb > 1):
                raise ValidationError("masked Vb values must lie in [0, 1]")
            bad = (k1 > 0) & (k2 + k3 <= 0)
            if np.any(bad):
                idx = np.argwhere(mask)[np.flatnonzero(bad)[0]]
                raise ValidationError(
                    f"voxel {tuple(int(i) for i in idx)}: k2 + k3 must be positive when K1 > 0"
                )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])  # type: ignore[return-value]

    def channel(self, name: str) -> np.ndarray:
        return self.data[MAP_CHANNELS.index(name)]

    def params_at(self, z: int, y: int, x: int) -> KineticParams:
        return KineticParams(*(float(self.data[c, z, y, x]) for c in range(4)))


@dataclass(frozen=True)
class DynamicImage:
    """4-D activity volume (T, Z, Y, X) over a frame schedule, kBq/mL."""

    schedule: FrameSchedule
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 4:
            raise ValidationError("dynamic image must have shape (T, Z, Y, X)")
        if values.shape[0] != self.schedule.n_frames:
            raise ValidationError(
                f"time dim {values.shape[0]} does not match schedule length {self.schedule.n_frames}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("dynamic image values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape[1:])  # type: ignore[return-value]


def _require_kernel(K1: float, k2: float, k3: float) -> float:
    alpha = k2 + k3
    if K1 > 0 and alpha <= 0:
        raise NumericError("degenerate kernel: k2 + k3 = 0 with K1 > 0")
    return alpha


def impulse_response(p: KineticParams, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Tissue impulse response h(t) for t in seconds; h(0) = K1 exactly."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValidationError("impulse_response requires t >= 0")
    alpha = _require_kernel(p.K1, p.k2, p.k3)
    if p.K1 == 0:
        out = np.zeros_like(t_arr)
    else:
        t_min = t_arr / 60.0
        out = (p.K1 / alpha) * (p.k3 + p.k2 * np.exp(-alpha * t_min))
    if np.isscalar(t) or t_arr.ndim == 0:
        return float(out)
    return out


def ki(p: KineticParams) -> float:
    """Net influx rate K1*k3/(k2 + k3); zero when K1 = 0."""
    if p.k2 + p.k3 <= 0:
        if p.K1 == 0:
            return 0.0
        raise NumericError("degenerate kernel: k2 + k3 = 0 with K1 > 0")
    return p.K1 * p.k3 / (p.k2 + p.k3)


class ForwardContext:
    """Precomputed quantities for repeated forward evaluations.

    Fixing the AIF, schedule, discretization mode, and grid once makes
    per-voxel evaluation cheap: only the exponential convolution depends on
    the voxel's k2 + k3. The frame discretization operator is linear and is
    applied via an interpolated cumulative integral, so it accepts batched
    fine-grid signals of shape (..., n).
    """

    def __init__(
        self,
        ca: Union[SampledCurve, FengAif],
        schedule: FrameSchedule,
        mode: str = "frame-average",
        dt: float = DEFAULT_DT,
    ) -> None:
        if mode not in ("frame-average", "midpoint"):
            raise ValidationError(f"unknown discretization mode {mode!r}")
        self.schedule = schedule
        self.mode = mode
        self.grid: FineGrid = fine_grid(schedule, dt)
        t_s = self.grid.times()
        self.t_min = t_s / 60.0
        self.dt_min = self.grid.dt / 60.0
        if isinstance(ca, FengAif):
            self.ca_fine = np.asarray(feng_eval(ca, t_s), dtype=np.float64)
        else:
            self.ca_fine = np.asarray(interp(ca, t_s), dtype=np.float64)
        # cumulative trapezoid of C_A in minute units (basis for the k3 term)
        self.ca_cum1 = self._cumtrapz(self.ca_fine)
        self._t_ca = self.t_min * self.ca_fine
        n = self.grid.n
        edges = np.concatenate([[0.0], schedule.frame_end])
        mids = schedule.frame_start + 0.5 * schedule.frame_duration
        self._edge_idx, self._edge_frac = self._locate(edges, n)
        self._mid_idx, self._mid_frac = self._locate(mids, n)
        self._dur_s = schedule.frame_duration

    def _locate(self, t: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
        pos = t / self.grid.dt
        idx = np.clip(np.floor(pos).astype(np.intp), 0, n - 2)
        frac = pos - idx
        return idx, frac

    def _cumtrapz(self, f: np.ndarray) -> np.ndarray:
        cum = np.cumsum(f, axis=-1)
        return self.dt_min * (cum - 0.5 * (f + f[..., :1]))

    def frames_of(self, fine: np.ndarray) -> np.ndarray:
        """Discretize fine-grid signal(s) (..., n) to frame values (..., T)."""
        if self.mode == "midpoint":
            lo = np.take(fine, self._mid_idx, axis=-1)
            hi = np.take(fine, self._mid_idx + 1, axis=-1)
            return lo + self._mid_frac * (hi - lo)
        cum = np.cumsum(fine, axis=-1)
        cum = self.grid.dt * (cum - 0.5 * (fine + fine[..., :1]))
        lo = np.take(cum, self._edge_idx, axis=-1)
        hi = np.take(cum, self._edge_idx + 1, axis=-1)
        at_edges = lo + self._edge_frac * (hi - lo)
        return np.diff(at_edges, axis=-1) / self._dur_s

    def _exp_conv(self, alpha: float, signal: np.ndarray) -> np.ndarray:
        """Trapezoid-quadrature convolution of exp(-alpha*t) with ``signal``."""
        r = float(np.exp(-alpha * self.dt_min))
        full = lfilter([1.0], [1.0, -r], signal)
        decay = np.exp(-alpha * self.t_min)
        return self.dt_min * (full - 0.5 * (signal + signal[0] * decay))

    def ct_fine(self, K1: float, k2: float, k3: float) -> np.ndarray:
        """Tissue curve C_T on the fine grid for one voxel's parameters."""
        alpha = _require_kernel(K1, k2, k3)
        if K1 == 0:
            return np.zeros_like(self.ca_fine)
        e = self._exp_conv(alpha, self.ca_fine)
        ct = K1 * ((k3 / alpha) * self.ca_cum1 + (k2 / alpha) * e)
        return np.maximum(ct, 0.0)  # guard sub-ulp negatives from the recursion

    def model_frames(self, K1: float, k2: float, k3: float, Vb: float) -> np.ndarray:
        """Frame-discretized C_PET for one voxel's parameters."""
        cpet = Vb * self.ca_fine + (1.0 - Vb) * self.ct_fine(K1, k2, k3)
        return self.frames_of(cpet)

    def jacobian_frames(self, K1: float, k2: float, k3: float, Vb: float) -> np.ndarray:
        """Analytic (T, 4) Jacobian of ``model_frames`` w.r.t. (K1, k2, k3, Vb)."""
        alpha = k2 + k3
        if alpha <= 0:  # the K1 column needs a well-defined kernel even at K1 = 0
            raise NumericError("degenerate kernel: k2 + k3 = 0")
        i1 = self.ca_cum1
        e = self._exp_conv(alpha, self.ca_fine)
        e2 = self._exp_conv(alpha, self._t_ca)
        te = self.t_min * e - e2  # convolution of t*exp(-alpha*t) with C_A
        dct_dK1 = (k3 / alpha) * i1 + (k2 / alpha) * e
        ct = K1 * dct_dK1
        dct_dk2 = K1 * (-(k3 / alpha**2) * i1 + ((alpha - k2) / alpha**2) * e - (k2 / alpha) * te)
        dct_dk3 = (K1 * k2 / alpha**2) * (i1 - e - alpha * te)
        fine_rows = np.stack([
            (1.0 - Vb) * dct_dK1,
            (1.0 - Vb) * dct_dk2,
            (1.0 - Vb) * dct_dk3,
            self.ca_fine - ct,
        ])
        return self.frames_of(fine_rows).T


def tissue_response(p: KineticParams, ca: SampledCurve, g: FineGrid) -> SampledCurve:
    """Tissue curve C_T = h (*) C_A by trapezoid quadrature on the fine grid."""
    t_s = g.times()
    ca_fine = np.asarray(interp(ca, t_s), dtype=np.float64)
    alpha = _require_kernel(p.K1, p.k2, p.k3)
    if p.K1 == 0:
        return SampledCurve(times=t_s, values=np.zeros_like(t_s))
    t_min = t_s / 60.0
    dt_min = g.dt / 60.0
    cum = np.cumsum(ca_fine)
    i1 = dt_min * (cum - 0.5 * (ca_fine + ca_fine[0]))
    r = float(np.exp(-alpha * dt_min))
    full = lfilter([1.0], [1.0, -r], ca_fine)
    e = dt_min * (full - 0.5 * (ca_fine + ca_fine[0] * np.exp(-alpha * t_min)))
    ct = p.K1 * ((p.k3 / alpha) * i1 + (p.k2 / alpha) * e)
    return SampledCurve(times=t_s, values=np.maximum(ct, 0.0))


def forward_model(
    p: KineticParams,
    ca: Union[SampledCurve, FengAif],
    s: FrameSchedule,
    mode: str = "frame-average",
    dt: float = DEFAULT_DT,
) -> np.ndarray:
    """Frame-discretized voxel signal C_PET for one set of kinetic parameters."""
    return ForwardContext(ca, s, mode, dt).model_frames(p.K1, p.k2, p.k3, p.Vb)


def forward_model_jacobian(
    p: KineticParams,
    ca: Union[SampledCurve, FengAif],
    s: FrameSchedule,
    mode: str = "frame-average",
    dt: float = DEFAULT_DT,
) -> np.ndarray:
    """Analytic (T, 4) derivative of the frame-discretized model w.r.t. (K1, k2, k3, Vb)."""
    return ForwardContext(ca, s, mode, dt).jacobian_frames(p.K1, p.k2, p.k3, p.Vb)


def forward_volume(
    maps: ParametricMaps,
    ca: Union[SampledCurve, FengAif],
    s: FrameSchedule,
    mode: str = "frame-average",
    dt: float = DEFAULT_DT,
) -> DynamicImage:
    """Apply the forward model voxel-wise; unmasked voxels stay zero.

    Voxels sharing identical parameter tuples are evaluated once, which makes
    labeled phantoms cheap while remaining bit-identical to per-voxel calls.
    """
    ctx = ForwardContext(ca, s, mode, dt)
    dims = maps.dims
    out = np.zeros((s.n_frames,) + dims, dtype=np.float64)
    flat_idx = np.flatnonzero(maps.mask.ravel())
    if flat_idx.size == 0:
        return DynamicImage(schedule=s, values=out)
    pmat = maps.data.reshape(4, -1)[:, flat_idx].T  # (M, 4)
    uniq, inverse = np.unique(pmat, axis=0, return_inverse=True)
    tacs = np.empty((uniq.shape[0], s.n_frames), dtype=np.float64)
    for g, (k1v, k2v, k3v, vbv) in enumerate(uniq):
        try:
            KineticParams(k1v, k2v, k3v, vbv)
        except ValidationError as exc:
            voxel = flat_idx[np.flatnonzero(inverse == g)[0]]
            zyx = np.unravel_index(voxel, dims)
            raise ValidationError(
                f"invalid parameters at voxel {tuple(int(i) for i in zyx)}: {exc}"
            ) from exc
        tacs[g] = ctx.model_frames(k1v, k2v, k3v, vbv)
    out.reshape(s.n_frames, -1)[:, flat_idx] = tacs[inverse].T
    return DynamicImage(schedule=s, values=out)
