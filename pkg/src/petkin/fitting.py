"""Voxel-wise inversion of the compartment model given a known AIF.

Two stages are provided:

* ``lls_fit`` — linearized least squares on the double-integrated model

      C_PET(t) = b0*C_A(t) + b1*Int[C_A] + b2*Int[Int[C_A]] + b3*Int[C_PET]

  obtained by integrating C_T'' = K1*C_A' + K1*k3*C_A - (k2+k3)*C_T' twice
  and mixing in the blood fraction. The coefficients map back to the rate
  constants via

      Vb = b0,  k2 + k3 = -b3,  K1 = (b1 + b3*b0)/(1 - b0),
      k3 = b2/((1 - b0)*K1),    k2 = (k2 + k3) - k3.

  The C_A basis integrals are evaluated on the fine grid and discretized
  with the same mode as the forward model. The Int[C_PET] column only exists
  at frame resolution; it uses the exact cumulative sums at frame boundaries
  plus a local slope correction (error O(duration^3) per frame).

* ``nls_fit`` — Levenberg-Marquardt refinement of the full nonlinear model
  with box constraints enforced by a smooth reparameterization (log for the
  rate constants with a 1e-6 floor, logit for Vb). The refined fit never
  reports a worse weighted residual than its initialization.

Basis integrals and rate constants use minute units internally so the
recovered coefficients are per-minute; the public time interface is seconds.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit

from .aif import FengAif, SampledCurve
from .errors import ValidationError
from .kinetics import DEFAULT_DT, ForwardContext, DynamicImage, KineticParams, ParametricMaps, ki
from .timegrid import FrameSchedule, mid_times

_LOG_FLOOR = 1e-6
_RANK_TOL = 1e-10

STATUS_OK = "ok"
STATUS_CLAMPED = "clamped"
STATUS_DEGENERATE = "degenerate"
STATUS_NO_SIGNAL = "no_signal"

_STATUS_CODES = (STATUS_OK, STATUS_CLAMPED, STATUS_DEGENERATE, STATUS_NO_SIGNAL)

DEFAULT_BOUNDS = {
    "K1": (0.0, 5.0),
    "k2": (0.0, 5.0),
    "k3": (0.0, 5.0),
    "Vb": (0.0, 1.0),
}


@dataclass(frozen=True)
class FitConfig:
    """Common fit settings shared by the linear and nonlinear stages."""

    weights: str = "frame-duration"  # or "uniform"
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    max_iter: int = 100
    tol: float = 1e-6
    dt: float = DEFAULT_DT
    mode: str = "frame-average"  # or "midpoint"

    def __post_init__(self) -> None:
        if self.weights not in ("uniform", "frame-duration"):
            raise ValidationError(f"unknown weights {self.weights!r}")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if not (self.tol > 0):
            raise ValidationError("tol must be positive")
        for name in ("K1", "k2", "k3", "Vb"):
            lo, hi = self.bounds[name]
            if not (0 <= lo < hi):
                raise ValidationError(f"bounds for {name} must satisfy 0 <= lo < hi")
        if self.bounds["Vb"][1] > 1.0:
            raise ValidationError("Vb upper bound cannot exceed 1")

    def bounds_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.bounds[n][0] for n in ("K1", "k2", "k3", "Vb")])
        hi = np.array([self.bounds[n][1] for n in ("K1", "k2", "k3", "Vb")])
        return lo, hi


@dataclass(frozen=True)
class FitResult:
    """Recovered parameters plus residual diagnostics and status flags."""

    params: KineticParams
    ki: float
    residual_rms: float
    status: str
    lls_coeffs: Optional[np.ndarray] = None
    n_fev: int = 0
    n_jev: int = 0


def frame_weights(s: FrameSchedule, cfg: FitConfig) -> np.ndarray:
    """Normalized fit weights; longer frames average more counts, so lower variance."""
    if cfg.weights == "uniform":
        w = np.full(s.n_frames, 1.0 / s.n_frames)
    else:
        w = s.frame_duration / float(np.sum(s.frame_duration))
    return w


class FitWorkspace:
    """Shared per-(AIF, schedule, config) precomputation for many voxel fits."""

    def __init__(self, ca: Union[SampledCurve, FengAif], s: FrameSchedule, cfg: FitConfig) -> None:
        self.cfg = cfg
        self.schedule = s
        self.ctx = ForwardContext(ca, s, cfg.mode, cfg.dt)
        self.w = frame_weights(s, cfg)
        self.sqrt_w = np.sqrt(self.w)
        ca_fine = self.ctx.ca_fine
        i1 = self.ctx.ca_cum1  # minutes
        i2 = self.ctx._cumtrapz(i1)
        self.basis = np.stack(
            [self.ctx.frames_of(ca_fine), self.ctx.frames_of(i1), self.ctx.frames_of(i2)], axis=1
        )  # (T, 3)
        self._dur_min = s.frame_duration / 60.0
        self._mid_min = mid_times(s) / 60.0

    def residual_rms(self, params: np.ndarray, tac: np.ndarray) -> float:
        model = self.ctx.model_frames(*params)
        r = model - tac
        return float(np.sqrt(np.sum(self.w * r * r) / np.sum(self.w)))

    def tac_cumulative(self, tacs: np.ndarray) -> np.ndarray:
        """Frame-discretized cumulative integral of measured TACs, minute units.

        Cumulative sums of (value * duration) are exact at frame boundaries for
        frame-averaged data; within the frame a central-difference slope term
        corrects the running integral to third order.
        """
        tacs = np.atleast_2d(tacs)
        dur = self._dur_min
        mid = self._mid_min
        run = np.cumsum(tacs * dur, axis=1)
        prev = run - tacs * dur
        slope = np.empty_like(tacs)
        slope[:, 1:-1] = (tacs[:, 2:] - tacs[:, :-2]) / (mid[2:] - mid[:-2])
        slope[:, 0] = (tacs[:, 1] - tacs[:, 0]) / (mid[1] - mid[0])
        slope[:, -1] = (tacs[:, -1] - tacs[:, -2]) / (mid[-1] - mid[-2])
        if self.cfg.mode == "midpoint":
            corr = dur**2 / 8.0
        else:
            corr = dur**2 / 12.0
        return prev + 0.5 * tacs * dur - slope * corr


def _lls_solve(
    tacs: np.ndarray, col3: np.ndarray, ws: FitWorkspace
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One weighted linear solve per TAC row given the Int[C_PET] column."""
    m, t = tacs.shape
    design = np.broadcast_to(ws.basis, (m, t, 3))
    x = np.concatenate([design, col3[:, :, None]], axis=2) * ws.sqrt_w[None, :, None]
    y = tacs * ws.sqrt_w[None, :]
    u, svals, vt = np.linalg.svd(x, full_matrices=False)
    degenerate = svals[:, -1] <= _RANK_TOL * svals[:, 0]
    inv_s = np.where(svals > _RANK_TOL * svals[:, :1], 1.0 / np.maximum(svals, 1e-300), 0.0)
    b = np.einsum("vji,vj->vi", vt, inv_s * np.einsum("vjk,vj->vk", u, y))

    vb = b[:, 0]
    alpha = -b[:, 3]
    denom = 1.0 - vb
    safe_denom = np.abs(denom) > 1e-9
    k1 = np.where(safe_denom, (b[:, 1] + b[:, 3] * b[:, 0]) / np.where(safe_denom, denom, 1.0), 0.0)
    safe_k1 = safe_denom & (np.abs(k1) > 1e-12)
    k3 = np.where(safe_k1, b[:, 2] / np.where(safe_k1, denom * k1, 1.0), 0.0)
    k2 = alpha - k3
    raw = np.stack([k1, k2, k3, vb], axis=1)

    lo, hi = ws.cfg.bounds_arrays()
    clipped = np.clip(raw, lo, hi)
    clamped = np.any(clipped != raw, axis=1)
    # unidentifiable combination after clipping: positive uptake with no clearance
    invalid = (clipped[:, 0] > 0) & (clipped[:, 1] + clipped[:, 2] <= 0)
    degenerate = degenerate | invalid
    return b, np.where(degenerate[:, None], 0.0, clipped), clamped, degenerate


_LLS_REFINE_PASSES = 2


def _lls_batch(
    tacs: np.ndarray, ws: FitWorkspace
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized linear fits. Returns (beta (M,4), params (M,4), status codes (M,)).

    The first pass builds the Int[C_PET] column from the measured frame
    values; subsequent passes rebuild it from the fitted model on the fine
    grid (exact, same discretization as the forward model), which removes
    the frame-resolution bias of the running integral.
    """
    tacs = np.atleast_2d(np.asarray(tacs, dtype=np.float64))
    m, t = tacs.shape
    if t != ws.schedule.n_frames:
        raise ValidationError("TAC length must equal the schedule length")
    if t < 5:
        raise ValidationError("linearized fit needs at least 5 frames")
    beta = np.full((m, 4), np.nan)
    params = np.zeros((m, 4))
    status = np.full(m, STATUS_OK, dtype=object)

    no_signal = np.max(np.abs(tacs), axis=1) == 0
    status[no_signal] = STATUS_NO_SIGNAL
    active = np.flatnonzero(~no_signal)
    if active.size == 0:
        return beta, params, status

    sub = tacs[active]
    col3 = ws.tac_cumulative(sub)
    b, p, clamped, degenerate = _lls_solve(sub, col3, ws)
    for _ in range(_LLS_REFINE_PASSES):
        live = np.flatnonzero(~degenerate)
        if live.size == 0:
            break
        for i in live:
            k1v, k2v, k3v, vbv = p[i]
            cpet = vbv * ws.ctx.ca_fine + (1.0 - vbv) * ws.ctx.ct_fine(k1v, k2v, k3v)
            col3[i] = ws.ctx.frames_of(ws.ctx._cumtrapz(cpet))
        b2, p2, clamped2, degenerate2 = _lls_solve(sub, col3, ws)
        keep = ~degenerate  # refine only voxels that had a usable previous pass
        b[keep], p[keep] = b2[keep], p2[keep]
        clamped[keep] = clamped2[keep]
        degenerate = degenerate | degenerate2

    beta[active] = b
    params[active] = np.where(degenerate[:, None], 0.0, p)
    sub_status = np.where(degenerate, STATUS_DEGENERATE, np.where(clamped, STATUS_CLAMPED, STATUS_OK))
    status[active] = sub_status
    beta[active[degenerate]] = np.nan
    return beta, params, status


def lls_fit(
    tac: np.ndarray,
    ca: Union[SampledCurve, FengAif],
    s: FrameSchedule,
    cfg: FitConfig | None = None,
) -> FitResult:
    """Weighted linearized least-squares fit of a single voxel TAC.

    Out-of-bound recovered values are clamped to the configured bounds with
    ``status="clamped"``; a rank-deficient design reports ``"degenerate"``
    with zero parameters rather than pseudo-inverse output.
    """
    cfg = cfg or FitConfig()
    ws = FitWorkspace(ca, s, cfg)
    return _lls_fit_ws(np.asarray(tac, dtype=np.float64), ws)


def _lls_fit_ws(tac: np.ndarray, ws: FitWorkspace) -> FitResult:
    beta, params, status = _lls_batch(tac[None, :], ws)
    p = KineticParams(*params[0])
    st = str(status[0])
    resid = 0.0 if st == STATUS_NO_SIGNAL else ws.residual_rms(params[0], tac)
    coeffs = None if np.any(np.isnan(beta[0])) else beta[0]
    return FitResult(params=p, ki=ki(p), residual_rms=resid, status=st, lls_coeffs=coeffs)


def _to_internal(p: np.ndarray) -> np.ndarray:
    u = np.empty(4)
    u[:3] = np.log(np.maximum(p[:3], _LOG_FLOOR))
    vb = min(max(p[3], _LOG_FLOOR), 1.0 - _LOG_FLOOR)
    u[3] = math.log(vb / (1.0 - vb))
    return u


def _from_internal(u: np.ndarray) -> np.ndarray:
    p = np.empty(4)
    p[:3] = np.exp(np.clip(u[:3], -46.0, 46.0))
    p[3] = expit(u[3])
    return p


def nls_fit(
    tac: np.ndarray,
    ca: Union[SampledCurve, FengAif],
    s: FrameSchedule,
    init: KineticParams,
    cfg: FitConfig | None = None,
) -> FitResult:
    """Levenberg-Marquardt refinement of the nonlinear model from ``init``.

    Box constraints are kept by optimizing log rate constants and logit Vb;
    convergence is declared when the relative parameter step drops below
    ``cfg.tol`` or ``cfg.max_iter`` iterations are exhausted. The reported
    residual never exceeds the residual of the initialization.
    """
    cfg = cfg or FitConfig()
    ws = FitWorkspace(ca, s, cfg)
    return _nls_fit_ws(np.asarray(tac, dtype=np.float64), init.as_array(), ws)


def _nls_fit_ws(tac: np.ndarray, init: np.ndarray, ws: FitWorkspace) -> FitResult:
    if tac.size != ws.schedule.n_frames:
        raise ValidationError("TAC length must equal the schedule length")
    lo, hi = ws.cfg.bounds_arrays()
    if np.any(init < lo) or np.any(init > hi):
        raise ValidationError("nls init violates the configured bounds")
    sqrt_w = ws.sqrt_w
    ctx = ws.ctx

    def resid(u: np.ndarray) -> np.ndarray:
        p = _from_internal(u)
        return sqrt_w * (ctx.model_frames(*p) - tac)

    def jac(u: np.ndarray) -> np.ndarray:
        p = _from_internal(u)
        j = ctx.jacobian_frames(*p)
        scale = np.array([p[0], p[1], p[2], p[3] * (1.0 - p[3])])
        return sqrt_w[:, None] * j * scale[None, :]

    init_rms = ws.residual_rms(init, tac)
    u0 = _to_internal(init)
    try:
        sol = least_squares(
            resid,
            u0,
            jac=jac,
            method="lm",
            xtol=ws.cfg.tol,
            ftol=1e-14,
            gtol=1e-14,
            max_nfev=ws.cfg.max_iter * 10,
        )
        fitted = _from_internal(sol.x)
        n_fev, n_jev = int(sol.nfev), int(sol.njev or 0)
        ok = np.all(np.isfinite(fitted)) and np.all(np.isfinite(sol.fun))
    except (ValueError, FloatingPointError):
        fitted, n_fev, n_jev, ok = init.copy(), 0, 0, False

    if not ok:
        p = KineticParams(*init)
        return FitResult(p, ki(p), init_rms, STATUS_DEGENERATE, None, n_fev, n_jev)

    clipped = np.clip(fitted, lo, hi)
    clamped = bool(np.any(clipped != fitted))
    final_rms = ws.residual_rms(clipped, tac)
    if final_rms > init_rms:  # refinement must never worsen the weighted objective
        clipped, final_rms, clamped = init, init_rms, False
    p = KineticParams(*clipped)
    status = STATUS_CLAMPED if clamped else STATUS_OK
    return FitResult(p, ki(p), final_rms, status, None, n_fev, n_jev)


_DEFAULT_NLS_INIT = np.array([0.1, 0.1, 0.01, 0.05])


def _fit_tac_rows(
    tacs: np.ndarray,
    ws: FitWorkspace,
    method: str,
    inits: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fit a batch of TAC rows. Returns (params (M,4), status (M,), residual_rms (M,))."""
    tacs = np.atleast_2d(tacs)
    m = tacs.shape[0]
    if method == "nls":
        if inits is None:
            raise ValidationError("method 'nls' needs explicit initial parameters")
        params = np.zeros((m, 4))
        status = np.full(m, STATUS_OK, dtype=object)
        resid = np.zeros(m)
        for i in range(m):
            r = _nls_fit_ws(tacs[i], inits[i], ws)
            params[i] = r.params.as_array()
            status[i] = r.status
            resid[i] = r.residual_rms
        return params, status, resid

    beta, lls_params, status = _lls_batch(tacs, ws)
    params = lls_params.copy()
    resid = np.zeros(m)
    for i in range(m):
        if status[i] == STATUS_NO_SIGNAL:
            continue
        resid[i] = ws.residual_rms(params[i], tacs[i])
    if method == "lls":
        return params, status, resid
    if method != "lls+nls":
        raise ValidationError(f"unknown fit method {method!r}")
    for i in range(m):
        if status[i] == STATUS_NO_SIGNAL:
            continue
        init = params[i] if status[i] in (STATUS_OK, STATUS_CLAMPED) else _DEFAULT_NLS_INIT
        r = _nls_fit_ws(tacs[i], init, ws)
        params[i] = r.params.as_array()
        status[i] = r.status
        resid[i] = r.residual_rms
    return params, status, resid


def _fit_chunk(args) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    start, tacs, inits, ca, s, cfg, method = args
    ws = FitWorkspace(ca, s, cfg)
    params, status, resid = _fit_tac_rows(tacs, ws, method, inits)
    return start, params, status, resid


def fit_tac_array(
    tacs: np.ndarray,
    ca: Union[SampledCurve, FengAif],
    s: FrameSchedule,
    cfg: FitConfig,
    method: str = "lls+nls",
    inits: Optional[np.ndarray] = None,
    n_workers: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fit many TAC rows, optionally sharded over worker processes.

    Output is index-aligned with the input rows and bit-identical for any
    worker count: each voxel is an independent deterministic computation and
    results are merged by position.
    """
    tacs = np.atleast_2d(np.asarray(tacs, dtype=np.float64))
    m = tacs.shape[0]
    if m == 0:
        return np.zeros((0, 4)), np.zeros(0, dtype=object), np.zeros(0)
    n_workers = max(1, int(n_workers))
    if n_workers == 1 or m < 32:
        ws = FitWorkspace(ca, s, cfg)
        return _fit_tac_rows(tacs, ws, method, inits)
    chunk = max(16, -(-m // (n_workers * 4)))
    jobs = []
    for start in range(0, m, chunk):
        sel = slice(start, min(start + chunk, m))
        jobs.append((start, tacs[sel], None if inits is None else inits[sel], ca, s, cfg, method))
    params = np.zeros((m, 4))
    status = np.full(m, STATUS_OK, dtype=object)
    resid = np.zeros(m)
    with concurrent.futures.ProcessPoolExecutor(max_workers=n_workers) as pool:
        for start, p, st, rr in pool.map(_fit_chunk, jobs):
            sel = slice(start, start + p.shape[0])
            params[sel] = p
            status[sel] = st
            resid[sel] = rr
    return params, status, resid


def fit_volume(
    img: DynamicImage,
    ca: Union[SampledCurve, FengAif],
    method: str = "lls+nls",
    mask: Optional[np.ndarray] = None,
    cfg: FitConfig | None = None,
    n_workers: int = 1,
) -> tuple[ParametricMaps, np.ndarray, dict[str, int]]:
    """Independent per-voxel fits over a masked volume.

    ``lls+nls`` seeds the nonlinear stage with the clamped linear estimate.
    Returns the parameter maps, the derived Ki volume, and per-status voxel
    counts; per-voxel failures are recorded in the counts, never raised.
    """
    cfg = cfg or FitConfig()
    dims = img.dims
    if mask is None:
        mask = np.max(np.abs(img.values), axis=0) > 0
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != dims:
        raise ValidationError("mask dims must match the image spatial dims")
    data = np.zeros((4,) + dims, dtype=np.float64)
    ki_vol = np.zeros(dims, dtype=np.float64)
    counts = {code: 0 for code in _STATUS_CODES}
    flat = np.flatnonzero(mask.ravel())
    if flat.size:
        tacs = img.values.reshape(img.schedule.n_frames, -1)[:, flat].T
        params, status, _ = fit_tac_array(tacs, ca, img.schedule, cfg, method, n_workers=n_workers)
        data.reshape(4, -1)[:, flat] = params.T
        alpha = params[:, 1] + params[:, 2]
        ki_flat = np.where(alpha > 0, params[:, 0] * params[:, 2] / np.where(alpha > 0, alpha, 1.0), 0.0)
        ki_vol.ravel()[flat] = ki_flat
        for code in _STATUS_CODES:
            counts[code] = int(np.count_nonzero(status == code))
    maps = ParametricMaps(data=data, mask=mask)
    return maps, ki_vol, counts


def residual_rms_volume(
    img: DynamicImage,
    maps: ParametricMaps,
    ca: Union[SampledCurve, FengAif],
    cfg: FitConfig | None = None,
) -> np.ndarray:
    """Weighted residual RMS between the image and the forward model of ``maps``."""
    cfg = cfg or FitConfig()
    ws = FitWorkspace(ca, img.schedule, cfg)
    out = np.zeros(maps.dims, dtype=np.float64)
    flat = np.flatnonzero(maps.mask.ravel())
    if flat.size == 0:
        return out
    tacs = img.values.reshape(img.schedule.n_frames, -1)[:, flat].T
    pmat = maps.data.reshape(4, -1)[:, flat].T
    res = np.empty(flat.size)
    for i in range(flat.size):
        res[i] = ws.residual_rms(pmat[i], tacs[i])
    out.ravel()[flat] = res
    return out
