"""Simultaneous estimation of the AIF and parameter maps from the image alone.

Classical alternating optimization of the physics-consistency objective
``sum_v || model(p_v, C_A) - tac_v ||^2_w``: given the current bolus-model
AIF, refit voxel parameters on a seeded subsample; given those parameters,
update the AIF parameters by Levenberg-Marquardt on the pooled residuals.
Both half-steps only accept descent, so the pooled objective is
non-increasing across outer iterations.

Joint estimation leaves a near-scale ambiguity (AIF amplitude trades against
K1 and Vb), so a mandatory anchor fixes the scale after the loop, before the
final full-mask fit:

* ``peak-normalization`` — rescale the AIF so the predicted peak of the
  hottest masked voxel matches its measured peak.
* ``blood-roi`` — treat a user-provided blood-pool ROI as a direct
  observation of the frame-averaged AIF and pin the scale there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from .aif import FengAif, SampledCurve, feng_curve
from .errors import NumericError, ValidationError
from .fitting import FitConfig, FitWorkspace, fit_tac_array, frame_weights
from .kinetics import DynamicImage, ForwardContext, ParametricMaps
from .timegrid import mid_times

_MONOTONE_SLACK = 1e-9  # relative tolerance on the non-increasing objective


@dataclass(frozen=True)
class SimeConfig:
    aif_model: str = "feng"
    n_outer: int = 10
    voxel_subsample: float = 500  # count (>= 1) or fraction of masked voxels (0, 1)
    anchor: str = "auto"  # blood-roi when a blood mask is given, else peak-normalization
    init_aif: FengAif = field(default_factory=FengAif)
    fit_cfg: FitConfig = field(default_factory=FitConfig)
    seed: int = 0
    freeze_aif: bool = False  # skip AIF updates and anchoring (debugging aid)

    def __post_init__(self) -> None:
        if self.aif_model != "feng":
            raise ValidationError(
                f"aif_model {self.aif_model!r} not implemented; only 'feng' is available"
            )
        if self.n_outer < 1:
            raise ValidationError("n_outer must be >= 1")
        if not (self.voxel_subsample > 0):
            raise ValidationError("voxel_subsample must be positive")
        if self.anchor not in ("auto", "peak-normalization", "blood-roi"):
            raise ValidationError(f"unknown anchor {self.anchor!r}")


# Feng parameters are optimized in an unconstrained space that preserves
# tau >= 0, positive amplitudes, and the decay-rate ordering l1 < l2 < l3 < 0.
def _feng_to_internal(p: FengAif) -> np.ndarray:
    eps = 1e-6
    return np.array([
        math.log(max(p.tau_s, eps)),
        math.log(max(p.a1, eps)),
        math.log(max(p.a2, eps)),
        math.log(max(p.a3, eps)),
        math.log(max(-p.l3, eps)),
        math.log(max(p.l3 - p.l2, eps)),
        math.log(max(p.l2 - p.l1, eps)),
    ])


def _feng_from_internal(u: np.ndarray) -> FengAif:
    e = np.exp(np.clip(u, -40.0, 40.0))
    l3 = -e[4]
    l2 = l3 - e[5]
    l1 = l2 - e[6]
    return FengAif(tau_s=e[0], a1=e[1], a2=e[2], a3=e[3], l1=l1, l2=l2, l3=l3)


def _scale_amplitudes(p: FengAif, s: float) -> FengAif:
    return FengAif(tau_s=p.tau_s, a1=p.a1 * s, a2=p.a2 * s, a3=p.a3 * s, l1=p.l1, l2=p.l2, l3=p.l3)


def _pooled_objective(params: np.ndarray, tacs: np.ndarray, ws: FitWorkspace) -> float:
    total = 0.0
    for i in range(params.shape[0]):
        model = ws.ctx.model_frames(*params[i])
        r = model - tacs[i]
        total += float(np.sum(ws.w * r * r))
    return total


def _aif_step(
    aif: FengAif,
    params: np.ndarray,
    tacs: np.ndarray,
    cfg: SimeConfig,
    img_schedule,
) -> tuple[FengAif, float]:
    """One LM descent on the pooled residuals over the bolus-model parameters."""
    sqrt_w = np.sqrt(frame_weights(img_schedule, cfg.fit_cfg))

    def resid(u: np.ndarray) -> np.ndarray:
        candidate = _feng_from_internal(u)
        ctx = ForwardContext(candidate, img_schedule, cfg.fit_cfg.mode, cfg.fit_cfg.dt)
        rows = np.empty_like(tacs)
        for i in range(params.shape[0]):
            rows[i] = ctx.model_frames(*params[i]) - tacs[i]
        return (rows * sqrt_w[None, :]).ravel()

    u0 = _feng_to_internal(aif)
    r0 = resid(u0)
    obj0 = float(np.dot(r0, r0))
    sol = least_squares(resid, u0, method="lm", xtol=1e-8, ftol=1e-10, gtol=1e-12, max_nfev=400)
    obj1 = float(np.dot(sol.fun, sol.fun))
    if not np.isfinite(obj1) or obj1 > obj0:
        return aif, obj0
    return _feng_from_internal(sol.x), obj1


def _anchor_scale(
    anchor: str,
    aif: FengAif,
    params: np.ndarray,
    tacs: np.ndarray,
    img: DynamicImage,
    blood_roi: Optional[np.ndarray],
    cfg: SimeConfig,
) -> float:
    ctx = ForwardContext(aif, img.schedule, cfg.fit_cfg.mode, cfg.fit_cfg.dt)
    if anchor == "blood-roi":
        roi = np.asarray(blood_roi, dtype=bool)
        if roi.shape != img.dims:
            raise ValidationError("blood ROI dims must match the image spatial dims")
        if not np.any(roi):
            raise ValidationError("blood ROI is empty")
        roi_tac = img.values[:, roi].mean(axis=1)
        aif_framed = ctx.frames_of(ctx.ca_fine)
        peak = float(np.max(aif_framed))
        if peak <= 0:
            raise NumericError("estimated AIF is identically zero; cannot anchor")
        # pin at the first frame, advancing past empty pre-bolus frames
        k = 0
        while k < aif_framed.size - 1 and (aif_framed[k] <= 0.01 * peak or roi_tac[k] <= 0):
            k += 1
        if aif_framed[k] <= 0 or roi_tac[k] <= 0:
            raise NumericError("no informative frame for blood-ROI anchoring")
        return float(roi_tac[k] / aif_framed[k])
    # peak-normalization on the hottest subsampled voxel
    hot = int(np.argmax(np.max(tacs, axis=1)))
    pred = ctx.model_frames(*params[hot])
    pred_peak = float(np.max(pred))
    if pred_peak <= 0:
        return 1.0
    return float(np.max(tacs[hot]) / pred_peak)


def sime_estimate(
    img: DynamicImage,
    mask: np.ndarray,
    cfg: SimeConfig,
    blood_roi: Optional[np.ndarray] = None,
    n_workers: int = 1,
) -> tuple[SampledCurve, ParametricMaps, np.ndarray]:
    """Jointly estimate the AIF and parameter maps from a dynamic image.

    Returns the anchored AIF sampled at frame mid-times, the parameter maps
    from the final full-mask fit under that AIF, and the pooled objective
    trace over the outer iterations (asserted non-increasing).
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.dims:
        raise ValidationError("mask dims must match the image spatial dims")
    flat = np.flatnonzero(mask.ravel())
    tacs_all = img.values.reshape(img.schedule.n_frames, -1)[:, flat].T
    usable = np.flatnonzero(np.max(np.abs(tacs_all), axis=1) > 0)
    if cfg.voxel_subsample <= 1 and isinstance(cfg.voxel_subsample, float):
        n_sub = max(1, int(math.ceil(cfg.voxel_subsample * usable.size)))
    else:
        n_sub = int(cfg.voxel_subsample)
    if usable.size < n_sub:
        raise ValidationError(
            f"mask has {usable.size} voxels with signal; subsample of {n_sub} requested"
        )
    rng = np.random.default_rng(cfg.seed)
    sub = np.sort(rng.choice(usable, size=n_sub, replace=False))
    tacs = tacs_all[sub]

    anchor = cfg.anchor
    if anchor == "auto":
        anchor = "blood-roi" if blood_roi is not None else "peak-normalization"
    if anchor == "blood-roi" and blood_roi is None:
        raise ValidationError("blood-roi anchoring needs a blood ROI mask")

    aif = cfg.init_aif
    params, _, _ = fit_tac_array(
        tacs, aif, img.schedule, cfg.fit_cfg, method="lls+nls", n_workers=n_workers
    )
    ws = FitWorkspace(aif, img.schedule, cfg.fit_cfg)
    trace = [_pooled_objective(params, tacs, ws)]

    for _ in range(cfg.n_outer):
        if not cfg.freeze_aif:
            aif, _ = _aif_step(aif, params, tacs, cfg, img.schedule)
        # refit under the (possibly updated) AIF, warm-started from the current
        # parameters so each voxel's residual can only improve
        warm, _, warm_res = fit_tac_array(
            tacs, aif, img.schedule, cfg.fit_cfg, method="nls", inits=params, n_workers=n_workers
        )
        fresh, _, fresh_res = fit_tac_array(
            tacs, aif, img.schedule, cfg.fit_cfg, method="lls+nls", n_workers=n_workers
        )
        take_fresh = fresh_res < warm_res
        params = np.where(take_fresh[:, None], fresh, warm)
        ws = FitWorkspace(aif, img.schedule, cfg.fit_cfg)
        trace.append(_pooled_objective(params, tacs, ws))

    trace_arr = np.asarray(trace)
    worst = np.max(np.diff(trace_arr)) if trace_arr.size > 1 else 0.0
    if worst > _MONOTONE_SLACK * max(trace_arr[0], 1e-30):
        raise NumericError(
            f"pooled objective increased by {worst:.3e} between outer iterations"
        )

    if not cfg.freeze_aif:
        s = _anchor_scale(anchor, aif, params, tacs, img, blood_roi, cfg)
        aif = _scale_amplitudes(aif, s)

    maps_data = np.zeros((4,) + img.dims, dtype=np.float64)
    full_params, _, _ = fit_tac_array(
        tacs_all, aif, img.schedule, cfg.fit_cfg, method="lls+nls", n_workers=n_workers
    )
    maps_data.reshape(4, -1)[:, flat] = full_params.T
    maps = ParametricMaps(data=maps_data, mask=mask)
    est_curve = feng_curve(aif, mid_times(img.schedule))
    return est_curve, maps, trace_arr
