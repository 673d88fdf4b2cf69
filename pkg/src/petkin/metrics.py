"""Evaluation metrics: PSNR and SSIM on volumes, plus AIF error summaries.

SSIM follows the standard local-statistics formulation with a configurable
window, computed per 2-D axial slice over fully interior windows and averaged
over windows and slices. PSNR uses 10*log10(L^2 / MSE) with a +inf sentinel
for identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

from .aif import SampledCurve, interp
from .errors import ValidationError

_trapezoid = getattr(np, "trapezoid", np.trapz)


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    window_kind: str = "gaussian"  # or "uniform"
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self) -> None:
        if self.window < 3 or self.window % 2 == 0:
            raise ValidationError("SSIM window must be odd and >= 3")
        if self.window_kind not in ("gaussian", "uniform"):
            raise ValidationError(f"unknown window kind {self.window_kind!r}")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValidationError("stabilizers k1, k2 must be positive")
        if not (self.dynamic_range > 0):
            raise ValidationError("dynamic range must be positive")


def psnr(a: np.ndarray, b: np.ndarray, max_val: float) -> float:
    """Peak signal-to-noise ratio in dB; returns +inf when the inputs match."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not (max_val > 0):
        raise ValidationError("max_val must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


def _window_kernel(cfg: SsimConfig) -> np.ndarray:
    r = cfg.window // 2
    if cfg.window_kind == "uniform":
        k = np.ones((cfg.window, cfg.window))
    else:
        off = np.arange(-r, r + 1, dtype=np.float64)
        g = np.exp(-(off**2) / (2.0 * cfg.sigma**2))
        k = np.outer(g, g)
    return k / np.sum(k)


def _ssim_slice(a: np.ndarray, b: np.ndarray, kernel: np.ndarray, c1: float, c2: float) -> float:
    r = kernel.shape[0] // 2

    def stats(img: np.ndarray) -> np.ndarray:
        return correlate(img, kernel, mode="constant")[r:-r, r:-r]

    mu_a = stats(a)
    mu_b = stats(b)
    var_a = stats(a * a) - mu_a * mu_a
    var_b = stats(b * b) - mu_b * mu_b
    cov = stats(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return float(np.mean(s))


def ssim(a: np.ndarray, b: np.ndarray, cfg: SsimConfig | None = None) -> float:
    """Mean structural similarity between two volumes (or 2-D images).

    3-D inputs are scored per axial slice (leading axis) and averaged.
    """
    cfg = cfg or SsimConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ValidationError("ssim expects a 2-D image or a 3-D (Z, Y, X) volume")
    if min(a.shape[1], a.shape[2]) < cfg.window:
        raise ValidationError(
            f"slice extent {a.shape[1:]} smaller than the {cfg.window}x{cfg.window} window"
        )
    kernel = _window_kernel(cfg)
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    per_slice = [_ssim_slice(a[z], b[z], kernel, c1, c2) for z in range(a.shape[0])]
    return float(np.mean(per_slice))


def aif_metrics(est: SampledCurve, ref: SampledCurve) -> dict[str, float]:
    """Error summary of an estimated AIF against a reference curve.

    The estimate is resampled onto the reference times; peak and AUC errors
    are signed relative differences, nRMSE normalizes by the reference peak.
    """
    ref_peak = float(np.max(ref.values))
    if ref_peak == 0:
        raise ValidationError("reference curve is identically zero; nRMSE undefined")
    est_r = np.asarray(interp(est, ref.times), dtype=np.float64)
    diff = est_r - ref.values
    rmse = float(np.sqrt(np.mean(diff * diff)))
    auc_ref = float(_trapezoid(ref.values, ref.times))
    auc_est = float(_trapezoid(est_r, ref.times))
    return {
        "rmse": rmse,
        "nrmse": rmse / ref_peak,
        "peak_rel_err": (float(np.max(est_r)) - ref_peak) / ref_peak,
        "peak_time_diff_s": float(ref.times[int(np.argmax(est_r))] - ref.times[int(np.argmax(ref.values))]),
        "auc_rel_err": (auc_est - auc_ref) / auc_ref,
    }
