"""Synthetic mouse-like digital phantoms.

A phantom is a set of labeled ellipsoidal regions with region-wise kinetic
parameters on a voxel grid, together with a ground-truth bolus AIF. Scans are
synthesized by the forward model plus Gaussian noise whose variance scales
inversely with frame duration, mimicking reconstructed-image statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .aif import FengAif, SampledCurve, feng_curve, feng_from_json, feng_to_json
from .errors import ValidationError
from .kinetics import DEFAULT_DT, DynamicImage, KineticParams, ParametricMaps, forward_volume
from .timegrid import FrameSchedule, mid_times

_NOISE_FLOOR = 1e-3  # kBq/mL; floors the variance of near-zero voxels


@dataclass(frozen=True)
class Region:
    """Ellipsoid in voxel coordinates: center and semi-axes ordered (z, y, x)."""

    name: str
    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    params: KineticParams

    def __post_init__(self) -> None:
        if any(a <= 0 for a in self.semi_axes):
            raise ValidationError(f"region {self.name!r}: semi-axes must be positive")


@dataclass(frozen=True)
class PhantomSpec:
    """Phantom geometry, kinetics, ground-truth AIF, and noise settings."""

    dims: tuple[int, int, int]
    regions: tuple[Region, ...]
    aif: FengAif = field(default_factory=FengAif)
    noise_sigma0: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise ValidationError("dims must be three positive integers (Z, Y, X)")
        if self.noise_sigma0 < 0:
            raise ValidationError("noise_sigma0 must be non-negative")
        for r in self.regions:
            for c, a, d in zip(r.center, r.semi_axes, self.dims):
                if c - a < -0.5 or c + a > d - 0.5:
                    raise ValidationError(f"region {r.name!r} extends outside the volume")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "regions", tuple(self.regions))


@dataclass(frozen=True)
class Phantom:
    """Built phantom: labels (0 = background), parameter maps, and truth AIF."""

    spec: PhantomSpec
    labels: np.ndarray  # (Z, Y, X) int32
    maps: ParametricMaps
    truth_aif: SampledCurve  # sampled at frame mid-times

    @property
    def region_names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.spec.regions)


def build_phantom(spec: PhantomSpec, schedule: FrameSchedule) -> Phantom:
    """Paint regions in list order (later regions overwrite earlier on overlap).

    The schedule fixes the frame mid-times at which the ground-truth AIF is
    reported for comparisons.
    """
    z, y, x = np.meshgrid(
        np.arange(spec.dims[0], dtype=np.float64),
        np.arange(spec.dims[1], dtype=np.float64),
        np.arange(spec.dims[2], dtype=np.float64),
        indexing="ij",
    )
    labels = np.zeros(spec.dims, dtype=np.int32)
    data = np.zeros((4,) + spec.dims, dtype=np.float64)
    for i, region in enumerate(spec.regions, start=1):
        cz, cy, cx = region.center
        az, ay, ax = region.semi_axes
        inside = ((z - cz) / az) ** 2 + ((y - cy) / ay) ** 2 + ((x - cx) / ax) ** 2 <= 1.0
        labels[inside] = i
        for c, value in enumerate(region.params.as_array()):
            data[c][inside] = value
    mask = labels > 0
    maps = ParametricMaps(data=data, mask=mask)
    truth = feng_curve(spec.aif, mid_times(schedule))
    return Phantom(spec=spec, labels=labels, maps=maps, truth_aif=truth)


def simulate_scan(
    phantom: Phantom,
    s: FrameSchedule,
    noise_sigma0: Optional[float] = None,
    seed: Optional[int] = None,
    mode: str = "frame-average",
    dt: float = DEFAULT_DT,
) -> DynamicImage:
    """Forward-project the phantom and add frame-duration-scaled Gaussian noise.

    Noise per voxel-frame is N(0, sigma0^2 * max(x, eps) / duration_min);
    negative results are permitted, as in reconstructed PET images. The same
    seed always reproduces the identical image.
    """
    sigma0 = phantom.spec.noise_sigma0 if noise_sigma0 is None else noise_sigma0
    rng_seed = phantom.spec.seed if seed is None else seed
    clean = forward_volume(phantom.maps, phantom.spec.aif, s, mode=mode, dt=dt)
    if sigma0 == 0:
        return clean
    dur_min = (s.frame_duration / 60.0)[:, None, None, None]
    sigma = sigma0 * np.sqrt(np.maximum(clean.values, _NOISE_FLOOR) / dur_min)
    rng = np.random.default_rng(rng_seed)
    noisy = clean.values + sigma * rng.standard_normal(clean.values.shape)
    return DynamicImage(schedule=s, values=noisy)


def default_mouse_spec(
    dims: tuple[int, int, int] = (32, 32, 32),
    noise_sigma0: float = 0.0,
    seed: int = 0,
    aif: Optional[FengAif] = None,
) -> PhantomSpec:
    """Six-region mouse-like phantom spanning identifiable kinetic regimes.

    The whole-body muscle ellipsoid is painted first so the organs carve into
    it; placement scales with ``dims`` (default desk-scale 32^3, full-scale
    (96, 48, 48) supported).
    """
    dz, dy, dx = (float(d) for d in dims)

    def c(fz: float, fy: float, fx: float) -> tuple[float, float, float]:
        return (fz * (dz - 1), fy * (dy - 1), fx * (dx - 1))

    def a(fz: float, fy: float, fx: float) -> tuple[float, float, float]:
        return (fz * dz, fy * dy, fx * dx)

    regions = (
        Region("muscle", c(0.50, 0.50, 0.50), a(0.42, 0.31, 0.31), KineticParams(0.1, 0.25, 0.03, 0.05)),
        Region("liver", c(0.42, 0.53, 0.46), a(0.11, 0.19, 0.19), KineticParams(0.6, 0.9, 0.05, 0.2)),
        Region("kidney", c(0.58, 0.33, 0.36), a(0.08, 0.09, 0.09), KineticParams(0.8, 1.2, 0.02, 0.25)),
        Region("heart_blood_pool", c(0.28, 0.50, 0.50), a(0.08, 0.10, 0.10), KineticParams(0.1, 0.1, 0.01, 0.9)),
        Region("brain", c(0.80, 0.50, 0.50), a(0.10, 0.14, 0.14), KineticParams(0.3, 0.5, 0.06, 0.04)),
        Region("tumor", c(0.60, 0.66, 0.62), a(0.075, 0.08, 0.08), KineticParams(0.5, 0.4, 0.12, 0.1)),
    )
    return PhantomSpec(
        dims=dims,
        regions=regions,
        aif=aif or FengAif(),
        noise_sigma0=noise_sigma0,
        seed=seed,
    )


# --- JSON form -------------------------------------------------------------

def spec_to_json(spec: PhantomSpec) -> dict:
    return {
        "dims": list(spec.dims),
        "regions": [
            {
                "name": r.name,
                "center": list(r.center),
                "semi_axes": list(r.semi_axes),
                "params": {"K1": r.params.K1, "k2": r.params.k2, "k3": r.params.k3, "Vb": r.params.Vb},
            }
            for r in spec.regions
        ],
        "aif": feng_to_json(spec.aif),
        "noise_sigma0": spec.noise_sigma0,
        "seed": spec.seed,
    }


def spec_from_json(obj: dict) -> PhantomSpec:
    try:
        regions = tuple(
            Region(
                name=r["name"],
                center=tuple(float(v) for v in r["center"]),
                semi_axes=tuple(float(v) for v in r["semi_axes"]),
                params=KineticParams(**{k: float(v) for k, v in r["params"].items()}),
            )
            for r in obj.get("regions", [])
        )
        return PhantomSpec(
            dims=tuple(int(d) for d in obj["dims"]),
            regions=regions,
            aif=feng_from_json(obj["aif"]) if "aif" in obj else FengAif(),
            noise_sigma0=float(obj.get("noise_sigma0", 0.0)),
            seed=int(obj.get("seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed phantom spec JSON: {exc}") from exc


def load_spec(path) -> PhantomSpec:
    with open(path, "r", encoding="utf-8") as f:
        return spec_from_json(json.load(f))


def save_spec(path, spec: PhantomSpec) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(spec_to_json(spec), f, indent=2, sort_keys=True)
        f.write("\n")
