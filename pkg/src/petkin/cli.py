"""Operator entry point: simulate phantoms, fit volumes, run joint AIF
estimation, score results, and render SVG figures.

Exit codes: 0 success, 2 validation error, 3 numeric failure. Errors emit a
single machine-readable JSON line on stderr. Every subcommand is idempotent
given identical inputs and seeds, and ``--threads`` never changes output
bytes, only wall time.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .aif import FengAif, feng_from_json, interp, read_aif_csv, write_aif_csv
from .errors import NumericError, PetkinError, ValidationError
from .fitting import DEFAULT_BOUNDS, FitConfig, fit_volume
from .kinetics import MAP_CHANNELS
from .metrics import SsimConfig, aif_metrics, psnr, ssim
from .phantom import build_phantom, load_spec, simulate_scan
from .sime import SimeConfig, sime_estimate
from .storage import (
    read_dynamic,
    read_labels,
    read_maps,
    read_scalar,
    write_dynamic,
    write_labels,
    write_maps,
    write_scalar,
)
from .svgplot import curve_overlay, identity_scatter, map_slice
from .timegrid import fine_grid, load_schedule


@dataclass(frozen=True)
class PlotSpec:
    """One figure request: inputs must exist and match the plot kind."""

    kind: str  # aif-overlay | identity-scatter | map-slice
    inputs: tuple[str, ...]
    output: str
    slice_index: int = 0
    channel: str = "K1"

    def __post_init__(self) -> None:
        if self.kind not in ("aif-overlay", "identity-scatter", "map-slice"):
            raise ValidationError(f"unknown plot kind {self.kind!r}")
        if not self.inputs:
            raise ValidationError("plot needs at least one input")
        for p in self.inputs:
            if not Path(p).exists():
                raise ValidationError(f"plot input {p} does not exist")


def render_plot(spec: PlotSpec) -> str:
    """Render the requested figure to a deterministic SVG document string."""
    if spec.kind == "aif-overlay":
        curves = []
        for p in spec.inputs:
            c = read_aif_csv(p)
            curves.append((Path(p).stem, c.times, c.values))
        return curve_overlay(curves, "AIF overlay", "time (s)", "activity (kBq/mL)")
    if spec.kind == "identity-scatter":
        if len(spec.inputs) != 2:
            raise ValidationError("identity-scatter needs two inputs: estimated CSV, reference CSV")
        est = read_aif_csv(spec.inputs[0])
        ref = read_aif_csv(spec.inputs[1])
        est_r = np.asarray(interp(est, ref.times))
        return identity_scatter(
            ref.values, est_r, "AIF: measured vs estimated",
            "measured activity (kBq/mL)", "estimated activity (kBq/mL)",
        )
    maps = read_maps(spec.inputs[0])
    if spec.channel not in MAP_CHANNELS:
        raise ValidationError(f"channel must be one of {list(MAP_CHANNELS)}")
    vol = maps.channel(spec.channel)
    if not (0 <= spec.slice_index < vol.shape[0]):
        raise ValidationError(f"slice index {spec.slice_index} outside [0, {vol.shape[0]})")
    unit = "mL/min/mL" if spec.channel == "K1" else ("" if spec.channel == "Vb" else "1/min")
    return map_slice(
        vol[spec.slice_index], f"{spec.channel} axial slice {spec.slice_index}", unit
    )


def _resolve_threads(value: int) -> int:
    if value == 0:
        return os.cpu_count() or 1
    return max(1, value)


def _write_manifest(out_dir: Path, command: str, argv: Sequence[str], extra: dict) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "versions": {
            "petkin": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
    }
    manifest.update(extra)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_fit_config(path: Optional[str]) -> FitConfig:
    if path is None:
        return FitConfig()
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    bounds = dict(DEFAULT_BOUNDS)
    for name, pair in obj.get("bounds", {}).items():
        if name not in bounds:
            raise ValidationError(f"unknown bound name {name!r}")
        bounds[name] = (float(pair[0]), float(pair[1]))
    return FitConfig(
        weights=obj.get("weights", "frame-duration"),
        bounds=bounds,
        max_iter=int(obj.get("max_iter", 100)),
        tol=float(obj.get("tol", 1e-6)),
        dt=float(obj.get("dt_s", 0.5)),
        mode=obj.get("mode", "frame-average"),
    )


def _load_sime_config(path: str) -> SimeConfig:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    fit_cfg = FitConfig() if "fit_cfg" not in obj else _fit_cfg_from_obj(obj["fit_cfg"])
    return SimeConfig(
        aif_model=obj.get("aif_model", "feng"),
        n_outer=int(obj.get("n_outer", 10)),
        voxel_subsample=obj.get("voxel_subsample", 500),
        anchor=obj.get("anchor", "auto"),
        init_aif=feng_from_json(obj["init_aif"]) if "init_aif" in obj else FengAif(),
        fit_cfg=fit_cfg,
        seed=int(obj.get("seed", 0)),
        freeze_aif=bool(obj.get("freeze_aif", False)),
    )


def _fit_cfg_from_obj(obj: dict) -> FitConfig:
    bounds = dict(DEFAULT_BOUNDS)
    for name, pair in obj.get("bounds", {}).items():
        bounds[name] = (float(pair[0]), float(pair[1]))
    return FitConfig(
        weights=obj.get("weights", "frame-duration"),
        bounds=bounds,
        max_iter=int(obj.get("max_iter", 100)),
        tol=float(obj.get("tol", 1e-6)),
        dt=float(obj.get("dt_s", 0.5)),
        mode=obj.get("mode", "frame-average"),
    )


def _find_maps_dir(path: Path) -> Path:
    if (path / "meta.json").is_file():
        return path
    if (path / "maps" / "meta.json").is_file():
        return path / "maps"
    raise ValidationError(f"{path} contains no maps volume")


# --- subcommand handlers ----------------------------------------------------

def _cmd_simulate(args, argv) -> int:
    spec = load_spec(args.spec)
    schedule = load_schedule(args.schedule)
    phantom = build_phantom(spec, schedule)
    img = simulate_scan(phantom, schedule, noise_sigma0=args.noise, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dynamic(out / "image", img)
    write_maps(out / "maps", phantom.maps)
    write_labels(out / "labels", phantom.labels)
    alpha = phantom.maps.data[1] + phantom.maps.data[2]
    ki_vol = np.where(alpha > 0, phantom.maps.data[0] * phantom.maps.data[2] / np.where(alpha > 0, alpha, 1.0), 0.0)
    write_scalar(out / "ki", "Ki", ki_vol, units="1/min")
    write_aif_csv(out / "aif.csv", phantom.truth_aif)
    grid = fine_grid(schedule, 0.5)
    from .aif import feng_curve

    write_aif_csv(out / "aif_fine.csv", feng_curve(spec.aif, grid.times()))
    _write_manifest(out, "simulate", argv, {
        "seeds": {"noise": spec.seed if args.seed is None else args.seed},
        "config": {"noise_sigma0": spec.noise_sigma0 if args.noise is None else args.noise},
    })
    return 0


def _cmd_fit(args, argv) -> int:
    img = read_dynamic(Path(args.image))
    ca = read_aif_csv(args.aif)
    cfg = _load_fit_config(args.config)
    mask = None
    if args.mask is not None:
        mask = read_labels(Path(args.mask)) > 0
    threads = _resolve_threads(args.threads)
    maps, ki_vol, counts = fit_volume(img, ca, method=args.method, mask=mask, cfg=cfg, n_workers=threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_maps(out / "maps", maps)
    write_scalar(out / "ki", "Ki", ki_vol, units="1/min")
    with open(out / "status.json", "w", encoding="utf-8") as f:
        json.dump(counts, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(out, "fit", argv, {"threads": threads, "config": {"method": args.method}})
    return 0


def _cmd_sime(args, argv) -> int:
    img = read_dynamic(Path(args.image))
    cfg = _load_sime_config(args.config)
    if args.mask is not None:
        mask = read_labels(Path(args.mask)) > 0
    else:
        mask = np.max(np.abs(img.values), axis=0) > 0
    blood = read_labels(Path(args.blood_mask)) > 0 if args.blood_mask else None
    threads = _resolve_threads(args.threads)
    est_aif, maps, trace = sime_estimate(img, mask, cfg, blood_roi=blood, n_workers=threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_aif_csv(out / "aif_est.csv", est_aif)
    write_maps(out / "maps", maps)
    alpha = maps.data[1] + maps.data[2]
    ki_vol = np.where(alpha > 0, maps.data[0] * maps.data[2] / np.where(alpha > 0, alpha, 1.0), 0.0)
    write_scalar(out / "ki", "Ki", ki_vol, units="1/min")
    with open(out / "trace.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("outer_iteration,pooled_weighted_sse\n")
        for i, v in enumerate(trace):
            f.write(f"{i},{float(v)!r}\n")
    _write_manifest(out, "sime", argv, {"threads": threads, "seeds": {"subsample": cfg.seed}})
    return 0


def _json_float(x: float):
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return x


def _cmd_metrics(args, argv) -> int:
    est_dir = _find_maps_dir(Path(args.est))
    ref_dir = _find_maps_dir(Path(args.ref))
    est = read_maps(est_dir)
    ref = read_maps(ref_dir)
    if est.dims != ref.dims:
        raise ValidationError(f"map dims differ: {est.dims} vs {ref.dims}")
    report: dict = {"channels": {}, "config": {}}
    ssim_vals, psnr_vals = [], []
    for c, name in enumerate(MAP_CHANNELS):
        ref_ch = ref.data[c]
        est_ch = est.data[c]
        peak = float(np.max(ref_ch))
        rng = peak if peak > 0 else 1.0
        cfg = SsimConfig(dynamic_range=rng)
        s = ssim(est_ch, ref_ch, cfg)
        p = psnr(est_ch, ref_ch, rng)
        report["channels"][name] = {"ssim": s, "psnr_db": _json_float(p), "dynamic_range": rng}
        ssim_vals.append(s)
        psnr_vals.append(p)
        report["config"] = {
            "ssim_window": cfg.window,
            "ssim_window_kind": cfg.window_kind,
            "ssim_sigma": cfg.sigma,
            "ssim_k1": cfg.k1,
            "ssim_k2": cfg.k2,
        }
    finite_psnr = [p for p in psnr_vals if not math.isinf(p)]
    report["aggregate"] = {
        "mean_ssim": float(np.mean(ssim_vals)),
        "mean_psnr_db": _json_float(float(np.mean(finite_psnr)) if finite_psnr else math.inf),
    }
    # score the Ki volumes too when both runs provide them
    est_ki = Path(args.est) / "ki"
    ref_ki = Path(args.ref) / "ki"
    if (est_ki / "meta.json").is_file() and (ref_ki / "meta.json").is_file():
        _, ev = read_scalar(est_ki)
        _, rv = read_scalar(ref_ki)
        peak = float(np.max(rv))
        rng = peak if peak > 0 else 1.0
        report["channels"]["Ki"] = {
            "ssim": ssim(ev, rv, SsimConfig(dynamic_range=rng)),
            "psnr_db": _json_float(psnr(ev, rv, rng)),
            "dynamic_range": rng,
        }
    if args.aif_est and args.aif_ref:
        est_curve = read_aif_csv(args.aif_est)
        ref_curve = read_aif_csv(args.aif_ref)
        report["aif"] = aif_metrics(est_curve, ref_curve)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return 0


def _cmd_plot(args, argv) -> int:
    spec = PlotSpec(
        kind=args.kind,
        inputs=tuple(args.inputs),
        output=args.out,
        slice_index=args.slice,
        channel=args.channel,
    )
    svg = render_plot(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg, encoding="utf-8", newline="\n")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="petkin", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    default_threads = int(os.environ.get("PETKIN_THREADS", "1"))

    p = sub.add_parser("simulate", help="synthesize a phantom scan")
    p.add_argument("--spec", required=True, help="phantom spec JSON")
    p.add_argument("--schedule", required=True, help="frame schedule JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--noise", type=float, default=None, help="override noise sigma0")
    p.add_argument("--seed", type=int, default=None, help="override noise seed")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("fit", help="fit kinetic parameter maps given an AIF")
    p.add_argument("--image", required=True, help="dynamic volume directory")
    p.add_argument("--aif", required=True, help="AIF CSV")
    p.add_argument("--method", choices=["lls", "lls+nls"], default="lls+nls")
    p.add_argument("--config", default=None, help="FitConfig JSON")
    p.add_argument("--mask", default=None, help="labels volume; nonzero voxels are fit")
    p.add_argument("--threads", type=int, default=default_threads, help="0 = auto-detect")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_fit)

    p = sub.add_parser("sime", help="jointly estimate the AIF and parameter maps")
    p.add_argument("--image", required=True)
    p.add_argument("--config", required=True, help="SimeConfig JSON")
    p.add_argument("--mask", default=None, help="labels volume; nonzero voxels are fit")
    p.add_argument("--blood-mask", default=None, help="blood-pool ROI labels volume")
    p.add_argument("--threads", type=int, default=default_threads, help="0 = auto-detect")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_sime)

    p = sub.add_parser("metrics", help="score estimated maps (and AIF) against a reference")
    p.add_argument("--est", required=True, help="directory with estimated maps")
    p.add_argument("--ref", required=True, help="directory with reference maps")
    p.add_argument("--aif-est", default=None)
    p.add_argument("--aif-ref", default=None)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(handler=_cmd_metrics)

    p = sub.add_parser("plot", help="render an SVG figure")
    p.add_argument("--kind", required=True, choices=["aif-overlay", "identity-scatter", "map-slice"])
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--slice", type=int, default=0, help="axial slice for map-slice")
    p.add_argument("--channel", default="K1", help="map channel for map-slice")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_plot)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse and execute one CLI invocation; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args, argv)
    except ValidationError as exc:
        print(json.dumps({"error": "validation", "message": str(exc)}), file=sys.stderr)
        return 2
    except NumericError as exc:
        print(json.dumps({"error": "numeric", "message": str(exc)}), file=sys.stderr)
        return 3
    except PetkinError as exc:  # any other package failure counts as numeric
        print(json.dumps({"error": "numeric", "message": str(exc)}), file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
