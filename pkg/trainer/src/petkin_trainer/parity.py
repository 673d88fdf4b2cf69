"""Forward-model parity against the engine CLI.

Builds a synthetic phantom spec whose voxels carry the requested parameter
sets, runs ``petkin simulate`` with zero noise, and compares the trainer's
differentiable forward operator against the engine's voxel signals on
identical inputs.
"""

from __future__ import annotations

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

from .formats import read_aif_csv, read_dynamic
from .physics import ForwardOperator

PAPER_SEGMENTS = [[1, 30], [24, 5], [9, 20], [8, 300]]
DEFAULT_FENG = {"tau_s": 30.0, "a1": 800.0, "a2": 20.0, "a3": 20.0, "l1": -4.0, "l2": -0.1, "l3": -0.01}

# the engine's stock phantom regions; fixed parity cases alongside random ones
ENGINE_REGION_PARAMS = [
    (0.1, 0.25, 0.03, 0.05),
    (0.6, 0.9, 0.05, 0.2),
    (0.8, 1.2, 0.02, 0.25),
    (0.1, 0.1, 0.01, 0.9),
    (0.3, 0.5, 0.06, 0.04),
    (0.5, 0.4, 0.12, 0.1),
    (0.0, 0.0, 0.0, 0.05),  # K1 = 0: both sides reduce to Vb * framed AIF
]


def _engine(args: list[str]) -> None:
    cmd = [sys.executable, "-m", "petkin"] + args
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"engine call failed ({proc.returncode}): {proc.stderr.strip()}")


def _random_cases(n: int, seed: int) -> list[tuple[float, float, float, float]]:
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n):
        cases.append((
            float(rng.uniform(0.05, 1.5)),
            float(rng.uniform(0.05, 1.5)),
            float(rng.uniform(0.01, 0.5)),
            float(rng.uniform(0.0, 0.5)),
        ))
    return cases


def _simulate_cases(cases, aif: dict, workdir: Path, tag: str) -> Path:
    n = len(cases)
    spec = {
        "dims": [1, 1, n],
        "regions": [
            {
                "name": f"case_{i:02d}",
                "center": [0.0, 0.0, float(i)],
                "semi_axes": [0.4, 0.4, 0.4],
                "params": {"K1": k1, "k2": k2, "k3": k3, "Vb": vb},
            }
            for i, (k1, k2, k3, vb) in enumerate(cases)
        ],
        "aif": aif,
        "noise_sigma0": 0.0,
        "seed": 0,
    }
    (workdir / f"spec_{tag}.json").write_text(json.dumps(spec, indent=2))
    (workdir / "sched.json").write_text(json.dumps({"segments": PAPER_SEGMENTS}))
    out = workdir / f"sim_{tag}"
    _engine(["simulate", "--spec", str(workdir / f"spec_{tag}.json"),
             "--schedule", str(workdir / "sched.json"), "--out", str(out), "--noise", "0"])
    return out


def _compare(cases, sim_dir: Path, dt: float) -> float:
    values, start, dur = read_dynamic(sim_dir / "image")
    engine_tacs = values.reshape(values.shape[0], -1).T.astype(np.float64)  # (n, T)
    t, v = read_aif_csv(sim_dir / "aif_fine.csv")
    fwd = ForwardOperator(start, dur, dt=dt, dtype=torch.float64)
    ca = fwd.sample_curve(t, v)
    params = torch.as_tensor(np.asarray(cases, dtype=np.float64))
    ours = fwd(params, ca).numpy()
    return float(np.max(np.abs(ours - engine_tacs)))


def forward_parity(n_random: int = 20, seed: int = 0, dt: float = 0.5,
                   workdir=None) -> dict:
    """Max absolute frame-value difference between the two forward models."""
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(workdir) if workdir else Path(tmp)
        root.mkdir(parents=True, exist_ok=True)
        cases = _random_cases(n_random, seed) + ENGINE_REGION_PARAMS
        sim = _simulate_cases(cases, DEFAULT_FENG, root, "base")
        diff = _compare(cases, sim, dt)
        # doubled AIF amplitudes: linearity holds on both sides
        scaled = dict(DEFAULT_FENG)
        for key in ("a1", "a2", "a3"):
            scaled[key] = 2.0 * scaled[key]
        sim2 = _simulate_cases(cases, scaled, root, "scaled")
        diff_scaled = _compare(cases, sim2, dt)
    return {
        "n_cases": len(cases),
        "n_random": n_random,
        "seed": seed,
        "dt_s": dt,
        "max_abs_diff": diff,
        "max_abs_diff_scaled_aif": diff_scaled,
    }
