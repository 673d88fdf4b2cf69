import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

PAPER_SEGMENTS = [[1, 30], [24, 5], [9, 20], [8, 300]]


def engine(args):
    cmd = [sys.executable, "-m", "petkin"] + [str(a) for a in args]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="session")
def phantom_bank(tmp_path_factory) -> Path:
    """Eight varied 16^3 phantom samples produced by the engine CLI."""
    root = tmp_path_factory.mktemp("phantoms")
    (root / "sched.json").write_text(json.dumps({"segments": PAPER_SEGMENTS}))
    rng = np.random.default_rng(7)
    for i in range(8):
        spec = {
            "dims": [16, 16, 16],
            "regions": [
                {"name": "body", "center": [7.5, 7.5, 7.5], "semi_axes": [6.8, 5.0, 5.0],
                 "params": {"K1": round(0.1 * rng.uniform(0.8, 1.2), 4), "k2": 0.25,
                            "k3": 0.03, "Vb": 0.05}},
                {"name": "organ", "center": [6.0, 8.0, 7.0], "semi_axes": [2.0, 3.0, 3.0],
                 "params": {"K1": round(0.6 * rng.uniform(0.8, 1.2), 4), "k2": 0.9,
                            "k3": 0.05, "Vb": 0.2}},
                {"name": "hot", "center": [10.0, 6.0, 8.0], "semi_axes": [1.5, 1.5, 1.5],
                 "params": {"K1": round(0.5 * rng.uniform(0.8, 1.2), 4), "k2": 0.4,
                            "k3": 0.12, "Vb": 0.1}},
            ],
            "aif": {"tau_s": 30.0, "a1": round(800 * rng.uniform(0.85, 1.15), 2),
                    "a2": 20.0, "a3": 20.0, "l1": -4.0, "l2": -0.1, "l3": -0.01},
            "noise_sigma0": 0.03,
            "seed": i,
        }
        spec_path = root / f"spec_{i}.json"
        spec_path.write_text(json.dumps(spec))
        engine(["simulate", "--spec", spec_path, "--schedule", root / "sched.json",
                "--out", root / f"sample_{i}"])
    return root
