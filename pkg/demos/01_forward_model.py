"""
Forward model basics
====================

Build the standard 42-frame acquisition schedule, evaluate the bolus AIF,
and push one voxel's kinetic parameters through the compartment model.
"""

from pathlib import Path

import numpy as np

import petkin as pk
from petkin.svgplot import curve_overlay

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

# the acquisition protocol: 1x30 s, 24x5 s, 9x20 s, 8x300 s = 42 frames, 45.5 min
schedule = pk.make_schedule([(1, 30), (24, 5), (9, 20), (8, 300)])
print(f"{schedule.n_frames} frames, scan length {schedule.end_time:.0f} s")

# the arterial input function: a sharp bolus peaking shortly after onset
aif = pk.FengAif()
mids = pk.mid_times(schedule)
aif_curve = pk.feng_curve(aif, mids)
peak_idx = int(np.argmax(aif_curve.values))
print(f"AIF peaks at {aif_curve.times[peak_idx]:.1f} s with {aif_curve.values[peak_idx]:.1f} kBq/mL")

# a liver-like voxel: fast exchange, moderate trapping, 20% blood
p = pk.KineticParams(K1=0.6, k2=0.9, k3=0.05, Vb=0.2)
print(f"net influx Ki = {pk.ki(p):.4f} /min")

# the impulse response starts at K1 and settles at Ki
t = np.linspace(0, 600, 601)
h = np.asarray(pk.impulse_response(p, t))
print(f"h(0) = {h[0]:.3f} (K1), h(10 min) = {h[-1]:.4f} (-> Ki = {pk.ki(p):.4f})")

# frame-discretized voxel signal, both discretization modes
tac_avg = pk.forward_model(p, aif, schedule, mode="frame-average")
tac_mid = pk.forward_model(p, aif, schedule, mode="midpoint")
print(f"frame-average vs midpoint, largest late-frame difference: "
      f"{np.max(np.abs(tac_avg[-8:] - tac_mid[-8:])):.4f} kBq/mL")

svg = curve_overlay(
    [
        ("arterial input", aif_curve.times, aif_curve.values),
        ("liver voxel", mids, tac_avg),
    ],
    "Bolus input and tissue response",
    "time (s)",
    "activity (kBq/mL)",
)
(out_dir / "forward_model.svg").write_text(svg)
print(f"wrote {out_dir / 'forward_model.svg'}")
