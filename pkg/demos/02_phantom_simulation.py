"""
Phantom simulation
==================

Build the six-region mouse-like phantom, synthesize a noisy dynamic scan,
and write the volumes in the on-disk format shared with the trainer.
"""

from pathlib import Path

import numpy as np

import petkin as pk
from petkin.storage import write_dynamic, write_labels, write_maps
from petkin.svgplot import map_slice

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

schedule = pk.make_schedule([(1, 30), (24, 5), (9, 20), (8, 300)])
spec = pk.default_mouse_spec(dims=(32, 32, 32), noise_sigma0=0.05, seed=0)
phantom = pk.build_phantom(spec, schedule)

print("region voxel counts:")
for i, region in enumerate(spec.regions, start=1):
    print(f"  {region.name:18s} {np.count_nonzero(phantom.labels == i):5d} voxels  "
          f"Ki = {pk.ki(region.params):.4f} /min")

clean = pk.simulate_scan(phantom, schedule, noise_sigma0=0.0)
noisy = pk.simulate_scan(phantom, schedule)  # spec noise settings, seeded
inside = phantom.maps.mask
snr = np.mean(clean.values[-1][inside]) / np.std((noisy.values - clean.values)[-1][inside])
print(f"last-frame SNR inside the body: {snr:.1f}")

write_dynamic(out_dir / "scan", noisy)
write_maps(out_dir / "truth_maps", phantom.maps)
write_labels(out_dir / "labels", phantom.labels)
print(f"wrote volumes under {out_dir}")

# a mid-axial slice of the K1 truth map
z = 13  # cuts through the liver
svg = map_slice(phantom.maps.channel("K1")[z], f"K1 truth, axial slice {z}", "mL/min/mL")
(out_dir / "k1_slice.svg").write_text(svg)
print(f"wrote {out_dir / 'k1_slice.svg'}")
