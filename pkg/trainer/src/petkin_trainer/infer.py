"""Inference: dynamic volume -> parameter maps (canonical channel order on
disk) and an AIF CSV at frame mid-times."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .formats import FormatError, mid_times, read_dynamic, write_aif_csv, write_maps
from .model import Generator, GeneratorConfig


def load_checkpoint(path) -> tuple[Generator, np.ndarray, np.ndarray]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    gcfg = GeneratorConfig(**blob["generator_config"])
    gen = Generator(gcfg)
    gen.load_state_dict(blob["state_dict"])
    gen.eval()
    return gen, np.asarray(blob["frame_start_s"]), np.asarray(blob["frame_duration_s"])


def infer(checkpoint, image_dir, out_dir) -> None:
    gen, frame_start, frame_duration = load_checkpoint(checkpoint)
    values, start, dur = read_dynamic(image_dir)
    if values.shape[0] != gen.cfg.in_channels:
        raise FormatError(
            f"image has {values.shape[0]} frames; checkpoint expects {gen.cfg.in_channels}"
        )
    x = torch.as_tensor(values.copy(), dtype=torch.float32)[None]
    with torch.no_grad():
        head_maps, aif = gen(x)
        canon = gen.canonical_maps(head_maps)[0].numpy()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_maps(out / "maps", canon.astype(np.float64))
    write_aif_csv(out / "aif_est.csv", mid_times(start, dur), aif[0].numpy().astype(np.float64))
