"""Unpaired phantom dataset.

A data directory holds one subdirectory per sample, each containing an
``image/`` dynamic volume, a ``maps/`` volume, and an ``aif.csv`` at frame
mid-times. Unpaired batches draw the image from one sample and the
(maps, AIF) pair from a different sample; pairing an image with its own
targets is asserted against.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .formats import FormatError, read_aif_csv, read_dynamic, read_maps


class PhantomSamples:
    def __init__(self, data_dir) -> None:
        root = Path(data_dir)
        self.sample_dirs = sorted(
            p for p in root.iterdir() if (p / "image" / "meta.json").is_file()
        )
        if len(self.sample_dirs) < 2:
            raise FormatError(
                f"{root} holds {len(self.sample_dirs)} samples; unpaired training needs >= 2"
            )
        self.images: list[torch.Tensor] = []
        self.maps: list[torch.Tensor] = []
        self.aifs: list[torch.Tensor] = []
        self.frame_start = None
        self.frame_duration = None
        for d in self.sample_dirs:
            values, start, dur = read_dynamic(d / "image")
            if self.frame_start is None:
                self.frame_start, self.frame_duration = start, dur
            elif len(start) != len(self.frame_start):
                raise FormatError(f"{d}: schedule length differs from the first sample")
            self.images.append(torch.as_tensor(values.copy(), dtype=torch.float32))
            self.maps.append(torch.as_tensor(read_maps(d / "maps").copy(), dtype=torch.float32))
            _, aif_vals = read_aif_csv(d / "aif.csv")
            if len(aif_vals) != len(start):
                raise FormatError(f"{d}: AIF sample count differs from the frame count")
            self.aifs.append(torch.as_tensor(aif_vals, dtype=torch.float32))

    def __len__(self) -> int:
        return len(self.sample_dirs)

    @property
    def n_frames(self) -> int:
        return len(self.frame_start)

    def unpaired_epoch(self, rng: np.random.Generator) -> list[tuple[int, int]]:
        """One epoch of (image_index, target_index) pairs, never self-paired."""
        n = len(self)
        imgs = rng.permutation(n)
        pairs = []
        for i in imgs:
            j = int(rng.integers(n - 1))
            if j >= i:
                j += 1
            assert j != i, "unpaired sampling must not pair a scan with its own targets"
            pairs.append((int(i), j))
        return pairs
