"""Generator and patch discriminator.

The generator maps a dynamic volume (time as channels) to four parameter
channels in head order (K1, k2, Vb, k3) plus a per-scan AIF sampled at frame
mid-times. The backbone is a small 3-D encoder-decoder; depth and widths are
artifact choices at toy scale. The discriminator judges parameter maps with
three convolution layers, 32 filters in the final one, and a patch output.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

HEAD_ORDER = ("K1", "k2", "Vb", "k3")  # generator head order
TO_CANONICAL = (0, 1, 3, 2)  # reorder head channels to (K1, k2, k3, Vb)


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 42
    out_channels: int = 4
    aif_head_len: int = 42
    base_width: int = 16
    norm: str = "instance"  # or "none"

    def __post_init__(self) -> None:
        if self.out_channels != 4:
            raise ValueError("generator must emit 4 parameter channels")
        if self.norm not in ("instance", "none"):
            raise ValueError(f"unknown norm {self.norm!r}")


@dataclass(frozen=True)
class DiscriminatorConfig:
    n_layers: int = 3
    final_filters: int = 32

    def __post_init__(self) -> None:
        if self.n_layers < 1 or self.final_filters < 1:
            raise ValueError("discriminator needs >= 1 layer and >= 1 filter")


def _norm(kind: str, ch: int) -> nn.Module:
    return nn.InstanceNorm3d(ch, affine=True) if kind == "instance" else nn.Identity()


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig) -> None:
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        self.encode = nn.Sequential(
            nn.Conv3d(cfg.in_channels, w, 3, padding=1),
            _norm(cfg.norm, w),
            nn.ReLU(inplace=True),
            nn.Conv3d(w, 2 * w, 3, stride=2, padding=1),
            _norm(cfg.norm, 2 * w),
            nn.ReLU(inplace=True),
            nn.Conv3d(2 * w, 2 * w, 3, padding=1),
            _norm(cfg.norm, 2 * w),
            nn.ReLU(inplace=True),
        )
        self.decode = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="trilinear", align_corners=False),
            nn.Conv3d(2 * w, w, 3, padding=1),
            _norm(cfg.norm, w),
            nn.ReLU(inplace=True),
            nn.Conv3d(w, cfg.out_channels, 1),
        )
        self.aif_head = nn.Sequential(
            nn.Linear(2 * w, 64),
            nn.ReLU(inplace=True),
            nn.Linear(64, cfg.aif_head_len),
        )
        self.aif_scale_raw = nn.Parameter(torch.tensor(100.0))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """x: (B, T, Z, Y, X) -> maps (B, 4, Z, Y, X) in head order, aif (B, T)."""
        feat = self.encode(x)
        raw_maps = self.decode(feat)
        k1 = torch.nn.functional.softplus(raw_maps[:, 0])
        k2 = torch.nn.functional.softplus(raw_maps[:, 1])
        vb = torch.sigmoid(raw_maps[:, 2])
        k3 = torch.nn.functional.softplus(raw_maps[:, 3])
        maps = torch.stack([k1, k2, vb, k3], dim=1)
        pooled = feat.mean(dim=(2, 3, 4))
        scale = torch.nn.functional.softplus(self.aif_scale_raw)
        aif = torch.nn.functional.softplus(self.aif_head(pooled)) * scale
        return maps, aif

    def canonical_maps(self, head_maps: torch.Tensor) -> torch.Tensor:
        """Reorder head channels (K1, k2, Vb, k3) to canonical (K1, k2, k3, Vb)."""
        return head_maps[:, TO_CANONICAL]


class PatchDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig, in_channels: int = 4) -> None:
        super().__init__()
        widths = [
            max(1, cfg.final_filters >> (cfg.n_layers - 1 - i)) for i in range(cfg.n_layers)
        ]  # e.g. 8, 16, 32 for three layers ending at 32 filters
        layers: list[nn.Module] = []
        prev = in_channels
        for i, w in enumerate(widths):
            stride = 2 if i < cfg.n_layers - 1 else 1
            layers.append(nn.Conv3d(prev, w, 4, stride=stride, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm3d(w, affine=True))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            prev = w
        layers.append(nn.Conv3d(prev, 1, 4, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        return self.net(maps)
