"""Training loop: LSGAN adversarial term on generated maps plus an L1 cycle
term that pushes the forward model of the generated (maps, AIF) back onto
the input image. Optimized with AdamW (beta1 = 0.5, beta2 = 0.999).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import PhantomSamples
from .model import DiscriminatorConfig, Generator, GeneratorConfig, PatchDiscriminator
from .physics import ForwardOperator


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    cycle_weight: float = 10.0
    adv_weight: float = 1.0
    patch: int = 16  # training volumes are full toy patches of this size
    seed: int = 0
    dt: float = 2.5  # fine-grid step for the training-time forward model

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.cycle_weight < 0 or self.adv_weight < 0:
            raise ValueError("loss weights must be non-negative")


def train(
    data_dir,
    gcfg: GeneratorConfig,
    dcfg: DiscriminatorConfig,
    tcfg: TrainConfig,
    out_dir,
) -> tuple[Path, Path]:
    """Train on a directory of phantom samples; writes ``checkpoint.pt``,
    ``losses.csv`` (one row per epoch), and ``run_log.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = PhantomSamples(data_dir)
    if gcfg.in_channels != data.n_frames:
        raise ValueError(
            f"generator expects {gcfg.in_channels} input channels, data has {data.n_frames} frames"
        )
    torch.manual_seed(tcfg.seed)
    gen = Generator(gcfg)
    disc = PatchDiscriminator(dcfg)
    opt_g = torch.optim.AdamW(gen.parameters(), lr=tcfg.lr, betas=(tcfg.beta1, tcfg.beta2))
    opt_d = torch.optim.AdamW(disc.parameters(), lr=tcfg.lr, betas=(tcfg.beta1, tcfg.beta2))
    fwd = ForwardOperator(data.frame_start, data.frame_duration, dt=tcfg.dt, dtype=torch.float32)
    rng = np.random.default_rng(tcfg.seed)

    rows = []
    for epoch in range(1, tcfg.epochs + 1):
        sums = {"gen": 0.0, "adv": 0.0, "cycle": 0.0, "disc": 0.0}
        pairs = data.unpaired_epoch(rng)
        for img_i, tgt_j in pairs:
            x = data.images[img_i][None]  # (1, T, Z, Y, X)
            real_maps_canon = data.maps[tgt_j][None]
            real_maps_head = real_maps_canon[:, (0, 1, 3, 2)]  # canonical -> head order

            head_maps, aif = gen(x)

            # discriminator on head-order maps
            opt_d.zero_grad()
            d_real = disc(real_maps_head)
            d_fake = disc(head_maps.detach())
            loss_d = 0.5 * (
                F.mse_loss(d_real, torch.ones_like(d_real))
                + F.mse_loss(d_fake, torch.zeros_like(d_fake))
            )
            loss_d.backward()
            opt_d.step()

            # generator: fool the discriminator + close the physics cycle
            opt_g.zero_grad()
            d_gen = disc(head_maps)
            loss_adv = F.mse_loss(d_gen, torch.ones_like(d_gen))
            canon = gen.canonical_maps(head_maps)
            params = canon.reshape(1, 4, -1)[0].T  # (V, 4)
            ca_fine = fwd.interp_mid_values(aif[0])
            x_hat = fwd(params, ca_fine).T.reshape(x.shape[1:])[None]
            loss_cycle = F.l1_loss(x_hat, x)
            loss_g = tcfg.adv_weight * loss_adv + tcfg.cycle_weight * loss_cycle
            loss_g.backward()
            opt_g.step()

            sums["gen"] += float(loss_g.detach())
            sums["adv"] += float(loss_adv.detach())
            sums["cycle"] += float(loss_cycle.detach())
            sums["disc"] += float(loss_d.detach())
        n = len(pairs)
        rows.append((epoch, sums["gen"] / n, sums["adv"] / n, sums["cycle"] / n, sums["disc"] / n))

    losses_path = out / "losses.csv"
    with open(losses_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("epoch,generator_loss,adversarial_loss,cycle_loss,discriminator_loss\n")
        for row in rows:
            f.write(",".join(repr(v) for v in row) + "\n")

    ckpt_path = out / "checkpoint.pt"
    torch.save(
        {
            "generator_config": gcfg.__dict__,
            "state_dict": gen.state_dict(),
            "frame_start_s": data.frame_start.tolist(),
            "frame_duration_s": data.frame_duration.tolist(),
        },
        ckpt_path,
    )

    # final-epoch map scale summary; instance norm shifts these because of
    # its per-volume normalization
    with torch.no_grad():
        head_maps, _ = gen(data.images[0][None])
        canon = gen.canonical_maps(head_maps)[0]
    run_log = {
        "epochs": tcfg.epochs,
        "norm": gcfg.norm,
        "final_cycle_loss": rows[-1][3],
        "first_cycle_loss": rows[0][3],
        "map_channel_means": {
            name: float(canon[c].mean()) for c, name in enumerate(("K1", "k2", "k3", "Vb"))
        },
    }
    with open(out / "run_log.json", "w", encoding="utf-8") as f:
        json.dump(run_log, f, indent=2, sort_keys=True)
        f.write("\n")
    return ckpt_path, losses_path
