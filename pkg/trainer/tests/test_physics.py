import numpy as np
import pytest
import torch

from petkin_trainer.formats import read_aif_csv, read_dynamic
from petkin_trainer.parity import forward_parity
from petkin_trainer.physics import ForwardOperator


def test_forward_parity_with_engine():
    """Acceptance: max abs diff <= 1e-4 over 20 random cases (plus fixed ones)."""
    report = forward_parity(n_random=20, seed=0, dt=0.5)
    print(f"[{'PASS' if report['max_abs_diff'] <= 1e-4 else 'FAIL'}] criterion 10: "
          f"forward parity max abs diff {report['max_abs_diff']:.3e}")
    assert report["max_abs_diff"] <= 1e-4
    # doubling the AIF amplitudes preserves the bound (linearity on both sides)
    assert report["max_abs_diff_scaled_aif"] <= 2e-4
    assert report["max_abs_diff_scaled_aif"] == pytest.approx(2 * report["max_abs_diff"], rel=0.5)


def test_k1_zero_reduces_to_blood_scaling(phantom_bank):
    values, start, dur = read_dynamic(phantom_bank / "sample_0" / "image")
    t, v = read_aif_csv(phantom_bank / "sample_0" / "aif_fine.csv")
    fwd = ForwardOperator(start, dur, dt=0.5, dtype=torch.float64)
    ca = fwd.sample_curve(t, v)
    params = torch.tensor([[0.0, 0.0, 0.0, 0.05]], dtype=torch.float64)
    got = fwd(params, ca)[0]
    expected = 0.05 * fwd.frames_of(ca)
    assert torch.max(torch.abs(got - expected)).item() <= 1e-6


def test_mid_value_interpolation_conventions():
    start = np.array([0.0, 10.0, 20.0])
    dur = np.array([10.0, 10.0, 10.0])
    fwd = ForwardOperator(start, dur, dt=1.0, dtype=torch.float64)
    vals = torch.tensor([2.0, 4.0, 6.0], dtype=torch.float64)
    fine = fwd.interp_mid_values(vals)
    t = fwd.t_s
    assert fine[t < 5.0].abs().max().item() == 0.0  # zero before the first mid
    assert fine[int(10 / 1.0)].item() == pytest.approx(3.0)  # linear between mids
    assert fine[-1].item() == pytest.approx(6.0)  # hold-last beyond the last mid


def test_gradient_matches_finite_differences():
    """Cycle-loss gradient against central differences on a tiny network."""
    from petkin_trainer.model import Generator, GeneratorConfig

    torch.manual_seed(0)
    start = np.arange(6) * 10.0
    dur = np.full(6, 10.0)
    gcfg = GeneratorConfig(in_channels=6, aif_head_len=6, base_width=2, norm="none")
    gen = Generator(gcfg).double()
    fwd = ForwardOperator(start, dur, dt=2.0, dtype=torch.float64)
    x = torch.rand((1, 6, 4, 4, 4), dtype=torch.float64) * 5.0

    def cycle_loss() -> torch.Tensor:
        head_maps, aif = gen(x)
        canon = gen.canonical_maps(head_maps)
        params = canon.reshape(1, 4, -1)[0].T
        ca = fwd.interp_mid_values(aif[0])
        x_hat = fwd(params, ca).T.reshape(x.shape[1:])[None]
        return torch.nn.functional.l1_loss(x_hat, x)

    loss = cycle_loss()
    loss.backward()
    weight = gen.encode[0].weight
    idx = (0, 0, 1, 1, 1)
    analytic = float(weight.grad[idx])
    h = 1e-5
    with torch.no_grad():
        weight[idx] += h
    up = float(cycle_loss().detach())
    with torch.no_grad():
        weight[idx] -= 2 * h
    down = float(cycle_loss().detach())
    fd = (up - down) / (2 * h)
    assert analytic == pytest.approx(fd, rel=1e-2)


def test_unpaired_sampling_never_self_pairs(phantom_bank):
    from petkin_trainer.data import PhantomSamples

    data = PhantomSamples(phantom_bank)
    rng = np.random.default_rng(0)
    for _ in range(50):
        for i, j in data.unpaired_epoch(rng):
            assert i != j


def test_fewer_than_two_samples_rejected(tmp_path):
    from petkin_trainer.data import PhantomSamples
    from petkin_trainer.formats import FormatError

    with pytest.raises(FormatError):
        PhantomSamples(tmp_path)
