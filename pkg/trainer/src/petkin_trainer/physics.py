"""Differentiable compartment-model forward operator.

Re-implements the engine's forward semantics in torch so the cycle loss can
backpropagate through it: trapezoid-quadrature convolution of the tissue
kernel with the input function on a fine uniform grid, blood-volume mixing,
and frame averaging. The exponential convolution runs as an FFT product with
per-voxel kernels, which is the same quadrature sum in a different order.
"""

from __future__ import annotations

import math

import numpy as np
import torch


class ForwardOperator:
    """Fixed (schedule, grid) forward evaluator for batches of voxels.

    Build once, then call with per-voxel parameters and an input function.
    All tensors live on CPU; dtype is configurable (float64 for parity
    checks, float32 for training).
    """

    def __init__(
        self,
        frame_start: np.ndarray,
        frame_duration: np.ndarray,
        dt: float = 0.5,
        dtype: torch.dtype = torch.float32,
        voxel_chunk: int = 512,
    ) -> None:
        if dt <= 0 or dt > float(np.min(frame_duration)):
            raise ValueError("dt must be positive and not exceed the smallest frame")
        self.dtype = dtype
        self.voxel_chunk = int(voxel_chunk)
        end = float(frame_start[-1] + frame_duration[-1])
        self.n = int(math.ceil(end / dt - 1e-9)) + 1
        while (self.n - 1) * dt < end - 1e-9:
            self.n += 1
        self.dt_s = float(dt)
        t_s = np.arange(self.n) * dt
        self.t_s = t_s
        self.t_min = torch.as_tensor(t_s / 60.0, dtype=dtype)
        self.dt_min = dt / 60.0
        self.n_frames = len(frame_start)
        self._fft_len = 1 << (2 * self.n - 1).bit_length()

        # frame-average weights: interpolated cumulative trapezoid at edges
        edges = np.concatenate([[0.0], frame_start + frame_duration])
        idx = np.clip(np.floor(edges / dt).astype(np.int64), 0, self.n - 2)
        self._edge_idx = torch.as_tensor(idx)
        self._edge_frac = torch.as_tensor(edges / dt - idx, dtype=dtype)
        self._dur_s = torch.as_tensor(frame_duration, dtype=dtype)

        # mid-time linear interpolation (AIF head values -> fine grid)
        mids = frame_start + 0.5 * frame_duration
        self._mids = mids

    def frames_of(self, fine: torch.Tensor) -> torch.Tensor:
        """Frame-average signals of shape (..., n) to (..., T)."""
        cum = torch.cumsum(fine, dim=-1)
        cum = self.dt_s * (cum - 0.5 * (fine + fine[..., :1]))
        lo = cum.index_select(-1, self._edge_idx)
        hi = cum.index_select(-1, self._edge_idx + 1)
        at_edges = lo + self._edge_frac * (hi - lo)
        return torch.diff(at_edges, dim=-1) / self._dur_s

    def interp_mid_values(self, values: torch.Tensor) -> torch.Tensor:
        """Differentiable piecewise-linear resampling of frame-mid-time
        samples onto the fine grid: zero before the first mid, hold-last
        after (matches the engine's curve interpolation convention)."""
        t = self.t_s
        mids = self._mids
        seg = np.clip(np.searchsorted(mids, t, side="right") - 1, 0, len(mids) - 2)
        width = mids[seg + 1] - mids[seg]
        frac = np.clip((t - mids[seg]) / width, 0.0, 1.0)
        w_lo = torch.as_tensor(1.0 - frac, dtype=values.dtype)
        w_hi = torch.as_tensor(frac, dtype=values.dtype)
        before = torch.as_tensor(t < mids[0], dtype=values.dtype)
        seg_t = torch.as_tensor(seg)
        out = values.index_select(-1, seg_t) * w_lo + values.index_select(-1, seg_t + 1) * w_hi
        return out * (1.0 - before)

    def sample_curve(self, times: np.ndarray, values: np.ndarray) -> torch.Tensor:
        """Non-differentiable resampling of a stored curve onto the grid."""
        fine = np.interp(self.t_s, times, values, left=0.0, right=float(values[-1]))
        return torch.as_tensor(fine, dtype=self.dtype)

    def _exp_conv(self, alpha: torch.Tensor, ca: torch.Tensor) -> torch.Tensor:
        """Trapezoid convolution of exp(-alpha t) with ca for each voxel.

        alpha: (V,), ca: (n,) -> (V, n). The full convolution sum runs as an
        FFT product in voxel chunks to bound memory.
        """
        n = self.n
        ca_f = torch.fft.rfft(ca, n=self._fft_len)
        rows = []
        for lo in range(0, alpha.shape[0], self.voxel_chunk):
            a = alpha[lo:lo + self.voxel_chunk, None]
            kernel = torch.exp(-a * self.t_min[None, :])
            full = torch.fft.irfft(torch.fft.rfft(kernel, n=self._fft_len) * ca_f, n=self._fft_len)[:, :n]
            rows.append(self.dt_min * (full - 0.5 * (ca[None, :] + ca[0] * kernel)))
        return torch.cat(rows, dim=0)

    def tissue_curves(self, k1: torch.Tensor, k2: torch.Tensor, k3: torch.Tensor,
                      ca_fine: torch.Tensor) -> torch.Tensor:
        """C_T on the fine grid for voxel parameter vectors of shape (V,)."""
        alpha = k2 + k3
        alpha = torch.clamp(alpha, min=1e-9)
        cum = torch.cumsum(ca_fine, dim=-1)
        i1 = self.dt_min * (cum - 0.5 * (ca_fine + ca_fine[..., :1]))
        e = self._exp_conv(alpha, ca_fine)
        ct = k1[:, None] * ((k3 / alpha)[:, None] * i1[None, :] + (k2 / alpha)[:, None] * e)
        return torch.clamp(ct, min=0.0)

    def __call__(self, params: torch.Tensor, ca_fine: torch.Tensor) -> torch.Tensor:
        """Frame values (V, T) for voxel parameters (V, 4) in canonical order
        (K1, k2, k3, Vb) and an input function on the fine grid (n,)."""
        k1, k2, k3, vb = params[:, 0], params[:, 1], params[:, 2], params[:, 3]
        ct = self.tissue_curves(k1, k2, k3, ca_fine)
        cpet = vb[:, None] * ca_fine[None, :] + (1.0 - vb)[:, None] * ct
        return self.frames_of(cpet)
