"""Image discrepancy metrics and the training losses built on them.

All functions accept (H, W) or (B, H, W) tensors and are differentiable,
so the same SSIM code serves both as evaluation metric and loss term.
Local statistics use a Gaussian window with reflected same-size padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ShapeMismatch


def _gaussian_window(size: int, sigma: float, dtype: torch.dtype) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    g = g / g.sum()
    window = torch.outer(g, g)
    return window / window.sum()


@dataclass(frozen=True)
class SsimParams:
    """Window and stabilizer constants for SSIM."""

    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 1 or self.sigma <= 0 or self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("SSIM constants must be positive")

    def window(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return _gaussian_window(self.window_size, self.sigma, dtype)


DEFAULT_SSIM = SsimParams()


def _as_batch(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 2:
        return x.unsqueeze(0)
    if x.dim() == 3:
        return x
    raise ShapeMismatch(f"expected (H, W) or (B, H, W), got {tuple(x.shape)}")


def _check_pair(x: torch.Tensor, y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    xb, yb = _as_batch(x), _as_batch(y)
    if xb.shape != yb.shape:
        raise ShapeMismatch(f"shape mismatch: {tuple(xb.shape)} vs {tuple(yb.shape)}")
    return xb, yb


def ssim_map(x: torch.Tensor, y: torch.Tensor, params: SsimParams = DEFAULT_SSIM) -> torch.Tensor:
    """Local SSIM map, same spatial size as the inputs. Returns (B, H, W)."""
    xb, yb = _check_pair(x, y)
    xb = xb.unsqueeze(1)
    yb = yb.unsqueeze(1)
    win = params.window(xb.dtype).to(xb.device).view(1, 1, params.window_size, params.window_size)
    pad = params.window_size // 2

    def smooth(t: torch.Tensor) -> torch.Tensor:
        return F.conv2d(F.pad(t, (pad, pad, pad, pad), mode="reflect"), win)

    mu_x = smooth(xb)
    mu_y = smooth(yb)
    var_x = smooth(xb * xb) - mu_x * mu_x
    var_y = smooth(yb * yb) - mu_y * mu_y
    cov = smooth(xb * yb) - mu_x * mu_y

    c1 = (params.k1 * params.data_range) ** 2
    c2 = (params.k2 * params.data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return (num / den).squeeze(1)


def ssim(x: torch.Tensor, y: torch.Tensor, params: SsimParams = DEFAULT_SSIM) -> torch.Tensor:
    """Per-slice mean of the local SSIM map; shape (B,). Symmetric in (x, y)."""
    return ssim_map(x, y, params).mean(dim=(1, 2))


def mse(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean squared pixel difference over all given pixels (scalar)."""
    xb, yb = _check_pair(x, y)
    return (xb - yb).pow(2).mean()


def psnr(x: torch.Tensor, y: torch.Tensor, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images are identical."""
    m = float(mse(x, y))
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / m)


def paired_loss(
    pet_pred: torch.Tensor,
    pet_gt: torch.Tensor,
    asl_recon: torch.Tensor | None = None,
    asl_gt: torch.Tensor | None = None,
    params: SsimParams = DEFAULT_SSIM,
) -> torch.Tensor:
    """Equal-weight SSIM discrepancy of both outputs for paired samples.

    ``0.5 * (1 - ssim(pet)) + 0.5 * (1 - ssim(asl))``. When the ASL pair is
    omitted (single-task networks) the PET term is used alone with weight 1.
    """
    pet_term = 1.0 - ssim(pet_pred, pet_gt, params).mean()
    if asl_recon is None or asl_gt is None:
        return pet_term
    asl_term = 1.0 - ssim(asl_recon, asl_gt, params).mean()
    return 0.5 * pet_term + 0.5 * asl_term


def unpaired_loss(
    asl_recon: torch.Tensor,
    asl_gt: torch.Tensor,
    params: SsimParams = DEFAULT_SSIM,
) -> torch.Tensor:
    """SSIM discrepancy of the ASL reconstruction alone (no PET ground truth)."""
    return 1.0 - ssim(asl_recon, asl_gt, params).mean()
