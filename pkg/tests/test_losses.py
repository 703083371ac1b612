import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from petsynth import losses
from petsynth.errors import ShapeMismatch

from oracles import naive_mse, naive_ssim, central_difference, relative_error

RNG = np.random.default_rng(42)


def rand_image(h=24, w=24, lo=0.0, hi=1.0, seed=None):
    rng = np.random.default_rng(seed) if seed is not None else RNG
    return torch.from_numpy(rng.uniform(lo, hi, size=(h, w)))


# --- ssim --------------------------------------------------------------------

def test_ssim_identity_exact():
    x = rand_image(seed=1)
    assert float(losses.ssim(x, x)[0]) == 1.0


def test_ssim_matches_naive_oracle():
    x = rand_image(seed=2)
    y = rand_image(seed=3)
    ours = float(losses.ssim(x, y)[0])
    ref = naive_ssim(x.numpy(), y.numpy())
    assert abs(ours - ref) < 1e-9


def test_ssim_constant_images_closed_form():
    # variance terms cancel; only the luminance ratio remains
    c1, c2 = 0.2, 0.4
    x = torch.full((20, 20), c1, dtype=torch.float64)
    y = torch.full((20, 20), c2, dtype=torch.float64)
    expected = (2 * c1 * c2 + 1e-4) / (c1**2 + c2**2 + 1e-4)
    assert abs(float(losses.ssim(x, y)[0]) - expected) < 1e-9


def test_ssim_anticorrelated_binary_negative():
    # half-black/half-white vs its inverse: boundary windows see cov = -var
    x = torch.zeros(32, 32, dtype=torch.float64)
    x[:, 16:] = 1.0
    y = 1.0 - x
    assert float(losses.ssim(x, y)[0]) < 0.0


def test_ssim_symmetry():
    x, y = rand_image(seed=4), rand_image(seed=5)
    assert abs(float(losses.ssim(x, y)[0]) - float(losses.ssim(y, x)[0])) < 1e-12


def test_ssim_shift_sensitivity():
    x = rand_image(h=16, w=16, lo=0.1, hi=0.6, seed=6)
    base = float(losses.ssim(x, x)[0])
    shifted = float(losses.ssim(x, x + 0.2)[0])
    assert shifted < base


def test_ssim_range_batched():
    x = torch.from_numpy(RNG.uniform(0, 1, size=(3, 16, 16)))
    y = torch.from_numpy(RNG.uniform(0, 1, size=(3, 16, 16)))
    vals = losses.ssim(x, y)
    assert vals.shape == (3,)
    assert torch.all(vals >= -1.0) and torch.all(vals <= 1.0)


def test_ssim_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        losses.ssim(torch.zeros(8, 8), torch.zeros(8, 9))


def test_ssim_window_sums_to_one():
    win = losses.DEFAULT_SSIM.window(torch.float64)
    assert abs(float(win.sum()) - 1.0) < 1e-12


# --- mse / psnr ----------------------------------------------------------------

def test_mse_cases():
    x = rand_image(seed=7)
    assert float(losses.mse(x, x)) == 0.0
    assert abs(float(losses.mse(x, x + 0.1)) - 0.01) < 1e-12
    y = rand_image(seed=8)
    assert abs(float(losses.mse(x, y)) - naive_mse(x.numpy(), y.numpy())) < 1e-12


def test_psnr_cases():
    x = rand_image(seed=9)
    y = x + math.sqrt(0.01)  # mse exactly 0.01
    assert abs(losses.psnr(x, y) - 20.0) < 1e-9
    assert losses.psnr(x, x) == math.inf


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_psnr_mse_duality(seed):
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(rng.uniform(0, 1, size=(12, 12)))
    y = torch.from_numpy(rng.uniform(0, 1, size=(12, 12)))
    m = float(losses.mse(x, y))
    assert abs(losses.psnr(x, y) - 10 * math.log10(1 / m)) < 1e-9


# --- composite losses ----------------------------------------------------------

def test_paired_loss_perfect_zero():
    pet = rand_image(seed=10)
    asl = rand_image(seed=11)
    assert float(losses.paired_loss(pet, pet, asl, asl)) == 0.0


def test_paired_loss_linearity_half_ssim():
    # constants with a^2 + b^2 - 4ab = C1 give SSIM exactly 1/2
    a = math.sqrt(1e-4 / 0.24)
    b = 0.2 * a
    pet = rand_image(seed=12)
    asl_gt = torch.full((16, 16), a, dtype=torch.float64)
    asl_re = torch.full((16, 16), b, dtype=torch.float64)
    loss = float(losses.paired_loss(pet, pet, asl_re, asl_gt))
    assert abs(loss - 0.25) < 1e-9


def test_paired_loss_single_task_pet_only():
    pet_pred = rand_image(seed=13)
    pet_gt = rand_image(seed=14)
    expected = 1.0 - float(losses.ssim(pet_pred, pet_gt)[0])
    assert abs(float(losses.paired_loss(pet_pred, pet_gt)) - expected) < 1e-12


def test_unpaired_loss_cases():
    asl = rand_image(seed=15)
    assert float(losses.unpaired_loss(asl, asl)) == 0.0
    x = torch.zeros(32, 32, dtype=torch.float64)
    x[:, 16:] = 1.0
    assert float(losses.unpaired_loss(1.0 - x, x)) > 1.0
    y = rand_image(seed=16)
    # definitionally the paired loss with the PET term removed and weight 1
    assert abs(
        float(losses.unpaired_loss(asl, y))
        - (1.0 - float(losses.ssim(asl, y)[0]))
    ) < 1e-12


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(rng.uniform(0, 1, size=(12, 12)))
    y = torch.from_numpy(rng.uniform(0, 1, size=(12, 12)))
    assert float(losses.unpaired_loss(x, y)) >= 0.0
    assert float(losses.paired_loss(x, y, y, x)) >= 0.0


def test_paired_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(17)
    pet_gt = torch.from_numpy(rng.uniform(0.2, 0.8, size=(8, 8)))
    asl_re = torch.from_numpy(rng.uniform(0.2, 0.8, size=(8, 8)))
    asl_gt = torch.from_numpy(rng.uniform(0.2, 0.8, size=(8, 8)))
    pet0 = rng.uniform(0.2, 0.8, size=(8, 8))

    pet = torch.from_numpy(pet0.copy()).requires_grad_(True)
    loss = losses.paired_loss(pet, pet_gt, asl_re, asl_gt)
    loss.backward()
    analytic = pet.grad.numpy()

    def f(x):
        return float(losses.paired_loss(torch.from_numpy(x), pet_gt, asl_re, asl_gt))

    fd = central_difference(f, pet0, step=1e-3)
    assert relative_error(analytic, fd) < 1e-4
