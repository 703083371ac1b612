"""Independent reference implementations used to cross-check the package.

Everything here is deliberately naive (explicit loops, numpy float64)
and shares no code with the production paths it verifies.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.stats


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.array([math.exp(-((i - half) ** 2) / (2 * sigma**2)) for i in range(size)])
    g /= g.sum()
    w = np.outer(g, g)
    return w / w.sum()


def naive_ssim(x: np.ndarray, y: np.ndarray, size: int = 11, sigma: float = 1.5,
               k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Windowed SSIM mean via explicit spatial loops with reflect padding."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    assert x.shape == y.shape and x.ndim == 2
    w = gaussian_window(size, sigma)
    pad = size // 2
    xp = np.pad(x, pad, mode="reflect")
    yp = np.pad(y, pad, mode="reflect")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    h, wid = x.shape
    total = 0.0
    for i in range(h):
        for j in range(wid):
            wx = xp[i : i + size, j : j + size]
            wy = yp[i : i + size, j : j + size]
            mx = float((w * wx).sum())
            my = float((w * wy).sum())
            vx = float((w * wx * wx).sum()) - mx * mx
            vy = float((w * wy * wy).sum()) - my * my
            cxy = float((w * wx * wy).sum()) - mx * my
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / (
                (mx * mx + my * my + c1) * (vx + vy + c2)
            )
    return total / (h * wid)


def naive_mse(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    total = 0.0
    count = 0
    for a, b in zip(x.reshape(-1), y.reshape(-1)):
        total += (float(a) - float(b)) ** 2
        count += 1
    return total / count


def naive_rm_anova(table) -> tuple[float, float]:
    """One-way repeated-measures ANOVA from first principles (pure loops)."""
    rows = [list(map(float, row)) for row in table]
    n = len(rows)
    k = len(rows[0])
    grand = sum(sum(row) for row in rows) / (n * k)
    col_means = [sum(rows[i][j] for i in range(n)) / n for j in range(k)]
    row_means = [sum(row) / k for row in rows]
    ss_treat = n * sum((cm - grand) ** 2 for cm in col_means)
    ss_subj = k * sum((rm - grand) ** 2 for rm in row_means)
    ss_total = sum((rows[i][j] - grand) ** 2 for i in range(n) for j in range(k))
    ss_err = ss_total - ss_treat - ss_subj
    df_treat = k - 1
    df_err = (k - 1) * (n - 1)
    if ss_treat == 0.0:
        return 0.0, 1.0
    if ss_err <= 0.0:
        return float("inf"), 0.0
    f_stat = (ss_treat / df_treat) / (ss_err / df_err)
    return f_stat, float(scipy.stats.f.sf(f_stat, df_treat, df_err))


def central_difference(f, x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        fp = f(x)
        xf[i] = orig - step
        fm = f(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
