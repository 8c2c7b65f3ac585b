"""PSNR and SSIM.

SSIM averages the standard luminance/contrast/structure kernel over every
8x8 uniform window (stride 1), using population statistics inside each
window and the usual constants ``C1 = (0.01 peak)^2``, ``C2 = (0.03 peak)^2``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 8


@dataclass
class QualityReport:
    T: float
    N: int
    estimator: str
    seed: int
    psnr_db: float
    ssim: float
    extra: dict = field(default_factory=dict)

    def as_row(self):
        row = {"T": self.T, "N": self.N, "estimator": self.estimator, "seed": self.seed,
               "psnr_db": self.psnr_db, "ssim": self.ssim}
        row.update(self.extra)
        return row


def _pair(a, b):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak=None):
    """Peak signal-to-noise ratio in dB, capped at 99 dB for identical images."""
    if peak is None:
        peak = getattr(a, "peak", None)
    if peak is None or not peak > 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / err))


def ssim_map(a, b, peak):
    a, b = _pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    wa = sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))
    ma = wa.mean(axis=(-2, -1))
    mb = wb.mean(axis=(-2, -1))
    da = wa - ma[..., None, None]
    db = wb - mb[..., None, None]
    va = (da * da).mean(axis=(-2, -1))
    vb = (db * db).mean(axis=(-2, -1))
    cov = (da * db).mean(axis=(-2, -1))
    num = (2 * ma * mb + c1) * (2 * cov + c2)
    den = (ma * ma + mb * mb + c1) * (va + vb + c2)
    return num / den


def ssim(a, b, peak=None):
    if peak is None:
        peak = getattr(a, "peak", None)
    if peak is None or not peak > 0:
        raise ValueError("peak must be positive")
    return float(ssim_map(a, b, peak).mean())
