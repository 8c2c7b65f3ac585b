"""Thin-lens geometry and the static (noise-free) image-formation model.

The expected intensity of a scene pixel seen through haze is a convex
combination of the clean radiance and the airlight, weighted by the
McCartney transmittance ``exp(-beta * z)``.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .imgio import Image


@dataclass(frozen=True)
class OpticsParams:
    """Thin-lens imaging geometry; distances in metres."""

    s_o: float
    s_i: float
    f: float
    pixel_pitch: float

    def __post_init__(self):
        if not (self.s_o > self.f > 0 and self.s_i > 0):
            raise ValueError("need s_o > f > 0 and s_i > 0")
        if not self.pixel_pitch > 0:
            raise ValueError("pixel_pitch must be positive")
        if abs(1 / self.s_o + 1 / self.s_i - 1 / self.f) > 1e-9 / self.f:
            raise ValueError("s_o, s_i and f violate the thin-lens equation")

    @classmethod
    def focused(cls, f, s_o, pixel_pitch):
        """Optics focused at ``s_o``; the image distance follows from the lens equation."""
        return cls(s_o=s_o, s_i=1.0 / (1.0 / f - 1.0 / s_o), f=f, pixel_pitch=pixel_pitch)


@dataclass(frozen=True)
class AtmosphereParams:
    beta: float = 0.0
    airlight: float = 180.0
    z_object: float = 10.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.airlight < 0:
            raise ValueError("airlight must be nonnegative")
        if not self.z_object > 0:
            raise ValueError("z_object must be positive")


class DropRegime(enum.Enum):
    STREAK = "streak"
    FOG = "fog"


def magnification(optics):
    """Transverse magnification magnitude ``s_i / s_o``."""
    return optics.s_i / optics.s_o


def depth_magnification(optics, z):
    """Magnification for an object at depth ``z`` imaged on the fixed sensor plane."""
    if not z > 0:
        raise ValueError("depth must be positive")
    return optics.s_i / z


def transmittance(z, beta):
    if z < 0 or beta < 0:
        raise ValueError(f"transmittance needs z >= 0 and beta >= 0, got z={z}, beta={beta}")
    return math.exp(-beta * z)


def classify_drop_regime(z, z_M):
    # z == z_M counts as fog: streaks need strictly z < z_M
    return DropRegime.STREAK if z < z_M else DropRegime.FOG


def compose_clean_expected(clean, atmosphere):
    """Haze-composited expected intensity ``mu * B + (1 - mu) * L``."""
    mu = transmittance(atmosphere.z_object, atmosphere.beta)
    data = mu * clean.data + (1.0 - mu) * atmosphere.airlight
    return Image(data, peak=max(clean.peak, atmosphere.airlight))


def synthetic_scene(height=128, width=128):
    """Deterministic 8-bit test scene: shaded background, blocks, a disk and a grating.

    Values stay inside roughly [40, 220] so the scene has structure for SSIM
    without saturating.
    """
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    u, v = xx / max(width - 1, 1), yy / max(height - 1, 1)
    img = 90.0 + 50.0 * u + 30.0 * v
    img[(v > 0.12) & (v < 0.42) & (u > 0.08) & (u < 0.38)] = 200.0
    img[(v > 0.55) & (v < 0.9) & (u > 0.1) & (u < 0.3)] = 55.0
    disk = (u - 0.68) ** 2 + (v - 0.3) ** 2 < 0.17 ** 2
    img[disk] = 170.0 + 30.0 * np.cos(12 * np.pi * u[disk])
    grating = (u > 0.5) & (u < 0.9) & (v > 0.6) & (v < 0.88)
    img[grating] = 120.0 + 60.0 * (np.sin(2 * np.pi * 6 * u[grating]) > 0)
    return Image(np.rint(np.clip(img, 0, 255)), peak=255.0)
