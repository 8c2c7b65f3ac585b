"""Reconstruction from a frame stack: the PNFC estimator and temporal baselines.

PNFC keeps the part of each pixel's lag-1 photon-number product that is
stable from one measurement to the next and subtracts the excess
fluctuation contributed by rain:

    value = sqrt(max(0, lag1 - kappa * max(0, variance - shot)))

where ``shot`` is the Poisson variance (the temporal mean) when shot-noise
compensation is on.  Scene photons have a stable correlation and survive;
streak and fog photons fluctuate and are suppressed.
"""

import json
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass

import numba
import numpy as np

from ._kernels import temporal_stats
from .imgio import Image

ESTIMATORS = ("pnfc", "mean", "median")


@dataclass
class CorrelationMap:
    """Per-pixel temporal statistics of a stack.

    ``lag1 == autocov1 + mean**2 + end_correction`` up to rounding, with
    ``end_correction = mean * (2 * mean - x_first - x_last) / (N - 1)``.
    """

    mean: np.ndarray
    lag1: np.ndarray
    autocov1: np.ndarray
    variance: np.ndarray
    end_correction: np.ndarray
    n_frames: int


@dataclass(frozen=True)
class DerainConfig:
    estimator: str = "pnfc"
    kappa: float = 1.0
    shot_noise_compensation: bool = True
    gain_correction: bool = False

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")

    def to_json(self):
        return json.dumps(asdict(self), indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def available_threads():
    return numba.config.NUMBA_NUM_THREADS


def resolve_threads(threads=None):
    """Thread count from the argument, else ``PNFC_THREADS``, else 1."""
    if threads is None:
        threads = int(os.environ.get("PNFC_THREADS", "1"))
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    return threads


@contextmanager
def thread_limit(threads=None):
    """Run numba kernels on ``threads`` workers, capped at numba's pool size."""
    previous = numba.get_num_threads()
    numba.set_num_threads(min(resolve_threads(threads), available_threads()))
    try:
        yield
    finally:
        numba.set_num_threads(previous)


def _frames(stack):
    return np.ascontiguousarray(stack.frames, dtype=np.float64)


def correlation_map(stack, threads=None):
    frames = _frames(stack)
    n = frames.shape[0]
    if n < 3:
        raise ValueError(f"correlation_map needs N >= 3 frames, got N = {n}")
    with thread_limit(threads):
        mean, lag1, autocov, var = temporal_stats(frames)
    end = mean * (2 * mean - frames[0] - frames[-1]) / (n - 1)
    return CorrelationMap(mean, lag1, autocov, var, end, n)


def pnfc_from_map(cmap, config=DerainConfig()):
    shot = cmap.mean if config.shot_noise_compensation else 0.0
    excess = np.maximum(0.0, cmap.variance - shot)
    return np.sqrt(np.maximum(0.0, cmap.lag1 - config.kappa * excess))


def pnfc_reconstruct(stack, config=DerainConfig(), threads=None):
    n = len(stack)
    if n < 3:
        raise ValueError(f"PNFC reconstruction needs N >= 3 frames, got N = {n}")
    cmap = correlation_map(stack, threads)
    out = pnfc_from_map(cmap, config)
    if config.gain_correction:
        out_mean = out.mean()
        if out_mean > 0:
            out = out * (cmap.mean.mean() / out_mean)
    return Image(np.clip(out, 0.0, stack.peak), peak=stack.peak)


def baseline_mean(stack):
    if len(stack) < 1:
        raise ValueError("empty stack")
    return Image(np.clip(stack.frames.mean(axis=0), 0.0, stack.peak), peak=stack.peak)


def baseline_median(stack):
    """Per-pixel lower median."""
    n = len(stack)
    if n < 1:
        raise ValueError("empty stack")
    k = (n - 1) // 2
    med = np.partition(stack.frames, k, axis=0)[k]
    return Image(np.clip(med, 0.0, stack.peak), peak=stack.peak)


def reconstruct(stack, config=DerainConfig(), threads=None):
    if config.estimator == "pnfc":
        return pnfc_reconstruct(stack, config, threads)
    if config.estimator == "mean":
        return baseline_mean(stack)
    return baseline_median(stack)
