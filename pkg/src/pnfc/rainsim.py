"""Stochastic rain synthesis and photon-count sampling.

A frame's expected photon count splits into three layers:

* ``S``: scene photons that reach the sensor unscattered, ``mu_k * B``
* ``F``: rain-fog photons, ``(1 - mu_k) * L``
* ``D``: rain-streak photons from near drops

all scaled by the exposure (photons per unit radiance per ms, times T).
``mu_k`` fluctuates frame to frame; streak drops are resampled every frame.
The measured frame is a Poisson draw around ``S + F + D``.

Every random quantity is drawn from a substream keyed by
``(seed, frame, layer[, drop])``, so any layer of any frame can be
regenerated in isolation and frame order does not matter.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import rng as rngmod
from .imgio import FrameStack, Image
from .scene import AtmosphereParams, OpticsParams, depth_magnification, transmittance

MAX_CROSSING_TIME_MS = 1.18


@dataclass(frozen=True)
class RainParams:
    drops_per_frame: float = 8.0
    fall_speed: float = 6.0
    drop_crossing_time_ms: float = 1.0
    streak_radiance: float = 5000.0
    fog_mu_mean: float = 0.9
    fog_mu_jitter: float = 0.05
    z_M: float = 6.0
    z_near: float = 2.0

    def __post_init__(self):
        if self.drops_per_frame < 0:
            raise ValueError("drops_per_frame must be nonnegative")
        if not self.fall_speed > 0:
            raise ValueError("fall_speed must be positive")
        if not 0 < self.drop_crossing_time_ms <= MAX_CROSSING_TIME_MS:
            raise ValueError(f"drop_crossing_time_ms must lie in (0, {MAX_CROSSING_TIME_MS}]")
        if self.streak_radiance < 0:
            raise ValueError("streak_radiance must be nonnegative")
        if not 0 < self.fog_mu_mean <= 1:
            raise ValueError("fog_mu_mean must lie in (0, 1]")
        if self.fog_mu_jitter < 0:
            raise ValueError("fog_mu_jitter must be nonnegative")
        if not 0 < self.z_near < self.z_M:
            raise ValueError("need 0 < z_near < z_M")


def default_optics():
    return OpticsParams.focused(f=0.05, s_o=10.0, pixel_pitch=1e-4)


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to synthesize a stack besides the clean image and timing.

    ``jitter_reference_ms``, when set, rescales the fog jitter as
    ``fog_mu_jitter * sqrt(jitter_reference_ms / T)``.
    ``coherence_time_ms`` > 0 makes the fog process an AR(1) chain with
    lag-1 correlation ``exp(-dT / coherence_time_ms)``.
    """

    optics: OpticsParams = field(default_factory=default_optics)
    atmosphere: AtmosphereParams = field(default_factory=AtmosphereParams)
    rain: RainParams = field(default_factory=RainParams)
    photons_per_ms: float = 1.0
    photon_noise: bool = True
    coherence_time_ms: float = 0.0
    jitter_reference_ms: Optional[float] = None

    def __post_init__(self):
        if not self.photons_per_ms > 0:
            raise ValueError("photons_per_ms must be positive")
        if self.coherence_time_ms < 0:
            raise ValueError("coherence_time_ms must be nonnegative")
        if self.jitter_reference_ms is not None and not self.jitter_reference_ms > 0:
            raise ValueError("jitter_reference_ms must be positive")

    def fog_jitter(self, T):
        if self.jitter_reference_ms is None:
            return self.rain.fog_mu_jitter
        return self.rain.fog_mu_jitter * math.sqrt(self.jitter_reference_ms / T)

    def fog_correlation(self, dT):
        if self.coherence_time_ms <= 0:
            return 0.0
        return math.exp(-dT / self.coherence_time_ms)

    def without_rain(self):
        """Same geometry with streaks, fog fluctuation and fog attenuation switched off."""
        return replace(self, rain=replace(self.rain, drops_per_frame=0.0, fog_mu_mean=1.0,
                                          fog_mu_jitter=0.0))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        kwargs = {}
        sections = {"optics": OpticsParams, "atmosphere": AtmosphereParams, "rain": RainParams}
        for name, typ in sections.items():
            if name in doc:
                sub = dict(doc.pop(name))
                if typ is OpticsParams and "s_i" not in sub:
                    kwargs[name] = OpticsParams.focused(sub["f"], sub["s_o"], sub["pixel_pitch"])
                else:
                    _reject_unknown(sub, typ, name)
                    kwargs[name] = typ(**sub)
        _reject_unknown(doc, cls, "config", skip=set(sections))
        kwargs.update(doc)
        return cls(**kwargs)


def _reject_unknown(doc, typ, where, skip=()):
    known = {f.name for f in fields(typ)} - set(skip)
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown {where} field(s): {', '.join(sorted(unknown))}")


def load_config(path):
    with open(path) as fh:
        return SimConfig.from_dict(json.load(fh))


@dataclass(frozen=True)
class Drop:
    """A streak-regime drop: top row of its streak, column and depth (m)."""

    row: int
    col: int
    depth: float


@dataclass
class ComponentTrace:
    """Per-pixel, per-frame expected photon counts of each layer.

    ``expected`` is the pre-noise frame ``S + F + D``.
    """

    S: np.ndarray
    F: np.ndarray
    D: np.ndarray
    expected: np.ndarray
    mu: np.ndarray
    drops: Optional[list] = None

    @property
    def n_frames(self):
        return self.S.shape[0]

    def save(self, out_dir):
        from pathlib import Path

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in ("S", "F", "D", "mu"):
            np.save(out_dir / f"{name}.npy", getattr(self, name))
        if self.drops is not None:
            doc = [[[d.row, d.col, d.depth] for d in frame] for frame in self.drops]
            (out_dir / "drops.json").write_text(json.dumps(doc) + "\n")

    @classmethod
    def load(cls, in_dir):
        from pathlib import Path

        in_dir = Path(in_dir)
        S, F, D = (np.load(in_dir / f"{n}.npy") for n in ("S", "F", "D"))
        mu = np.load(in_dir / "mu.npy")
        drops = None
        if (in_dir / "drops.json").exists():
            raw = json.loads((in_dir / "drops.json").read_text())
            drops = [[Drop(int(r), int(c), float(z)) for r, c, z in frame] for frame in raw]
        return cls(S=S, F=F, D=D, expected=S + F + D, mu=mu, drops=drops)


def streak_length(optics, rain, depth, T):
    """Rasterized streak length in pixels for a drop at ``depth`` during exposure ``T`` (ms)."""
    travel = depth_magnification(optics, depth) * rain.fall_speed * (T / 1000.0) / optics.pixel_pitch
    # round away float noise so exact multiples (e.g. doubled T) stay exact
    return max(1, math.ceil(round(travel, 9)))


def streak_intensity(rain, T):
    """Per-pixel streak radiance: the drop covers a pixel for tau out of T."""
    return rain.streak_radiance * rain.drop_crossing_time_ms / T


def sample_drops(rain, optics, shape, T, seed, frame):
    """Draw the streak-regime drops of one frame.

    The drop count is Poisson(drops_per_frame).  Each drop gets a depth
    uniform in ``[z_near, z_M)``, a uniform column, and a top row chosen so
    every pixel row is equally likely to be covered.
    """
    height, width = shape
    n = int(rngmod.substream(seed, frame, rngmod.STREAK, 0).poisson(rain.drops_per_frame))
    drops = []
    for i in range(n):
        g = rngmod.substream(seed, frame, rngmod.STREAK, i + 1)
        depth = float(g.uniform(rain.z_near, rain.z_M))
        length = streak_length(optics, rain, depth, T)
        col = int(g.integers(0, width))
        row = int(g.integers(-(length - 1), height))
        drops.append(Drop(row, col, depth))
    return drops


def streak_layer(drops, optics, rain, T, shape):
    layer = np.zeros(shape, dtype=np.float64)
    level = streak_intensity(rain, T)
    for d in drops:
        length = streak_length(optics, rain, d.depth, T)
        top = max(d.row, 0)
        bottom = min(d.row + length, shape[0])
        if bottom > top and 0 <= d.col < shape[1]:
            layer[top:bottom, d.col] += level
    return layer


def render_streak_layer(drops, optics, rain, T, shape):
    """The rain-streak term as an :class:`Image` in radiance units.

    Each drop paints a vertical segment whose length grows with T and whose
    per-pixel intensity is ``streak_radiance * tau / T``.
    """
    if not T > 0:
        raise ValueError("integration time must be positive")
    layer = streak_layer(drops, optics, rain, T, shape)
    return Image(layer, peak=max(1.0, float(layer.max())))


def sample_fog_mu(rain, rng, jitter=None):
    """One frame's fog transmittance, Normal(mean, mean * jitter) clamped to [0, 1]."""
    jitter = rain.fog_mu_jitter if jitter is None else jitter
    z = rng.standard_normal()
    return float(min(1.0, max(0.0, rain.fog_mu_mean + rain.fog_mu_mean * jitter * z)))


def fog_mu_series(rain, n_frames, seed, jitter=None, correlation=0.0):
    """Per-frame fog transmittance.

    With ``correlation == 0`` frame ``k`` is exactly ``sample_fog_mu`` on the
    ``(seed, k, FOG)`` substream.  Otherwise the standardized innovations are
    chained as AR(1) with the given lag-1 correlation.
    """
    jitter = rain.fog_mu_jitter if jitter is None else jitter
    eps = np.array([rngmod.substream(seed, k, rngmod.FOG).standard_normal()
                    for k in range(n_frames)])
    if correlation:
        z = np.empty_like(eps)
        z[0] = eps[0]
        c = math.sqrt(1.0 - correlation ** 2)
        for k in range(1, n_frames):
            z[k] = correlation * z[k - 1] + c * eps[k]
        eps = z
    return np.clip(rain.fog_mu_mean + rain.fog_mu_mean * jitter * eps, 0.0, 1.0)


def sample_photons(expected, rng):
    """Independent Poisson counts with the given per-pixel means."""
    counts = rng.poisson(expected.data).astype(np.float64)
    peak = max(expected.peak, float(counts.max()) if counts.size else 0.0)
    return Image(counts, peak=peak)


def synth_stack(clean, config, n_frames=30, T=20.0, dT=None, seed=0, threads=1,
                keep_drops=True):
    """Synthesize a rainy photon-count stack and its ground-truth layer trace.

    Returns ``(FrameStack, ComponentTrace)``.  ``dT`` defaults to ``T``.
    The result depends only on the arguments, not on ``threads``.
    """
    dT = T if dT is None else dT
    if n_frames < 2:
        raise ValueError(f"n_frames must be >= 2, got {n_frames}")
    if not T > 0:
        raise ValueError("integration time T must be positive")
    if dT < T:
        raise ValueError(f"measurement interval dT={dT} must be >= T={T}")

    shape = clean.shape
    scale = config.photons_per_ms * T
    mu0 = transmittance(config.atmosphere.z_object, config.atmosphere.beta)
    mu = mu0 * fog_mu_series(config.rain, n_frames, seed, config.fog_jitter(T),
                             config.fog_correlation(dT))
    scene = clean.data * scale
    air = config.atmosphere.airlight * scale

    S = np.empty((n_frames,) + shape)
    F = np.empty_like(S)
    D = np.empty_like(S)
    expected = np.empty_like(S)
    frames = np.empty_like(S)
    drops = [None] * n_frames

    def make_frame(k):
        S[k] = mu[k] * scene
        F[k] = (1.0 - mu[k]) * air
        frame_drops = sample_drops(config.rain, config.optics, shape, T, seed, k)
        D[k] = streak_layer(frame_drops, config.optics, config.rain, T, shape) * scale
        expected[k] = S[k] + F[k] + D[k]
        if config.photon_noise:
            frames[k] = rngmod.substream(seed, k, rngmod.PHOTON).poisson(expected[k])
        else:
            frames[k] = expected[k]
        drops[k] = frame_drops

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(make_frame, range(n_frames)))
    else:
        for k in range(n_frames):
            make_frame(k)

    stack = FrameStack(frames, integration_time_ms=T, measurement_interval_ms=dT, seed=seed,
                       exposure_scale=scale,
                       coherence_time_ms=config.coherence_time_ms or None)
    trace = ComponentTrace(S=S, F=F, D=D, expected=expected, mu=mu,
                           drops=drops if keep_drops else None)
    return stack, trace
