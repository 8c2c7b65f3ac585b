"""Per-pixel second-order statistics of the photon layers.

Given a stack together with its ground-truth layer trace, this module
splits the lag-1 photon-number product of each pixel into scene, fog,
streak and cross contributions, attaches block-bootstrap standard errors,
and checks that the fog and streak fluctuation correlations vanish while
the scene correlation stays stable.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .rainsim import fog_mu_series

N_BOOTSTRAP = 200
SIGMA = 3.0
LAYERS = ("S", "F", "D")
CROSS_PAIRS = (("S", "F"), ("S", "D"), ("F", "D"))


def lag1_product(series):
    """Mean product of consecutive samples, ``sum(x[k] * x[k+1]) / (N - 1)``."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"lag1_product needs a series of length >= 2, got {x.shape}")
    return float(np.dot(x[:-1], x[1:]) / (x.size - 1))


def lag1_fluctuation_correlation(series):
    """Lag-1 autocovariance about the full-series mean, normalized by ``N - 1``."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 3:
        raise ValueError(f"lag1_fluctuation_correlation needs length >= 3, got {x.shape}")
    d = x - x.mean()
    return float(np.dot(d[:-1], d[1:]) / (x.size - 1))


def block_length(n_pairs):
    return max(1, int(round(n_pairs ** (1.0 / 3.0))))


def _block_means(pair_series, b):
    """Means of non-overlapping length-``b`` blocks along axis 0 (remainder dropped)."""
    nb = pair_series.shape[0] // b
    trimmed = pair_series[:nb * b]
    return trimmed.reshape((nb, b) + pair_series.shape[1:]).mean(axis=1)


def _bootstrap_weights(seed, key, n_blocks, n_boot):
    """Resampling counts per block, shape ``(n_boot, n_blocks)``."""
    g = rngmod.substream(seed, rngmod.BOOTSTRAP, key)
    idx = g.integers(0, n_blocks, size=(n_boot, n_blocks))
    idx += np.arange(n_boot)[:, None] * n_blocks
    return np.bincount(idx.ravel(), minlength=n_boot * n_blocks).reshape(n_boot, n_blocks)


def _bootstrap_replicates(block_means, seed, keys, n_boot):
    """Bootstrap replicate means for each series column.

    ``block_means`` has shape ``(n_blocks, P, Q)``; each of the ``P`` columns
    is resampled with its own substream ``keys[p]``.  Returns ``(P, n_boot, Q)``.
    """
    nb, P, Q = block_means.shape
    out = np.empty((P, n_boot, Q))
    for p in range(P):
        w = _bootstrap_weights(seed, keys[p], nb, n_boot)
        out[p] = w @ block_means[:, p, :] / nb
    return out


def _pair_quantities(x, y=None):
    """Pair-level series ``(x[k] y[k+1], (x[k] + x[k+1]) / 2)`` for series along axis 0."""
    y = x if y is None else y
    return x[:-1] * y[1:], 0.5 * (x[:-1] + x[1:])


@dataclass
class Estimate:
    value: float
    stderr: float

    def within(self, target=0.0, sigma=SIGMA, atol=0.0):
        return abs(self.value - target) <= sigma * self.stderr + atol


@dataclass
class CorrelationReport:
    """Lag-1 product of each photon layer and of the omitted cross pairs at one pixel.

    ``g_total`` is the lag-1 product of the pre-noise frame and equals
    ``ss + ff + dd + sum(cross_terms)`` up to rounding.  ``g_measured`` is the
    same statistic on the photon counts.
    """

    pixel: tuple
    ss: Estimate
    ff: Estimate
    dd: Estimate
    cross_terms: dict
    g_total: float
    g_measured: Estimate

    def component_sum(self):
        return (self.ss.value + self.ff.value + self.dd.value
                + sum(e.value for e in self.cross_terms.values()))


def _check_aligned(trace, stack):
    if trace.S.shape != stack.frames.shape:
        raise ValueError(f"trace shape {trace.S.shape} does not match stack {stack.frames.shape}")


def decompose_correlations(trace, stack, pixel, n_boot=N_BOOTSTRAP):
    _check_aligned(trace, stack)
    r, c = pixel
    n, h, w = stack.frames.shape
    if not (0 <= r < h and 0 <= c < w):
        raise ValueError(f"pixel {pixel} outside {h}x{w} image")
    series = {name: getattr(trace, name)[:, r, c] for name in LAYERS}
    measured = stack.frames[:, r, c]

    products = [series[name][:-1] * series[name][1:] for name in LAYERS]
    for a, b in CROSS_PAIRS:
        xa, xb = series[a], series[b]
        products.append(xa[:-1] * xb[1:] + xb[:-1] * xa[1:])
    products.append(measured[:-1] * measured[1:])
    q = np.stack(products, axis=1)[:, None, :]
    b = block_length(n - 1)
    reps = _bootstrap_replicates(_block_means(q, b), stack.seed, [r * w + c], n_boot)[0]
    se = reps.std(axis=0, ddof=1) if n_boot > 1 else np.zeros(q.shape[-1])

    values = [lag1_product(series[name]) for name in LAYERS]
    for a, b_ in CROSS_PAIRS:
        xa, xb = series[a], series[b_]
        values.append(float((np.dot(xa[:-1], xb[1:]) + np.dot(xb[:-1], xa[1:])) / (n - 1)))
    values.append(lag1_product(measured))
    est = [Estimate(v, float(s)) for v, s in zip(values, se)]
    return CorrelationReport(
        pixel=(r, c), ss=est[0], ff=est[1], dd=est[2],
        cross_terms={f"{a}{b_}".lower(): est[3 + i] for i, (a, b_) in enumerate(CROSS_PAIRS)},
        g_total=lag1_product(trace.expected[:, r, c]),
        g_measured=est[6],
    )


# --------------------------------------------------------------------------
# vanishing-correlation verification

@dataclass(frozen=True)
class CoherenceParams:
    coherence_time_ms: float
    measurement_interval_ms: float

    def __post_init__(self):
        if not self.measurement_interval_ms > 0:
            raise ValueError("measurement_interval_ms must be positive")
        if self.coherence_time_ms < 0:
            raise ValueError("coherence_time_ms must be nonnegative")

    @property
    def correlated(self):
        """True when consecutive measurements fall inside one coherence time."""
        return self.coherence_time_ms > self.measurement_interval_ms


@dataclass
class SeriesTests:
    """Per-column test statistics over a set of series (pixels or blocks)."""

    ff: np.ndarray
    ff_se: np.ndarray
    dd: np.ndarray
    dd_se: np.ndarray
    ss_excess: np.ndarray
    ss_meansq: np.ndarray
    ss_se: np.ndarray
    ff_pass: np.ndarray
    dd_pass: np.ndarray
    ss_pass: np.ndarray

    @property
    def passed(self):
        return self.ff_pass & self.dd_pass & self.ss_pass


@dataclass
class VanishingVerdict:
    pixels: SeriesTests
    blocks: SeriesTests
    block_size: int
    grid: tuple
    correlated_regime: bool
    min_pass_rate: float
    extra: dict = field(default_factory=dict)

    @property
    def pixel_pass_rate(self):
        return float(self.pixels.passed.mean())

    @property
    def block_pass_rate(self):
        return float(self.blocks.passed.mean())

    @property
    def passed(self):
        return self.pixel_pass_rate >= self.min_pass_rate

    def rows(self):
        """Per-block rows followed by one aggregate row."""
        rows = []
        gw = self.grid[1]
        t = self.blocks
        for i in range(t.ff.size):
            rows.append({
                "scope": "block", "block_row": i // gw, "block_col": i % gw,
                "ff_autocov": t.ff[i], "ff_stderr": t.ff_se[i],
                "dd_autocov": t.dd[i], "dd_stderr": t.dd_se[i],
                "ss_excess": t.ss_excess[i], "ss_meansq": t.ss_meansq[i], "ss_stderr": t.ss_se[i],
                "pass_rate": float(t.passed[i]), "pass": bool(t.passed[i]),
            })
        p = self.pixels
        rows.append({
            "scope": "aggregate", "block_row": -1, "block_col": -1,
            "ff_autocov": float(p.ff.mean()), "ff_stderr": float(p.ff_se.mean()),
            "dd_autocov": float(p.dd.mean()), "dd_stderr": float(p.dd_se.mean()),
            "ss_excess": float(p.ss_excess.mean()), "ss_meansq": float(p.ss_meansq.mean()),
            "ss_stderr": float(p.ss_se.mean()),
            "pass_rate": self.pixel_pass_rate, "pass": self.passed,
        })
        return rows


def _series_tests(S, F, D, seed, key_offset, n_boot, sigma):
    """Vanishing tests on column series of shape ``(N, P)``."""
    n = S.shape[0]
    b = block_length(n - 1)
    cols = []
    for x in (F, D, S):
        q, m = _pair_quantities(x)
        cols.append(_block_means(q, b))
        cols.append(_block_means(m, b))
        del q, m
    bm = np.stack(cols, axis=-1)
    P = S.shape[1]
    reps = _bootstrap_replicates(bm, seed, range(key_offset, key_offset + P), n_boot)
    # replicate statistic: lag-1 product minus squared mean, one per layer
    stat = reps[:, :, 0::2] - reps[:, :, 1::2] ** 2
    se = stat.std(axis=1, ddof=1)
    # the bootstrap collapses when a handful of coincident streak hits drive the
    # product; never go below the independence (Bartlett) standard error
    null_se = np.stack([x.var(axis=0, ddof=1) for x in (F, D, S)], axis=1) / math.sqrt(n - 1)
    se = np.maximum(se, null_se)

    def autocov(x):
        d = x - x.mean(axis=0)
        return (d[:-1] * d[1:]).sum(axis=0) / (n - 1)

    ff = autocov(F)
    dd = autocov(D)
    # mean over pair members, so lag1 - meansq carries no O(1/N) end effect
    s_mean = 0.5 * (S[:-1] + S[1:]).mean(axis=0)
    meansq = s_mean ** 2
    excess = (S[:-1] * S[1:]).sum(axis=0) / (n - 1) - meansq

    def atol(x):
        # rounding floor for exactly-constant series
        return 1e-9 * (x.mean(axis=0) ** 2 + 1.0)

    return SeriesTests(
        ff=ff, ff_se=se[:, 0], dd=dd, dd_se=se[:, 1],
        ss_excess=excess, ss_meansq=meansq, ss_se=se[:, 2],
        ff_pass=np.abs(ff) <= sigma * se[:, 0] + atol(F),
        dd_pass=np.abs(dd) <= sigma * se[:, 1] + atol(D),
        ss_pass=np.abs(excess) <= sigma * se[:, 2] + atol(S),
    )


def _block_average(x, size):
    n, h, w = x.shape
    gh, gw = h // size, w // size
    if gh == 0 or gw == 0:
        raise ValueError(f"block size {size} larger than image {h}x{w}")
    x = x[:, :gh * size, :gw * size]
    return x.reshape(n, gh, size, gw, size).mean(axis=(2, 4)).reshape(n, gh * gw), (gh, gw)


def verify_vanishing(trace, stack, coherence=None, block_size=8, n_boot=N_BOOTSTRAP,
                     sigma=SIGMA, min_pass_rate=0.99):
    """Check that fog and streak photons lose their lag-1 fluctuation correlation.

    Per pixel (and per ``block_size`` block of averaged series): the fog and
    streak lag-1 autocovariances must lie within ``sigma`` bootstrap standard
    errors of zero, and the scene lag-1 product within ``sigma`` of its
    squared mean.  The verdict passes when at least ``min_pass_rate`` of the
    pixels pass.  ``coherence`` only labels the regime; a correlated regime is
    still evaluated (and is expected to fail).
    """
    _check_aligned(trace, stack)
    n, h, w = trace.S.shape
    if n < 3:
        raise ValueError("verification needs at least 3 frames")
    if coherence is None:
        coherence = CoherenceParams(stack.coherence_time_ms or 0.0, stack.measurement_interval_ms)
    P = h * w
    pix = _series_tests(trace.S.reshape(n, P), trace.F.reshape(n, P), trace.D.reshape(n, P),
                        stack.seed, 0, n_boot, sigma)
    bS, grid = _block_average(trace.S, block_size)
    bF, _ = _block_average(trace.F, block_size)
    bD, _ = _block_average(trace.D, block_size)
    blk = _series_tests(bS, bF, bD, stack.seed, P, n_boot, sigma)
    return VanishingVerdict(pixels=pix, blocks=blk, block_size=block_size, grid=grid,
                            correlated_regime=coherence.correlated, min_pass_rate=min_pass_rate)


# --------------------------------------------------------------------------
# transmittance fluctuation versus integration time

def mu_product_scan(T_values, config, seed=0, n_samples=10_000, reference_ms=20.0):
    """Lag-1 fog-transmittance fluctuation product for each integration time.

    The fog jitter follows ``fog_mu_jitter * sqrt(reference / T)`` (the
    config's own reference wins when set).  The reported product is the mean
    of ``|mu_k - mean| * |mu_{k+1} - mean|``; for independent frames it is
    proportional to the variance, hence to ``1/T``.  Returns ``(rows, slope)``
    where ``slope`` is the least-squares log-log slope (``None`` for a single T).
    """
    T_values = [float(t) for t in T_values]
    if not T_values or any(t <= 0 for t in T_values):
        raise ValueError("T_values must be a nonempty list of positive times")
    ref = config.jitter_reference_ms or reference_ms
    rows = []
    for T in T_values:
        jitter = config.rain.fog_mu_jitter * math.sqrt(ref / T)
        mu = fog_mu_series(config.rain, n_samples, seed, jitter)
        d = mu - mu.mean()
        rows.append({
            "T_ms": T,
            "fog_mu_jitter": jitter,
            "mu_mean": float(mu.mean()),
            "mu_variance": float(mu.var(ddof=1)),
            "mu_lag1_autocov": lag1_fluctuation_correlation(mu),
            "mu_fluct_product": float(np.mean(np.abs(d[:-1]) * np.abs(d[1:]))),
        })
    slope = None
    if len(rows) > 1:
        x = np.log([r["T_ms"] for r in rows])
        y = np.log([r["mu_fluct_product"] for r in rows])
        slope = float(np.polyfit(x, y, 1)[0])
    return rows, slope
