"""Experiment drivers: fluctuation demos, integration-time sweeps, crossing detection.

Sweeps score reconstructions in clean-image units: counts are divided by the
stack's exposure scale, then PSNR and SSIM are taken against the clean scene
with the clean image's peak.  PGM outputs are clipped copies for viewing.
"""

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import plotting
from .derain import ESTIMATORS, DerainConfig, reconstruct
from .imgio import Image, write_csv, write_pgm, write_svg_chart
from .metrics import QualityReport, psnr, ssim
from .rainsim import synth_stack

log = logging.getLogger(__name__)

DEFAULT_T_VALUES = (20.0, 50.0, 80.0)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_FRAMES = 30
VIDEO_FRAME_INTERVAL_MS = 33.0
JITTER_REFERENCE_MS = 20.0


def frame_interval(T):
    """Measurement interval for exposure ``T``: the video frame period, stretched if T is longer."""
    return max(float(T), VIDEO_FRAME_INTERVAL_MS)


def _sweep_config(config):
    if config.jitter_reference_ms is None:
        return replace(config, jitter_reference_ms=JITTER_REFERENCE_MS)
    return config


def normalize(img, exposure_scale, peak):
    """Convert counts to clean-image units.

    Values are not clipped: a saturating streak would otherwise hide exactly
    the short-exposure fluctuation being measured.  ``peak`` is kept for PSNR;
    use :func:`display` before writing a PGM.
    """
    return Image(np.asarray(getattr(img, "data", img)) / exposure_scale, peak=peak)


def display(img):
    """Copy of ``img`` clipped to its peak, ready for 8/16-bit storage."""
    return Image(np.clip(img.data, 0.0, img.peak), peak=img.peak)


def _t_label(T):
    return f"{T:g}".replace(".", "p")


# --------------------------------------------------------------------------
# fluctuation demo

def fluctuation_demo(clean, config, T_values=(20.0, 50.0), n_frames=DEFAULT_FRAMES, seeds=(0,),
                     block=None, out_dir=None):
    """Per-frame photon level and inter-frame PSNR of a small pixel block.

    ``block`` is ``(row, col, height, width)``; the default is a 16x16 block
    at the image centre.  Returns ``(rows, mean_psnr)`` where ``mean_psnr``
    maps each T to the inter-frame PSNR averaged over frames and seeds.
    """
    if not T_values:
        raise ValueError("T_values must be nonempty")
    if n_frames < 2:
        raise ValueError("the fluctuation demo needs at least 2 frames to form pairs")
    h, w = clean.shape
    if block is None:
        bh, bw = min(16, h), min(16, w)
        block = ((h - bh) // 2, (w - bw) // 2, bh, bw)
    r0, c0, bh, bw = block
    if r0 < 0 or c0 < 0 or bh <= 0 or bw <= 0 or r0 + bh > h or c0 + bw > w:
        raise ValueError(f"block {block} lies outside the {h}x{w} image")
    config = _sweep_config(config)

    rows = []
    mean_psnr = {}
    first_series = {}
    for T in T_values:
        scores = []
        for seed in seeds:
            stack, _ = synth_stack(clean, config, n_frames, T, frame_interval(T), seed,
                                   keep_drops=False)
            frames = [normalize(stack.frames[k, r0:r0 + bh, c0:c0 + bw], stack.exposure_scale,
                                clean.peak) for k in range(n_frames)]
            means = [float(f.data.mean()) for f in frames]
            for k in range(n_frames):
                score = psnr(frames[k], frames[k + 1], clean.peak) if k + 1 < n_frames else None
                if score is not None:
                    scores.append(score)
                rows.append({"T": float(T), "seed": int(seed), "frame": k,
                             "block_mean": means[k], "psnr_next_db": score})
            if seed == seeds[0]:
                first_series[f"T = {T:g} ms"] = means
        mean_psnr[float(T)] = float(np.mean(scores))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(rows, out / "fluctuation.csv")
        plotting.plot_fluctuation(first_series, out / "fluctuation.png")
    return rows, mean_psnr


# --------------------------------------------------------------------------
# integration-time sweep

def sweep_integration_time(clean, config, T_values=DEFAULT_T_VALUES, n_frames=DEFAULT_FRAMES,
                           seeds=DEFAULT_SEEDS, estimators=ESTIMATORS,
                           derain_config=DerainConfig(), out_dir=None, threads=None):
    """Synthesize, reconstruct and score every (T, seed, estimator) cell.

    Each report row also carries the PSNR/SSIM of the first rainy frame and
    the PSNR gain of the reconstruction over it.
    """
    if any(T <= 0 for T in T_values):
        raise ValueError("integration times must be positive")
    if n_frames < 3:
        raise ValueError("reconstruction needs at least 3 frames")
    config = _sweep_config(config)
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

    reports = []
    montage = {}
    for T in T_values:
        for seed in seeds:
            stack, _ = synth_stack(clean, config, n_frames, T, frame_interval(T), seed,
                                   keep_drops=False)
            scale = stack.exposure_scale
            rainy = normalize(stack.frames[0], scale, clean.peak)
            rainy_psnr = psnr(clean, rainy, clean.peak)
            rainy_ssim = ssim(clean, rainy, clean.peak)
            if out is not None:
                write_pgm(display(rainy), out / f"rainy_T{_t_label(T)}_seed{seed}.pgm")
            panels = {"rainy": rainy.data}
            for est in estimators:
                recon = normalize(reconstruct(stack, replace(derain_config, estimator=est), threads),
                                  scale, clean.peak)
                p = psnr(clean, recon, clean.peak)
                reports.append(QualityReport(
                    T=float(T), N=n_frames, estimator=est, seed=int(seed), psnr_db=p,
                    ssim=ssim(clean, recon, clean.peak),
                    extra={"rainy_psnr_db": rainy_psnr, "rainy_ssim": rainy_ssim,
                           "psnr_gain_db": p - rainy_psnr}))
                panels[est] = recon.data
                if out is not None:
                    write_pgm(display(recon), out / f"recon_T{_t_label(T)}_{est}_seed{seed}.pgm")
            if seed == seeds[0]:
                montage[f"T = {T:g} ms"] = panels
            log.info("T=%g seed=%d done", T, seed)

    if out is not None:
        write_report(reports, out, clean.peak, montage)
    return reports


def seed_averaged(reports, field="psnr_db", include_rainy=True):
    """``{estimator: [(T, mean value over seeds), ...]}`` sorted by T.

    ``field`` names a report attribute or a key of its ``extra`` dict.
    """
    acc = {}
    rainy_field = {"psnr_db": "rainy_psnr_db", "ssim": "rainy_ssim"}.get(field)
    for r in reports:
        value = r.extra[field] if field in r.extra else getattr(r, field)
        acc.setdefault(r.estimator, {}).setdefault(r.T, []).append(value)
        if include_rainy and rainy_field:
            # one rainy value per (T, seed), repeated across estimators
            acc.setdefault("rainy", {}).setdefault(r.T, {})[r.seed] = r.extra[rainy_field]
    curves = {}
    for est, by_t in acc.items():
        pts = []
        for T in sorted(by_t):
            vals = by_t[T]
            vals = list(vals.values()) if isinstance(vals, dict) else vals
            pts.append((T, float(np.mean(vals))))
        curves[est] = pts
    return curves


def write_report(reports, out_dir, peak=255.0, montage=None):
    out = Path(out_dir)
    write_csv([r.as_row() for r in reports], out / "report.csv")
    psnr_curves = seed_averaged(reports, "psnr_db")
    ssim_curves = seed_averaged(reports, "ssim")
    write_svg_chart(list(psnr_curves.items()), "integration time T (ms)", "PSNR (dB)",
                    out / "curves_psnr.svg", title="PSNR vs integration time")
    write_svg_chart(list(ssim_curves.items()), "integration time T (ms)", "SSIM",
                    out / "curves_ssim.svg", title="SSIM vs integration time")
    crossing = None
    if "pnfc" in psnr_curves and "median" in psnr_curves:
        try:
            t_cross = inflection_detect(reports, "pnfc", "median")
        except ValueError:
            t_cross = None
        if t_cross is not None:
            xs, ys = zip(*psnr_curves["pnfc"])
            crossing = (t_cross, float(np.interp(t_cross, xs, ys)))
    plotting.plot_quality_curves(psnr_curves, ssim_curves, out / "curves.png", crossing)
    if montage:
        plotting.plot_montage(montage, out / "montage.png", peak)


def inflection_detect(reports, estimator_a, estimator_b):
    """Smallest T where the seed-averaged PSNR curves of ``a`` and ``b`` cross.

    Curves are linearly interpolated between sampled T values.  Returns
    ``None`` when ``a - b`` never changes sign.  ``"rainy"`` names the
    single-rainy-frame curve.
    """
    curves = seed_averaged(reports, "psnr_db")
    if estimator_a not in curves or estimator_b not in curves:
        raise ValueError(f"estimators {estimator_a!r} and {estimator_b!r} must both be present")
    a = dict(curves[estimator_a])
    b = dict(curves[estimator_b])
    return crossing_point(sorted(set(a) & set(b)), a, b)


def crossing_point(ts, a, b):
    """First sign change of ``a[t] - b[t]`` over sorted ``ts``, linearly interpolated."""
    if len(ts) < 2:
        raise ValueError("need at least 2 common T values to detect a crossing")
    d = [a[t] - b[t] for t in ts]
    last_sign, last_i = 0, None
    for i, v in enumerate(d):
        s = (v > 0) - (v < 0)
        if s == 0:
            continue
        if last_sign and s != last_sign:
            if last_i == i - 1:
                t0, t1 = ts[i - 1], ts[i]
                return t0 + (t1 - t0) * d[i - 1] / (d[i - 1] - d[i])
            # the curves touched at an intermediate sample
            return ts[last_i + 1]
        last_sign, last_i = s, i
    return None
