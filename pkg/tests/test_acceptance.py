"""Acceptance criteria, one test each.

Every test records a pass/fail line (shown with ``-s`` and again in the
terminal summary) before asserting.
"""

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import psnr_direct, ssim_direct
from pnfc.derain import DerainConfig, correlation_map, pnfc_reconstruct
from pnfc.harness import fluctuation_demo, normalize, seed_averaged, sweep_integration_time
from pnfc.imgio import FrameStack, Image, decode_pgm, encode_pgm, write_pgm
from pnfc.metrics import psnr, ssim
from pnfc.photonstats import verify_vanishing
from pnfc.rainsim import AtmosphereParams, RainParams, SimConfig, synth_stack
from pnfc.scene import synthetic_scene

SEEDS = (0, 1, 2, 3, 4)
T_VALUES = (20.0, 50.0, 80.0)


def _warm_kernels():
    correlation_map(FrameStack(np.ones((3, 2, 2)), 1.0, 1.0, seed=0))


@pytest.fixture(scope="module")
def sweep():
    _warm_kernels()
    start = time.perf_counter()
    reports = sweep_integration_time(synthetic_scene(), SimConfig(), T_VALUES, 30, SEEDS)
    return reports, time.perf_counter() - start


def _random_config(g):
    rain = RainParams(
        drops_per_frame=float(g.uniform(0, 40)),
        fall_speed=float(g.uniform(1, 10)),
        drop_crossing_time_ms=float(g.uniform(0.05, 1.18)),
        streak_radiance=float(g.uniform(0, 1e4)),
        fog_mu_mean=float(g.uniform(0.3, 1.0)),
        fog_mu_jitter=float(g.uniform(0, 0.5)),
        z_M=float(g.uniform(3, 10)),
        z_near=float(g.uniform(0.5, 2.5)),
    )
    atmosphere = AtmosphereParams(beta=float(g.uniform(0, 0.3)), airlight=float(g.uniform(0, 255)),
                                  z_object=float(g.uniform(1, 50)))
    return SimConfig(atmosphere=atmosphere, rain=rain,
                     photons_per_ms=float(g.uniform(0.1, 5)),
                     photon_noise=bool(g.integers(0, 2)),
                     coherence_time_ms=float(g.choice([0.0, g.uniform(1, 300)])))


def test_criterion_1_layer_identity(criterion):
    g = np.random.default_rng(20261015)
    start = time.perf_counter()
    bad = []
    for i in range(100):
        config = _random_config(g)
        h, w = (int(v) for v in g.integers(8, 41, size=2))
        clean = Image(g.integers(0, 256, size=(h, w)).astype(float), 255)
        T = float(g.uniform(5, 100))
        dT = T + float(g.uniform(0, 50))
        n = int(g.integers(2, 7))
        stack, trace = synth_stack(clean, config, n, T, dT, seed=int(g.integers(0, 2**32)))
        ok = (trace.S + trace.F + trace.D).tobytes() == trace.expected.tobytes()
        if not config.photon_noise:
            ok &= stack.frames.tobytes() == trace.expected.tobytes()
        else:
            ok &= bool((stack.frames >= 0).all() and (stack.frames == np.rint(stack.frames)).all())
        if not ok:
            bad.append(i)
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 10
    criterion(1, "layer identity", ok,
              f"{100 - len(bad)}/100 configs bit-exact, {elapsed:.2f} s (limit 10 s)")
    assert not bad
    assert elapsed < 10


def test_criterion_2_vanishing_correlations(criterion):
    start = time.perf_counter()
    stack, trace = synth_stack(synthetic_scene(64, 64), SimConfig(), 10_000, 20.0, 33.0, seed=0,
                               keep_drops=False)
    verdict = verify_vanishing(trace, stack)
    elapsed = time.perf_counter() - start
    p = verdict.pixels
    detail = (f"pixel pass rate {verdict.pixel_pass_rate:.4f} (fog {p.ff_pass.mean():.4f}, "
              f"streak {p.dd_pass.mean():.4f}, scene {p.ss_pass.mean():.4f}), "
              f"{elapsed:.1f} s (limit 60 s)")
    criterion(2, "vanishing fog/streak correlations", verdict.pixel_pass_rate >= 0.99
              and elapsed < 60, detail)
    assert verdict.pixel_pass_rate >= 0.99
    assert elapsed < 60


def test_criterion_3_stable_photon_identity(criterion):
    _warm_kernels()
    clean = synthetic_scene()
    start = time.perf_counter()
    values = np.random.default_rng(0).integers(0, 4096, size=(128, 128)).astype(float)
    const = FrameStack(np.broadcast_to(values, (30, 128, 128)).copy(), 20.0, 33.0, seed=0)
    exact = pnfc_reconstruct(const).data.tobytes() == values.tobytes()
    config = SimConfig(photon_noise=False).without_rain()
    stack, _ = synth_stack(clean, config, 30, 20.0, 33.0, seed=0)
    recon = normalize(pnfc_reconstruct(stack), stack.exposure_scale, clean.peak)
    score = psnr(clean, recon, clean.peak)
    elapsed = time.perf_counter() - start
    ok = exact and score == 99.0 and elapsed < 1
    criterion(3, "stable-photon identity", ok,
              f"constant stack exact={exact}, no-rain PSNR {score} dB, {elapsed:.3f} s (limit 1 s)")
    assert exact
    assert score == 99.0
    assert elapsed < 1


def test_criterion_4_gain_decreases_with_T(criterion, sweep):
    reports, elapsed = sweep
    gains = dict(seed_averaged(reports, "psnr_gain_db", include_rainy=False)["pnfc"])
    g = [gains[T] for T in T_VALUES]
    ok = g[0] > g[1] > g[2] and elapsed < 120
    criterion(4, "gain decreases with T", ok,
              "seed-averaged PNFC gain " + " > ".join(f"{v:.2f}" for v in g)
              + f" dB at T = 20/50/80 ms, {elapsed:.1f} s (limit 120 s)")
    assert g[0] > g[1] > g[2]
    assert elapsed < 120


def test_criterion_5_short_T_superiority(criterion, sweep):
    reports, _ = sweep
    curves = {k: dict(v) for k, v in seed_averaged(reports, "psnr_db", include_rainy=False).items()}
    p, m, med = curves["pnfc"][20.0], curves["mean"][20.0], curves["median"][20.0]
    ok = p >= m + 1.0 and p >= med - 0.5
    criterion(5, "short-T superiority", ok,
              f"T = 20 ms PSNR pnfc {p:.2f}, mean {m:.2f}, median {med:.2f} dB")
    assert p >= m + 1.0
    assert p >= med - 0.5


def test_criterion_6_fluctuation_demo(criterion):
    _, mean_psnr = fluctuation_demo(synthetic_scene(), SimConfig(), (20.0, 50.0), 30, SEEDS)
    a, b = mean_psnr[20.0], mean_psnr[50.0]
    criterion(6, "fluctuation demo", b > a,
              f"mean inter-frame PSNR {a:.2f} dB at 20 ms, {b:.2f} dB at 50 ms")
    assert b > a


def test_criterion_7_metric_oracles(criterion):
    g = np.random.default_rng(7)
    worst_p = worst_s = 0.0
    for _ in range(100):
        a = g.uniform(0, 255, (16, 16))
        b = np.clip(a + g.normal(0, g.uniform(1, 60), (16, 16)), 0, 255)
        rp, rs = psnr_direct(a.tolist(), b.tolist(), 255), ssim_direct(a.tolist(), b.tolist(), 255)
        worst_p = max(worst_p, abs(psnr(a, b, 255) - rp) / abs(rp))
        worst_s = max(worst_s, abs(ssim(a, b, 255) - rs) / abs(rs))
    same = g.uniform(0, 255, (16, 16))
    caps = psnr(same, same, 255) == 99.0 and ssim(same, same, 255) == 1.0
    ok = worst_p <= 1e-9 and worst_s <= 1e-9 and caps
    criterion(7, "metric oracles", ok,
              f"max rel err PSNR {worst_p:.1e}, SSIM {worst_s:.1e}; identical-image caps {caps}")
    assert worst_p <= 1e-9 and worst_s <= 1e-9
    assert caps


def _cli(*argv, threads):
    env = dict(os.environ, NUMBA_NUM_THREADS="4")
    cmd = [sys.executable, "-m", "pnfc", *map(str, argv), "--threads", str(threads)]
    subprocess.run(cmd, check=True, capture_output=True, env=env)


def _tree_bytes(root):
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_determinism_and_io(criterion, tmp_path):
    write_pgm(synthetic_scene(48, 48), tmp_path / "clean.pgm")
    for t in (1, 4):
        d = tmp_path / f"t{t}"
        _cli("synth", "--clean", tmp_path / "clean.pgm", "--out", d / "stack", "--frames", 12,
             "--seed", 3, "--trace", threads=t)
        _cli("verify-stats", "--stack", d / "stack/manifest.json", "--trace", d / "stack/trace",
             "--out", d / "verdict.csv", threads=t)
        for est in ("pnfc", "mean", "median"):
            _cli("derain", "--stack", d / "stack/manifest.json", "--estimator", est,
                 "--out", d / f"recon_{est}.pgm", threads=t)
        _cli("sweep", "--clean", tmp_path / "clean.pgm", "--out", d / "sweep", "--frames", 5,
             "--seeds", 0, 1, "--T", 20, 50, threads=t)
        _cli("demo-fluctuation", "--clean", tmp_path / "clean.pgm", "--out", d / "demo",
             "--frames", 5, threads=t)
    one, four = _tree_bytes(tmp_path / "t1"), _tree_bytes(tmp_path / "t4")
    identical = one == four
    csvs = sum(name.endswith(".csv") for name in one)

    g = np.random.default_rng(8)
    roundtrip_bad = 0
    for _ in range(1000):
        h, w = (int(v) for v in g.integers(1, 33, size=2))
        maxval = int(g.choice([1, 255, 256, 4095, 65535]))
        img = Image(g.integers(0, maxval + 1, size=(h, w)).astype(float), maxval)
        data = encode_pgm(img)
        back = decode_pgm(data)
        if back.data.tobytes() != img.data.tobytes() or encode_pgm(back) != data:
            roundtrip_bad += 1
    ok = identical and roundtrip_bad == 0
    criterion(8, "determinism and I/O", ok,
              f"{len(one)} output files ({csvs} CSV) identical across --threads 1/4: {identical}; "
              f"PGM round trip {1000 - roundtrip_bad}/1000 bit-exact")
    assert identical
    assert roundtrip_bad == 0


def test_criterion_9_derain_runtime(criterion):
    frames = np.random.default_rng(9).poisson(400, size=(30, 256, 256)).astype(float)
    stack = FrameStack(frames, 20.0, 33.0, seed=0)
    pnfc_reconstruct(stack, DerainConfig(), threads=1)
    best = min(_timed(lambda: pnfc_reconstruct(stack, DerainConfig(), threads=1))
               for _ in range(5))
    criterion(9, "derain runtime", best < 1.0,
              f"256x256x30 PNFC derain {best * 1000:.1f} ms single-threaded (limit 1 s)")
    assert best < 1.0


_SPEEDUP_SCRIPT = """
import json, time
import numpy as np
from pnfc.derain import correlation_map
from pnfc.imgio import FrameStack
frames = np.random.default_rng(9).poisson(400, size=(30, 256, 256)).astype(float)
stack = FrameStack(frames, 20.0, 33.0, seed=0)
out = {}
for t in (1, 4):
    correlation_map(stack, threads=t)
    best = float("inf")
    for _ in range(15):
        t0 = time.perf_counter()
        correlation_map(stack, threads=t)
        best = min(best, time.perf_counter() - t0)
    out[t] = best
print(json.dumps(out))
"""


def test_criterion_9_thread_speedup(criterion):
    env = dict(os.environ, NUMBA_NUM_THREADS="4")
    proc = subprocess.run([sys.executable, "-c", _SPEEDUP_SCRIPT], capture_output=True,
                          text=True, env=env, check=True)
    times = json.loads(proc.stdout)
    speedup = times["1"] / times["4"]
    # near-linear: at least 3x on 4 threads
    ok = speedup >= 3.0
    criterion(9, "correlation_map 4-thread speedup", ok,
              f"{speedup:.2f}x (1 thread {times['1'] * 1000:.1f} ms, 4 threads "
              f"{times['4'] * 1000:.1f} ms) on {os.cpu_count()} CPU(s); need >= 3.0x")
    assert speedup >= 3.0


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0
