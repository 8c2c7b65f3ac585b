"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 bad arguments.
Numeric results go to stdout as ``key=value`` lines.
"""

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from . import derain as derain_mod
from . import harness, photonstats
from .imgio import load_stack, read_pgm, save_stack, write_csv, write_pgm
from .metrics import psnr, ssim
from .rainsim import ComponentTrace, SimConfig, load_config, synth_stack
from .scene import synthetic_scene


class UsageError(Exception):
    pass


def _emit(key, value):
    print(f"{key}={value}")


def _load_clean(path):
    if path is None:
        return synthetic_scene()
    return read_pgm(path)


def _load_sim_config(path):
    return SimConfig() if path is None else load_config(path)


def cmd_synth(args):
    clean = _load_clean(args.clean)
    config = _load_sim_config(args.config)
    dT = harness.frame_interval(args.T) if args.dT is None else args.dT
    stack, trace = synth_stack(clean, config, args.frames, args.T, dT, args.seed,
                               threads=derain_mod.resolve_threads(args.threads))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.clean is not None:
        shutil.copyfile(args.clean, out / "clean.pgm")
    else:
        write_pgm(clean, out / "clean.pgm")
    manifest = save_stack(stack, out, clean_reference="clean.pgm")
    if args.trace:
        trace.save(out / "trace")
    _emit("manifest", manifest)
    _emit("frames", len(stack))
    _emit("peak", stack.peak)
    _emit("exposure_scale", stack.exposure_scale)
    return 0


def cmd_derain(args):
    stack = load_stack(args.stack)
    if len(stack) < 3:
        raise UsageError(f"derain needs a stack with N >= 3 frames, got N = {len(stack)}")
    if args.config is not None:
        cfg = derain_mod.DerainConfig.from_json(Path(args.config).read_text())
    else:
        cfg = derain_mod.DerainConfig()
    overrides = {}
    if args.estimator is not None:
        overrides["estimator"] = args.estimator
    if args.kappa is not None:
        overrides["kappa"] = args.kappa
    if args.no_shot_noise_compensation:
        overrides["shot_noise_compensation"] = False
    if args.gain_correction:
        overrides["gain_correction"] = True
    cfg = derain_mod.DerainConfig(**{**cfg.__dict__, **overrides})
    img = derain_mod.reconstruct(stack, cfg, args.threads)
    if args.normalize:
        if stack.exposure_scale is None:
            raise UsageError("--normalize needs exposure_scale in the stack manifest")
        img = harness.display(harness.normalize(img, stack.exposure_scale, args.peak))
    write_pgm(img, args.out)
    _emit("out", args.out)
    _emit("estimator", cfg.estimator)
    _emit("frames", len(stack))
    _emit("mean", float(img.data.mean()))
    return 0


def cmd_verify_stats(args):
    stack = load_stack(args.stack)
    trace = ComponentTrace.load(args.trace)
    coherence = None
    if args.coherence_time is not None:
        coherence = photonstats.CoherenceParams(args.coherence_time, stack.measurement_interval_ms)
    verdict = photonstats.verify_vanishing(trace, stack, coherence, block_size=args.block,
                                           min_pass_rate=args.min_pass_rate)
    if args.out is not None:
        write_csv(verdict.rows(), args.out)
    _emit("pixel_pass_rate", verdict.pixel_pass_rate)
    _emit("block_pass_rate", verdict.block_pass_rate)
    _emit("correlated_regime", str(verdict.correlated_regime).lower())
    _emit("passed", str(verdict.passed).lower())
    return 0 if verdict.passed else 1


def cmd_sweep(args):
    clean = _load_clean(args.clean)
    config = _load_sim_config(args.config)
    dcfg = derain_mod.DerainConfig(kappa=args.kappa)
    reports = harness.sweep_integration_time(clean, config, args.T, args.frames, args.seeds,
                                             derain_config=dcfg, out_dir=args.out,
                                             threads=args.threads)
    _emit("rows", len(reports))
    for est, pts in harness.seed_averaged(reports, "psnr_db").items():
        for T, v in pts:
            _emit(f"psnr_db.{est}.T{T:g}", v)
    crossing = harness.inflection_detect(reports, "pnfc", "median")
    _emit("inflection_T_pnfc_median", "none" if crossing is None else crossing)
    return 0


def cmd_demo_fluctuation(args):
    clean = _load_clean(args.clean)
    config = _load_sim_config(args.config)
    _, mean_psnr = harness.fluctuation_demo(clean, config, args.T, args.frames, args.seeds,
                                            block=args.block, out_dir=args.out)
    for T, v in mean_psnr.items():
        _emit(f"mean_interframe_psnr_db.T{T:g}", v)
    return 0


def cmd_eval(args):
    a = read_pgm(args.a)
    b = read_pgm(args.b)
    peak = args.peak if args.peak is not None else a.peak
    _emit("psnr_db", psnr(a, b, peak))
    _emit("ssim", ssim(a, b, peak))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pnfc",
        description="Rain removal by temporal photon-number fluctuation correlation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $PNFC_THREADS or 1)")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synth", help="synthesize a rainy photon-count stack")
    p.add_argument("--clean", help="clean scene PGM (default: built-in synthetic scene)")
    p.add_argument("--config", help="simulation config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=harness.DEFAULT_FRAMES)
    p.add_argument("--T", type=float, default=20.0, help="integration time (ms)")
    p.add_argument("--dT", type=float, default=None, help="measurement interval (ms)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", action="store_true", help="also write the S/F/D layer trace")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("derain", help="reconstruct a rain-free image from a stack")
    p.add_argument("--stack", required=True, help="stack manifest.json")
    p.add_argument("--estimator", choices=derain_mod.ESTIMATORS, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--config", help="derain config JSON")
    p.add_argument("--no-shot-noise-compensation", action="store_true")
    p.add_argument("--gain-correction", action="store_true")
    p.add_argument("--normalize", action="store_true",
                   help="divide by the exposure scale to return to clean-image units")
    p.add_argument("--peak", type=float, default=255.0, help="peak used with --normalize")
    p.add_argument("--out", required=True, help="output PGM")
    common(p)
    p.set_defaults(func=cmd_derain)

    p = sub.add_parser("verify-stats", help="check the vanishing fluctuation correlations")
    p.add_argument("--stack", required=True)
    p.add_argument("--trace", required=True, help="trace directory written by synth --trace")
    p.add_argument("--out", help="verdict CSV")
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--min-pass-rate", type=float, default=0.99)
    p.add_argument("--coherence-time", type=float, default=None, help="override (ms)")
    common(p)
    p.set_defaults(func=cmd_verify_stats)

    p = sub.add_parser("sweep", help="integration-time sweep with PSNR/SSIM report")
    p.add_argument("--clean")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--T", type=float, nargs="+", default=list(harness.DEFAULT_T_VALUES))
    p.add_argument("--frames", type=int, default=harness.DEFAULT_FRAMES)
    p.add_argument("--seeds", type=int, nargs="+", default=list(harness.DEFAULT_SEEDS))
    p.add_argument("--kappa", type=float, default=1.0)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("demo-fluctuation", help="pixel-block fluctuation versus integration time")
    p.add_argument("--clean")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--T", type=float, nargs="+", default=[20.0, 50.0])
    p.add_argument("--frames", type=int, default=harness.DEFAULT_FRAMES)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--block", type=int, nargs=4, metavar=("ROW", "COL", "H", "W"))
    common(p)
    p.set_defaults(func=cmd_demo_fluctuation)

    p = sub.add_parser("eval", help="PSNR and SSIM between two PGMs")
    p.add_argument("--a", required=True, help="reference PGM")
    p.add_argument("--b", required=True)
    p.add_argument("--peak", type=float, default=None)
    common(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None:
            derain_mod.resolve_threads(args.threads)
        return args.func(args)
    except (UsageError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
