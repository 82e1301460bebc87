# Command-line front end: single-image denoising, Monte-Carlo PSNR
# benchmarking over an image directory, and parameter sweeps written as CSV.
#
# Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 numerical failure.
# All randomness flows from --seed (trial t uses seed + t), so a run is fully
# reproducible from its command line. Noise sigmas are given on the byte
# scale (--sigma-added 20 means 20/255).
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .affinity import KernelSpec, affinity_from_field, distance_field, spatial_cutoff_radius
from .balancing import smooth_denoise
from .gsf import BracketError, GsfParams, SolverError, gsf_denoise
from .image import (
    ImageFormatError,
    NoiseSpec,
    add_gaussian_noise,
    load_image,
    psnr,
    quantize,
    save_image,
)
from .patches import PatchConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

METHODS = ("nlm", "onestep", "sinkhorn", "gsf")

BENCH_HEADER = ["image", "method", "sigma", "h_r", "trial", "psnr"]

DEFAULT_HR_GRID = [0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90]


class UsageError(ValueError):
    pass


def _threads() -> int:
    raw = os.environ.get("SYMFILT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _quantized_psnr(a, b) -> float:
    return psnr(quantize(a), quantize(b))


def _kernel_for(args, sigma: float, h_r: float) -> KernelSpec:
    if args.window_radius == "auto":
        radius = spatial_cutoff_radius(args.hs, 1e-8)
    else:
        radius = int(args.window_radius)
    return KernelSpec(
        variant="spatially_regulated_nlm",
        h_s=args.hs,
        h_r=h_r,
        window_radius=radius,
    )


def _smoothing_denoise(noisy, args, sigma: float, h_r: float, iters: int):
    from .affinity import build_affinity

    cfg = PatchConfig(args.patch_side)
    weights = build_affinity(noisy, cfg, _kernel_for(args, sigma, h_r))
    return smooth_denoise(weights, noisy, iters)


def _default_hr(method: str, sigma: float, d: int) -> float:
    # range bandwidth conventions: patch-distance methods use sigma*sqrt(d),
    # the mixture filter uses sigma itself
    return sigma if method == "gsf" else sigma * math.sqrt(d)


def _run_method(method, noisy, args, sigma, h_r, seed):
    if method == "nlm":
        return _smoothing_denoise(noisy, args, sigma, h_r, 0), None
    if method == "onestep":
        return _smoothing_denoise(noisy, args, sigma, h_r, 1), None
    if method == "sinkhorn":
        return _smoothing_denoise(noisy, args, sigma, h_r, args.sinkhorn_iters), None
    params = GsfParams(
        side=args.patch_side,
        h_s=args.hs,
        h_r=h_r,
        sigma=sigma,
        k=args.k if args.k == "auto" else int(args.k),
        lam=args.lam if args.lam == "auto" else float(args.lam),
        seed=seed,
        em_max_iter=args.em_max_iter,
    )
    out, report = gsf_denoise(noisy, params)
    return out, report


def cmd_denoise(args) -> int:
    if args.sinkhorn_iters is not None and args.method != "sinkhorn":
        raise UsageError("--sinkhorn-iters is only valid with --method sinkhorn")
    if args.method != "gsf" and (args.k_given or args.lam_given):
        raise UsageError("--k/--lambda are only valid with --method gsf")
    if args.method == "sinkhorn" and args.sinkhorn_iters is None:
        args.sinkhorn_iters = 10
    if args.method == "gsf" and args.lam == "auto" and args.sigma_added <= 0:
        raise UsageError("--lambda auto needs --sigma-added > 0")

    clean = load_image(args.input)
    sigma = args.sigma_added / 255.0
    noisy = add_gaussian_noise(clean, NoiseSpec(sigma, seed=args.seed))
    h_r = args.hr if args.hr is not None else _default_hr(
        args.method, sigma, args.patch_side**2
    )
    if h_r <= 0:
        raise UsageError("range bandwidth must be > 0; give --hr explicitly")

    out, report = _run_method(args.method, noisy, args, sigma, h_r, args.seed)
    save_image(out, args.output)

    reference = load_image(args.reference) if args.reference else clean
    record = {
        "method": args.method,
        "input": str(args.input),
        "output": str(args.output),
        "sigma_added": args.sigma_added,
        "h_r": round(h_r, 6),
        "seed": args.seed,
        "psnr": round(_quantized_psnr(reference, out), 4),
        "psnr_noisy": round(_quantized_psnr(reference, noisy), 4),
    }
    if report is not None:
        rec = report.to_record()
        rec.pop("psnr_vs_reference", None)
        record.update(rec)
    print(" ".join(f"{k}={v}" for k, v in record.items()))
    return EXIT_OK


def _bench_one(job, args, clean_cache, grid):
    """All method/bandwidth results for one (image, sigma, trial) noisy draw.

    The patch distance field is built once per noisy image and reused across
    the whole h_r grid and both normalization modes.
    """
    path, sigma_b, trial = job
    clean = clean_cache[path]
    sigma = sigma_b / 255.0
    seed = args.seed + trial
    noisy = add_gaussian_noise(clean, NoiseSpec(sigma, seed=seed))
    d = args.patch_side**2
    cfg = PatchConfig(args.patch_side)
    out_rows = []
    smooth_methods = [m for m in args.methods if m != "gsf"]
    if smooth_methods:
        field = distance_field(noisy, cfg, _kernel_for(args, sigma, sigma))
        for mult in grid:
            h_r = mult * sigma * math.sqrt(d)
            weights = affinity_from_field(field, _kernel_for(args, sigma, h_r))
            for method in smooth_methods:
                iters = {"nlm": 0, "onestep": 1}.get(method, args.sinkhorn_iters)
                value = _quantized_psnr(clean, smooth_denoise(weights, noisy, iters))
                out_rows.append((path.stem, method, sigma_b, h_r, trial, value))
    if "gsf" in args.methods:
        h_r = args.hr if args.hr is not None else sigma
        out, _ = _run_method("gsf", noisy, args, sigma, h_r, seed)
        value = _quantized_psnr(clean, out)
        out_rows.append((path.stem, "gsf", sigma_b, h_r, trial, value))
    return out_rows


def cmd_benchmark(args) -> int:
    indir = Path(args.input)
    if not indir.is_dir():
        raise FileNotFoundError(f"no such image directory: {indir}")
    files = sorted(p for p in indir.iterdir() if p.suffix.lower() in (".pgm", ".png"))
    if not files:
        raise FileNotFoundError(f"no PGM/PNG images in {indir}")
    args.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in args.methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {bad}; choose from {','.join(METHODS)}")
    sigmas = _parse_float_list(args.sigmas)
    grid = _parse_float_list(args.grid_hr) if args.grid_hr else list(DEFAULT_HR_GRID)
    clean_cache = {p: load_image(p) for p in files}

    jobs = [
        (path, sigma_b, trial)
        for path in files
        for sigma_b in sigmas
        for trial in range(args.trials)
    ]
    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda j: _bench_one(j, args, clean_cache, grid), jobs))
    else:
        chunks = [_bench_one(j, args, clean_cache, grid) for j in jobs]

    mean_rows, trial_rows = benchmark_rows([r for chunk in chunks for r in chunk])
    rows = [
        [stem, method, f"{sigma_b:g}", f"{h_r:.6f}", str(trial), f"{value:.4f}"]
        for stem, method, sigma_b, h_r, trial, value in trial_rows
    ]
    rows += [
        [stem, method, f"{sigma_b:g}", f"{h_r:.6f}", kind, f"{value:.4f}"]
        for stem, method, sigma_b, h_r, kind, value in mean_rows
    ]
    _write_csv(args.csv, BENCH_HEADER, rows)
    return EXIT_OK


def benchmark_rows(raw):
    """Canonically sorted trial rows plus 'mean' and best-h_r aggregate rows.

    Aggregates are computed on unrounded PSNRs; the CSV writer rounds last.
    """
    trial_rows = sorted(raw, key=lambda r: (r[0], r[1], r[2], r[3], r[4]))
    by_setting: dict[tuple, list[float]] = {}
    for stem, method, sigma_b, h_r, trial, value in trial_rows:
        by_setting.setdefault((stem, method, sigma_b, h_r), []).append(value)
    mean_rows = []
    best: dict[tuple, tuple[float, float]] = {}
    for (stem, method, sigma_b, h_r), vals in sorted(by_setting.items()):
        mean = float(np.mean(vals))
        mean_rows.append((stem, method, sigma_b, h_r, "mean", mean))
        key = (stem, method, sigma_b)
        if key not in best or mean > best[key][1]:
            best[key] = (h_r, mean)
    for (stem, method, sigma_b), (h_r, mean) in sorted(best.items()):
        mean_rows.append((stem, method, sigma_b, h_r, "best", mean))
    return mean_rows, trial_rows


def _write_csv(path, header, rows):
    out = sys.stdout if path is None else open(path, "w", newline="", encoding="utf-8")
    try:
        writer = csv.writer(out)
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if path is not None:
            out.close()


def cmd_sweep(args) -> int:
    clean = load_image(args.input)
    sigma = args.sigma_added / 255.0
    if sigma <= 0:
        raise UsageError("sweeps need --sigma-added > 0")
    noisy = add_gaussian_noise(clean, NoiseSpec(sigma, seed=args.seed))
    d = args.patch_side**2
    cfg = PatchConfig(args.patch_side)

    if args.axis == "hr":
        values = _parse_float_list(args.values) if args.values else list(DEFAULT_HR_GRID)
        base = _kernel_for(args, sigma, sigma)
        field = distance_field(noisy, cfg, base)
        rows = []
        for mult in values:
            h_r = mult * sigma * math.sqrt(d)
            spec = _kernel_for(args, sigma, h_r)
            weights = affinity_from_field(field, spec)
            p0 = _quantized_psnr(clean, smooth_denoise(weights, noisy, 0))
            p1 = _quantized_psnr(clean, smooth_denoise(weights, noisy, 1))
            rows.append([f"{mult:g}", f"{p0:.4f}", f"{p1:.4f}", f"{p1 - p0:.4f}"])
        _write_csv(args.csv, ["hr_multiplier", "psnr_nlm", "psnr_onestep", "gain"], rows)
        return EXIT_OK

    if args.axis == "sinkhorn-iters":
        values = (
            [int(v) for v in _parse_float_list(args.values)]
            if args.values
            else list(range(0, 31))
        )
        h_r = args.hr if args.hr is not None else sigma * math.sqrt(d)
        weights = affinity_from_field(
            distance_field(noisy, cfg, _kernel_for(args, sigma, h_r)),
            _kernel_for(args, sigma, h_r),
        )
        rows = []
        for iters in values:
            out = smooth_denoise(weights, noisy, iters)
            rows.append([str(iters), f"{_quantized_psnr(clean, out):.4f}"])
        _write_csv(args.csv, ["sinkhorn_iters", "psnr"], rows)
        return EXIT_OK

    if args.axis == "lambda":
        from . import gmm
        from .gsf import blend, compute_u, compute_w, divergence_u, sure
        from .image import mse
        from .patches import generalized_patch_matrix

        if args.values:
            values = _parse_float_list(args.values)
        else:
            values = list(np.geomspace(0.1, 10 * d, 40))
        k = 50 if args.k == "auto" else int(args.k)
        pts = generalized_patch_matrix(noisy, cfg)
        h_r = args.hr if args.hr is not None else sigma
        res = gmm.fit(pts, k, h_s=args.hs, h_r=h_r, spatial_dim=2, seed=args.seed,
                      max_iter=args.em_max_iter)
        u = compute_u(compute_w(res.gamma, res.model.mu_range), cfg, noisy.shape)
        div = divergence_u(res.gamma)
        rows = []
        for lam in values:
            est = blend(u, noisy, lam, d)
            rows.append(
                [
                    f"{lam:.6g}",
                    f"{sure(lam, u, noisy, sigma, div, d):.8f}",
                    f"{mse(est, clean):.8f}",
                    f"{_quantized_psnr(clean, est):.4f}",
                ]
            )
        _write_csv(args.csv, ["lambda", "sure", "mse", "psnr"], rows)
        return EXIT_OK

    # k sweep
    from . import gmm
    from .gsf import blend, compute_u, compute_w, cv_score, divergence_u, optimal_lambda
    from .patches import generalized_patch_matrix

    values = (
        [int(v) for v in _parse_float_list(args.values)]
        if args.values
        else [16, 32, 64, 96, 128, 192, 256, 384, 512, 768]
    )
    pts = generalized_patch_matrix(noisy, cfg)
    h_r = args.hr if args.hr is not None else sigma
    rows = []
    for k in values:
        res = gmm.fit(pts, k, h_s=args.hs, h_r=h_r, spatial_dim=2, seed=args.seed + k,
                      max_iter=args.em_max_iter)
        delta = cv_score(res.model, res.gamma, pts)
        u = compute_u(compute_w(res.gamma, res.model.mu_range), cfg, noisy.shape)
        div = divergence_u(res.gamma)
        lam = optimal_lambda(float(np.mean((u - noisy) ** 2)), sigma, noisy.size, div, d)
        est = blend(u, noisy, lam, d)
        rows.append([str(k), f"{delta:.6f}", f"{_quantized_psnr(clean, est):.4f}"])
    _write_csv(args.csv, ["k", "delta", "psnr"], rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symfilt",
        description="Patch-based symmetric smoothing filters for grayscale denoising.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="base RNG seed")
        p.add_argument("--patch-side", type=int, default=5, help="odd patch side")
        p.add_argument("--hs", type=float, default=10.0, help="spatial bandwidth (pixels)")
        p.add_argument("--hr", type=float, default=None,
                       help="range bandwidth on the [0,1] scale (default per method)")
        p.add_argument("--window-radius", default="10",
                       help="search window radius in pixels, or 'auto' for the "
                            "truncation-based radius")
        p.add_argument("--sigma-added", type=float, default=0.0,
                       help="noise std dev to add, byte scale (20 means 20/255)")
        p.add_argument("--em-max-iter", type=int, default=100, help="EM iteration cap")

    d = sub.add_parser("denoise", help="denoise a single image")
    common(d)
    d.add_argument("--method", choices=METHODS, required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.add_argument("--reference", default=None,
                   help="clean reference for PSNR (default: the input image)")
    d.add_argument("--sinkhorn-iters", type=int, default=None,
                   help="balancing passes (sinkhorn method only)")
    d.add_argument("--k", default="auto", help="cluster count or 'auto' (gsf only)")
    d.add_argument("--lambda", dest="lam", default="auto",
                   help="fidelity weight or 'auto' (gsf only)")
    d.set_defaults(func=cmd_denoise)

    b = sub.add_parser("benchmark", help="Monte-Carlo PSNR benchmark over a directory")
    common(b)
    b.add_argument("--input", required=True, help="directory of PGM/PNG images")
    b.add_argument("--methods", default="nlm,onestep",
                   help="comma-separated subset of nlm,onestep,sinkhorn,gsf")
    b.add_argument("--sigmas", default="20", help="comma-separated byte-scale sigmas")
    b.add_argument("--trials", type=int, default=1, help="Monte-Carlo trials per setting")
    b.add_argument("--grid-hr", default=None,
                   help="h_r grid as multipliers of sigma*sqrt(d)")
    b.add_argument("--sinkhorn-iters", type=int, default=10)
    b.add_argument("--k", default="auto")
    b.add_argument("--lambda", dest="lam", default="auto")
    b.add_argument("--csv", default=None, help="output CSV path (default stdout)")
    b.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("sweep", help="sweep one axis and emit (value, metric) CSV")
    common(s)
    s.add_argument("--axis", choices=("hr", "sinkhorn-iters", "lambda", "k"), required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--values", default=None, help="comma-separated axis values")
    s.add_argument("--k", default="auto", help="cluster count for lambda sweeps")
    s.add_argument("--csv", default=None, help="output CSV path (default stdout)")
    s.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "trials") and args.trials < 1:
        parser.exit(EXIT_USAGE, "trials must be >= 1\n")
    if hasattr(args, "k") and args.k != "auto":
        try:
            int(args.k)
        except ValueError:
            parser.exit(EXIT_USAGE, f"--k must be an integer or 'auto', got {args.k!r}\n")
    if hasattr(args, "lam") and args.lam != "auto":
        try:
            float(args.lam)
        except ValueError:
            parser.exit(EXIT_USAGE, f"--lambda must be a number or 'auto', got {args.lam!r}\n")
    if hasattr(args, "method"):
        args.k_given = "--k" in (argv if argv is not None else sys.argv)
        args.lam_given = any(
            a.startswith("--lambda") for a in (argv if argv is not None else sys.argv)
        )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ImageFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (BracketError, SolverError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
