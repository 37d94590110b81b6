"""Command-line front end.

Subcommands: degrade, restore, eval, dump-filters, oracle-cg, replay.  Every
command that writes files also records a JSON run manifest next to its primary
output (command, resolved parameters, PRNG algorithm and seed, outputs,
metrics), and `replay` re-executes a manifest; with unchanged inputs the
outputs reproduce byte for byte.

Noise levels on the command line are quoted on the 8-bit (0..255) scale and
divided by 255 internally.  Images are .pgm (8-bit) or .f32 (lossless float).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import grid, ops, priornet, solver

PRNG_NAME = "numpy-pcg64"

_CONFIG_KEYS = {
    "eta": float,
    "lambda": float,
    "step": float,
    "mix": float,
    "iterations": int,
    "prior": str,
    "patch_side": int,
    "stride": int,
    "group_size": int,
    "window": int,
    "bandwidth": float,
    "refresh": bool,
    "power_iters": int,
    "dct_side": int,
}


def parse_config(path: str) -> dict:
    """Flat key=value config; '#' starts a comment; unknown keys are errors."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {text!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            caster = _CONFIG_KEYS[key]
            if caster is bool:
                lowered = value.lower()
                if lowered not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"{path}:{lineno}: bad boolean {value!r}")
                out[key] = lowered in ("true", "1", "yes")
            else:
                try:
                    out[key] = caster(value)
                except ValueError as exc:
                    raise ValueError(
                        f"{path}:{lineno}: bad value for {key}: {value!r}"
                    ) from exc
    return out


def _manifest_path(out_path: str) -> str:
    return out_path + ".manifest.json"


def write_manifest(command: str, params: dict, inputs: dict, outputs: dict,
                   seed: int | None, metrics: dict | None = None) -> None:
    doc = {
        "command": command,
        "parameters": params,
        "inputs": inputs,
        "outputs": outputs,
        "prng": {"algorithm": PRNG_NAME, "seed": seed},
        "metrics": metrics or {},
    }
    primary = next(iter(outputs.values()))
    with open(_manifest_path(primary), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# operator construction shared by degrade / restore / oracle-cg


def _resolve_kernel(args_kernel: str | None, blur_sigma: float | None,
                    scale: int | None) -> np.ndarray:
    if args_kernel:
        return ops.load_kernel(args_kernel)
    if blur_sigma is None:
        blur_sigma = 0.5 * scale if scale else 1.6
    return ops.gaussian_kernel(blur_sigma)


def _build_restore_op(args, y_shape: tuple[int, int]) -> ops.DegradationOp:
    sigma = args.sigma / 255.0
    if args.mode == "denoise":
        return ops.identity_op(y_shape, noise_sigma=sigma)
    if args.mode == "deblur":
        kernel = _resolve_kernel(args.kernel, args.blur_sigma, None)
        return ops.blur_op(y_shape, kernel, noise_sigma=sigma)
    if args.mode == "sr":
        if args.scale is None:
            raise ValueError("super-resolution requires --scale")
        hr_shape = (y_shape[0] * args.scale, y_shape[1] * args.scale)
        if args.sr_kind == "gauss":
            kernel = _resolve_kernel(args.kernel, args.blur_sigma, args.scale)
            return ops.gaussian_downsample_op(hr_shape, kernel, args.scale,
                                              noise_sigma=sigma)
        return ops.bicubic_downsample_op(hr_shape, args.scale, noise_sigma=sigma)
    raise ValueError(f"unknown restore mode {args.mode!r}")


def _build_solver_config(args, file_cfg: dict) -> solver.SolverConfig:
    cfg = solver.SolverConfig()
    if "eta" in file_cfg:
        cfg.eta = file_cfg["eta"]
    if "lambda" in file_cfg:
        cfg.lam = file_cfg["lambda"]
    if "step" in file_cfg:
        cfg.step = file_cfg["step"]
    if "mix" in file_cfg:
        cfg.mix = file_cfg["mix"]
    if "iterations" in file_cfg:
        cfg.iterations = file_cfg["iterations"]
    if "prior" in file_cfg:
        cfg.prior_mode = file_cfg["prior"]
    if "patch_side" in file_cfg:
        cfg.patch_side = file_cfg["patch_side"]
    if "stride" in file_cfg:
        cfg.stride = file_cfg["stride"]
    if "group_size" in file_cfg:
        cfg.group_size = file_cfg["group_size"]
    if "window" in file_cfg:
        cfg.window = file_cfg["window"]
    if "bandwidth" in file_cfg:
        cfg.bandwidth = file_cfg["bandwidth"]
    if "refresh" in file_cfg:
        cfg.refresh_prior = file_cfg["refresh"]
    if "power_iters" in file_cfg:
        cfg.power_iters = file_cfg["power_iters"]
    # command-line flags override the config file
    if args.eta is not None:
        cfg.eta = args.eta
    if args.lam is not None:
        cfg.lam = args.lam
    if args.step is not None:
        cfg.step = args.step
    if args.mix is not None:
        cfg.mix = args.mix
    if args.iters is not None:
        cfg.iterations = args.iters
    if args.prior is not None:
        cfg.prior_mode = args.prior
    return cfg


def _load_bank(args, file_cfg: dict) -> ops.FilterBank:
    if getattr(args, "bank", None):
        return ops.load_filter_bank(args.bank)
    side = file_cfg.get("dct_side", 5)
    return ops.make_dct_bank(side)


# ---------------------------------------------------------------------------
# subcommands


def cmd_degrade(args) -> int:
    img = grid.load_image(args.input)
    sigma = args.sigma / 255.0
    if args.kind == "noise":
        op = ops.identity_op(img.shape, noise_sigma=sigma)
    elif args.kind == "blur":
        kernel = _resolve_kernel(args.kernel, args.blur_sigma, None)
        op = ops.blur_op(img.shape, kernel, noise_sigma=sigma)
    elif args.kind == "gauss-down":
        if args.scale is None:
            raise ValueError("gauss-down requires --scale")
        kernel = _resolve_kernel(args.kernel, args.blur_sigma, args.scale)
        op = ops.gaussian_downsample_op(img.shape, kernel, args.scale,
                                        noise_sigma=sigma)
    elif args.kind == "bicubic-down":
        if args.scale is None:
            raise ValueError("bicubic-down requires --scale")
        op = ops.bicubic_downsample_op(img.shape, args.scale, noise_sigma=sigma)
    else:
        raise ValueError(f"unknown degradation kind {args.kind!r}")
    degraded = ops.apply_h(op, img)
    if sigma > 0:
        rng = np.random.default_rng(args.seed)
        degraded = degraded + rng.normal(0.0, sigma, size=degraded.shape)
    grid.save_image(args.out, degraded)
    params = {
        "input": args.input, "kind": args.kind, "sigma": args.sigma,
        "kernel": args.kernel, "blur_sigma": args.blur_sigma,
        "scale": args.scale, "out": args.out,
    }
    write_manifest("degrade", params, {"image": args.input},
                   {"image": args.out}, args.seed)
    print(f"degraded {args.input} -> {args.out} ({op.kind}, sigma={args.sigma})")
    return 0


def _metric_lines(ref: np.ndarray, out: np.ndarray) -> dict:
    return {
        "psnr_db": round(grid.psnr(ref, out), 6),
        "ssim": round(grid.ssim(ref, out), 6),
    }


def cmd_restore(args) -> int:
    y = grid.load_image(args.input)
    file_cfg = parse_config(args.config) if args.config else {}
    cfg = _build_solver_config(args, file_cfg)
    op = _build_restore_op(args, y.shape)
    net = None
    if cfg.prior_mode in (solver.PRIOR_EXTERNAL, solver.PRIOR_HYBRID):
        if not args.weights:
            raise ValueError(
                f"--prior {cfg.prior_mode} requires --weights WEIGHT_FILE"
            )
        net = priornet.read_weights(args.weights)
    if args.stages:
        stages = solver.load_stages(args.stages)
        out = solver.restore_staged(y, op, stages, cfg, net)
    else:
        bank = _load_bank(args, file_cfg)
        out = solver.restore(y, op, bank, cfg, net)
    grid.save_image(args.out, out)
    metrics = {}
    if args.reference:
        ref = grid.load_image(args.reference)
        metrics = _metric_lines(ref, out)
        print(f"psnr_db={metrics['psnr_db']:.6f} ssim={metrics['ssim']:.6f}")
    params = {
        "input": args.input, "mode": args.mode, "sigma": args.sigma,
        "kernel": args.kernel, "blur_sigma": args.blur_sigma,
        "scale": args.scale, "sr_kind": args.sr_kind,
        "prior": cfg.prior_mode, "weights": args.weights,
        "stages": args.stages, "bank": args.bank, "config": args.config,
        "eta": cfg.eta, "lambda": cfg.lam, "step": cfg.step, "mix": cfg.mix,
        "iters": cfg.iterations, "reference": args.reference, "out": args.out,
    }
    write_manifest("restore", params, {"image": args.input},
                   {"image": args.out}, args.seed, metrics)
    print(f"restored {args.input} -> {args.out} "
          f"(mode={args.mode}, prior={cfg.prior_mode})")
    return 0


def cmd_eval(args) -> int:
    if not args.pair:
        raise ValueError("eval needs at least one --pair REF TEST")
    rows = []
    failures = 0
    for ref_path, test_path in args.pair:
        try:
            ref = grid.load_image(ref_path)
            test = grid.load_image(test_path)
            rows.append((ref_path, test_path,
                         f"{grid.psnr(ref, test, args.peak):.6f}",
                         f"{grid.ssim(ref, test, args.peak):.6f}"))
        except (ValueError, OSError) as exc:
            failures += 1
            rows.append((ref_path, test_path, "error", str(exc)))
    widths = [max(len(r[i]) for r in rows + [("ref", "test", "psnr_db", "ssim")])
              for i in range(4)]
    header = ("ref", "test", "psnr_db", "ssim")
    print("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)))
    for row in rows:
        print("  ".join(str(row[i]).ljust(widths[i]) for i in range(4)))
    good = [r for r in rows if r[2] != "error"]
    if good:
        avg_psnr = sum(float(r[2]) for r in good) / len(good)
        avg_ssim = sum(float(r[3]) for r in good) / len(good)
        print(f"average  psnr_db={avg_psnr:.6f} ssim={avg_ssim:.6f}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("ref,test,psnr_db,ssim\n")
            for row in rows:
                fh.write(",".join(str(cell) for cell in row) + "\n")
        params = {"pairs": [list(p) for p in args.pair], "peak": args.peak,
                  "csv": args.csv}
        write_manifest("eval", params, {}, {"csv": args.csv}, None)
    return 1 if failures else 0


def cmd_dump_filters(args) -> int:
    with open(args.input, "rb") as fh:
        blob = fh.read()
    if blob[:8] == ops.BANK_MAGIC:
        bank = ops.bank_from_bytes(blob)
    elif blob[:8] == solver.STAGE_MAGIC:
        stages = solver.stages_from_bytes(blob)
        if not 0 <= args.stage < len(stages):
            raise ValueError(
                f"stage {args.stage} out of range (file has {len(stages)})"
            )
        bank = stages[args.stage].analysis
    else:
        raise ValueError(f"{args.input}: neither a filter bank nor a stage file")
    k, f = bank.count, bank.side
    cols = math.ceil(math.sqrt(k))
    rows = math.ceil(k / cols)
    mosaic = np.full((rows * f, cols * f), 0.5)
    offsets = []
    scales = []
    for i in range(k):
        w = bank.taps[i]
        lo, hi = float(w.min()), float(w.max())
        offsets.append(lo)
        scales.append(hi - lo)
        tile = (w - lo) / (hi - lo) if hi > lo else np.full_like(w, 0.5)
        r, c = divmod(i, cols)
        mosaic[r * f : (r + 1) * f, c * f : (c + 1) * f] = tile
    grid.save_image(args.out, mosaic)
    params = {"input": args.input, "stage": args.stage, "out": args.out}
    meta = {
        "filter_count": k, "tile_side": f, "grid_rows": rows, "grid_cols": cols,
        "offsets": offsets, "scales": scales,
    }
    write_manifest("dump-filters", params, {"filters": args.input},
                   {"image": args.out}, None, meta)
    print(f"wrote {k} filter tiles ({rows}x{cols} grid) -> {args.out}")
    return 0


def cmd_oracle_cg(args) -> int:
    y = grid.load_image(args.input)
    file_cfg = parse_config(args.config) if args.config else {}
    op = _build_restore_op(args, y.shape)
    bank = _load_bank(args, file_cfg)
    eta = args.eta if args.eta is not None else file_cfg.get("eta", 0.05)
    x0 = solver.initial_estimate(y, op, None, solver.PRIOR_NONE)
    z = ops.conv(bank, x0)
    result = solver.solve_x_exact(y, op, bank, z, eta,
                                  tol=args.tol, max_iter=args.max_iter)
    grid.save_image(args.out, result.x)
    status = "converged" if result.converged else "max-iterations"
    print(f"cg {status} after {result.iterations} iterations, "
          f"relative residual {result.residual:.3e}")
    params = {
        "input": args.input, "mode": args.mode, "sigma": args.sigma,
        "kernel": args.kernel, "blur_sigma": args.blur_sigma,
        "scale": args.scale, "sr_kind": args.sr_kind, "bank": args.bank,
        "config": args.config, "eta": eta, "tol": args.tol,
        "max_iter": args.max_iter, "out": args.out,
    }
    metrics = {"converged": result.converged, "iterations": result.iterations,
               "residual": result.residual}
    write_manifest("oracle-cg", params, {"image": args.input},
                   {"image": args.out}, None, metrics)
    return 0


def cmd_replay(args) -> int:
    with open(args.manifest, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    command = doc.get("command")
    params = dict(doc.get("parameters", {}))
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        for key in ("out", "csv"):
            if params.get(key):
                params[key] = os.path.join(args.out_dir,
                                           os.path.basename(params[key]))
    seed = doc.get("prng", {}).get("seed")
    argv = _params_to_argv(command, params, seed)
    if argv is None:
        raise ValueError(f"manifest command {command!r} cannot be replayed")
    print(f"replaying: sasc {' '.join(argv)}")
    return main(argv)


def _params_to_argv(command: str, p: dict, seed) -> list[str] | None:
    def opt(flag, value):
        return [flag, str(value)] if value is not None else []

    if command == "degrade":
        argv = ["degrade", p["input"], "--kind", p["kind"], "--out", p["out"]]
        argv += opt("--sigma", p.get("sigma"))
        argv += opt("--kernel", p.get("kernel"))
        argv += opt("--blur-sigma", p.get("blur_sigma"))
        argv += opt("--scale", p.get("scale"))
        argv += opt("--seed", seed)
        return argv
    if command == "restore":
        argv = ["restore", p["input"], "--mode", p["mode"], "--out", p["out"]]
        argv += opt("--sigma", p.get("sigma"))
        argv += opt("--kernel", p.get("kernel"))
        argv += opt("--blur-sigma", p.get("blur_sigma"))
        argv += opt("--scale", p.get("scale"))
        argv += opt("--sr-kind", p.get("sr_kind"))
        argv += opt("--prior", p.get("prior"))
        argv += opt("--weights", p.get("weights"))
        argv += opt("--stages", p.get("stages"))
        argv += opt("--bank", p.get("bank"))
        argv += opt("--config", p.get("config"))
        argv += opt("--eta", p.get("eta"))
        argv += opt("--lambda", p.get("lambda"))
        argv += opt("--step", p.get("step"))
        argv += opt("--mix", p.get("mix"))
        argv += opt("--iters", p.get("iters"))
        argv += opt("--reference", p.get("reference"))
        argv += opt("--seed", seed)
        return argv
    if command == "eval":
        argv = ["eval", "--peak", str(p.get("peak", 1.0))]
        for ref, test in p.get("pairs", []):
            argv += ["--pair", ref, test]
        argv += opt("--csv", p.get("csv"))
        return argv
    if command == "dump-filters":
        return ["dump-filters", p["input"], "--stage", str(p.get("stage", 0)),
                "--out", p["out"]]
    if command == "oracle-cg":
        argv = ["oracle-cg", p["input"], "--mode", p["mode"], "--out", p["out"]]
        argv += opt("--sigma", p.get("sigma"))
        argv += opt("--kernel", p.get("kernel"))
        argv += opt("--blur-sigma", p.get("blur_sigma"))
        argv += opt("--scale", p.get("scale"))
        argv += opt("--sr-kind", p.get("sr_kind"))
        argv += opt("--bank", p.get("bank"))
        argv += opt("--config", p.get("config"))
        argv += opt("--eta", p.get("eta"))
        argv += opt("--tol", p.get("tol"))
        argv += opt("--max-iter", p.get("max_iter"))
        return argv
    return None


# ---------------------------------------------------------------------------
# argument parsing


def _add_operator_flags(sp) -> None:
    sp.add_argument("--sigma", type=float, default=0.0,
                    help="noise standard deviation on the 0..255 scale")
    sp.add_argument("--kernel", help="blur kernel file (single-filter bank format)")
    sp.add_argument("--blur-sigma", type=float, default=None,
                    help="generate a Gaussian kernel with this sigma instead")
    sp.add_argument("--scale", type=int, default=None,
                    help="integer downsampling factor")
    sp.add_argument("--sr-kind", choices=["bicubic", "gauss"], default="bicubic",
                    help="super-resolution operator kind")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sasc",
        description="Sparse analysis image restoration with nonlocal and "
                    "learned priors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="apply a degradation plus noise")
    p.add_argument("input")
    p.add_argument("--kind", required=True,
                   choices=["noise", "blur", "gauss-down", "bicubic-down"])
    _add_operator_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("restore", help="restore a degraded image")
    p.add_argument("input")
    p.add_argument("--mode", required=True, choices=["denoise", "deblur", "sr"])
    _add_operator_flags(p)
    p.add_argument("--prior", choices=list(solver.PRIOR_MODES), default=None)
    p.add_argument("--weights", help="prior network weight file")
    p.add_argument("--stages", help="stage parameter file (unrolled execution)")
    p.add_argument("--bank", help="analysis filter bank file")
    p.add_argument("--config", help="key=value solver config file")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--mix", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--reference", help="clean reference for metrics")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="PSNR/SSIM for reference/test pairs")
    p.add_argument("--pair", nargs=2, action="append", metavar=("REF", "TEST"))
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("--csv", help="also write results as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-filters", help="render a filter bank as a mosaic")
    p.add_argument("input", help="filter bank or stage parameter file")
    p.add_argument("--stage", type=int, default=0,
                   help="stage index when reading a stage file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_filters)

    p = sub.add_parser("oracle-cg",
                       help="exact data-consistency solve (debugging aid)")
    p.add_argument("input")
    p.add_argument("--mode", required=True, choices=["denoise", "deblur", "sr"])
    _add_operator_flags(p)
    p.add_argument("--bank", help="analysis filter bank file")
    p.add_argument("--config", help="key=value solver config file")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle_cg)

    p = sub.add_parser("replay", help="re-run a recorded manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", help="redirect outputs into this directory")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError,
            priornet.WeightFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
