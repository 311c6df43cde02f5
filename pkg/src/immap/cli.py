"""``immap`` command-line tool.

Subcommands: ``simulate``, ``recon``, ``eval``, ``sweep`` and ``export-png``.
Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 numerical failure.

Seeds: everything random derives from one integer seed through
:func:`immap.core.child_seed`.  An acquisition with seed ``s`` draws its coil
maps from ``child_seed(s, 1)``, its mask from ``child_seed(s, 2)`` and its
noise from ``child_seed(s, 3)``.  A sweep cell at acceleration ``R`` and noise
level ``sigma`` uses the acquisition seed
``child_seed(s, round(1000 R), round(1e6 sigma))`` and the solver seed
``child_seed(cell_seed, 4)``.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .baselines import cg_sense
from .config import ConfigError, load_config, resolve_config, solver_config
from .container import ContainerError, read_imrd, write_imrd
from .core import NumericalError, child_seed
from .denoisers import GaussianDenoiser, make_denoiser
from .estimators import normalization_scale
from .metrics import nrmse, psnr, ssim
from .operators import EncodingOperator, NoiseModel, SamplingMask, ifft2c
from .simulation import (
    AcquisitionSpec,
    cartesian_mask,
    estimate_noise_cov,
    shepp_logan,
    simulate_acquisition,
    synth_sensitivities,
)
from .solver import immap_reconstruct, prior_sample

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3

SEED_MAPS, SEED_MASK, SEED_NOISE, SEED_SOLVER = 1, 2, 3, 4
METHODS = ("immap", "sense", "zerofill", "prior-sample")
METRICS = ("nrmse", "psnr", "ssim")
SWEEP_FIELDS = (
    "accel", "noise_sigma", "method", "status", "nrmse", "psnr", "ssim", "ssim100",
    "n_iter", "achieved_accel", "data_seed", "solver_seed", "message",
)  # fmt: skip


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- simulate


def simulate_container(spec):
    """Simulate one acquisition; returns ``(arrays, metadata)``."""
    seeds = {
        "maps": child_seed(spec.seed, SEED_MAPS),
        "mask": child_seed(spec.seed, SEED_MASK),
        "noise": child_seed(spec.seed, SEED_NOISE),
    }
    x = shepp_logan(spec.size, phase=spec.phase)
    maps = synth_sensitivities(spec.size, spec.coils, seeds["maps"])
    mask = cartesian_mask(spec.size, spec.accel, spec.acs_lines, spec.scheme, seeds["mask"])
    y = simulate_acquisition(x, maps, mask, spec.noise_sigma, seeds["noise"])
    arrays = {
        "ground_truth": x,
        "maps": maps,
        "mask": mask.keep.astype(np.uint8),
        "kspace": y,
        "noise_var": np.full(y.shape, spec.noise_sigma ** 2),
    }
    meta = {
        "kind": "acquisition",
        "phantom": "shepp-logan",
        **spec.to_dict(),
        "R": mask.acceleration,
        "sigma": spec.noise_sigma,
        "seeds": seeds,
    }
    return arrays, meta


def cmd_simulate(args):
    spec = AcquisitionSpec(
        size=args.size,
        coils=args.coils,
        accel=args.accel,
        acs_lines=args.acs_lines,
        scheme=args.scheme,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
        phase=args.phase,
    )
    arrays, meta = simulate_container(spec)
    write_imrd(args.out, arrays, meta)
    _info(f"wrote {args.out}: R={meta['R']:.4g} sigma={meta['sigma']:g}")
    return EXIT_OK


# ---------------------------------------------------------------- recon


def _acquisition(data):
    try:
        maps = data["maps"].astype(np.complex128)
        mask = SamplingMask(data["mask"].astype(bool))
        y = data["kspace"].astype(np.complex128)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    enc = EncodingOperator(maps, mask)
    if y.shape != enc.kspace_shape:
        raise UsageError(f"k-space shape {y.shape} does not match maps and mask {enc.kspace_shape}")
    return enc, y


def _noise_model(data, enc, y, cfg, scale):
    floor = cfg["data"]["noise_floor"] ** 2
    if cfg["data"]["noise"] == "estimate":
        full = np.zeros((enc.n_coils, enc.mask.n_pixels), dtype=np.complex128)
        full[:, enc.mask.indices] = y * scale
        coil_images = ifft2c(full.reshape(enc.n_coils, *enc.image_shape))
        est = estimate_noise_cov(coil_images, enc.mask.n_samples, scale=math.sqrt(enc.mask.acceleration))
        var = np.zeros(enc.kspace_shape) if est is None else est.variance
    else:
        if "noise_var" not in data:
            raise UsageError("container has no noise_var; set data.noise = \"estimate\"")
        var = data["noise_var"].astype(np.float64) * scale ** 2
    return NoiseModel(np.maximum(var, floor))


def _build_denoiser(prior, enc=None, y=None, noise=None, sense_cfg=None):
    params = {k: v for k, v in prior.items() if k != "name"}
    if prior["name"] != "gaussian":
        return make_denoiser(prior["name"], **params)
    mean = params["mean"]
    if mean == "zero":
        mean = 0.0
    elif mean in ("zero-filled", "sense"):
        if enc is None:
            raise UsageError(f"gaussian prior mean {mean!r} needs measurements")
        if mean == "zero-filled":
            mean = enc.adjoint(y)
        else:
            mean = cg_sense(y, enc, noise=noise, lam=sense_cfg["lam"], tol=sense_cfg["tol"], max_iter=sense_cfg["max_iter"])
    return GaussianDenoiser(mean=mean, variance=params["variance"])


def run_recon(method, cfg, data):
    """Reconstruct from a loaded container; returns ``(image, trace, info)``."""
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}")
    if method == "prior-sample":
        shape = tuple(data["ground_truth"].shape) if data is not None and "ground_truth" in data else tuple(cfg["data"]["shape"])
        z, trace = prior_sample(_build_denoiser(cfg["prior"]), solver_config(cfg), shape)
        return z, trace, {"normalization_scale": 1.0}
    if data is None:
        raise UsageError(f"method {method!r} needs an input container")
    enc, y = _acquisition(data)
    if method == "zerofill":
        return enc.adjoint(y), None, {"normalization_scale": 1.0}
    scale = normalization_scale(y, enc, cfg["data"]["normalization"])
    yn = y * scale
    noise = _noise_model(data, enc, y, cfg, scale)
    info = {"normalization_scale": scale}
    if method == "sense":
        s = cfg["sense"]
        x = cg_sense(yn, enc, noise=noise, lam=s["lam"], tol=s["tol"], max_iter=s["max_iter"])
        return x / scale, None, info
    denoiser = _build_denoiser(cfg["prior"], enc, yn, noise, cfg["sense"])
    z, trace = immap_reconstruct(yn, enc, None, noise, denoiser, solver_config(cfg))
    return z / scale, trace, info


def _with_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        raw = json.loads(json.dumps(cfg))
        raw["solver"]["seed"] = args.seed
        cfg = resolve_config(raw)
    return cfg


def cmd_recon(args):
    cfg = _with_overrides(load_config(args.config), args)
    in_path = args.input or cfg["data"]["input"] or None
    data = read_imrd(in_path) if in_path else None
    if in_path:
        cfg["data"]["input"] = str(in_path)
    image, trace, info = run_recon(args.method, cfg, data)
    meta = {
        "kind": "reconstruction",
        "method": args.method,
        "config": cfg,
        **info,
        "source": data.metadata if data is not None else {},
    }
    if trace is not None:
        meta.update(n_iter=len(trace), converged=trace.converged)
        trace_path = args.trace or os.path.splitext(args.out)[0] + ".trace.csv"
        trace.write_csv(trace_path)
    write_imrd(args.out, {"reconstruction": image}, meta)
    _info(f"wrote {args.out}" + (f" ({len(trace)} iterations)" if trace is not None else ""))
    return EXIT_OK


# ---------------------------------------------------------------- eval


def metric_report(ref, est, which=METRICS, complex_valued=False):
    """Metric dict for the report formats; infinite PSNR is reported as null."""
    ref = np.asarray(ref)
    est = np.asarray(est)
    if ref.shape != est.shape:
        raise UsageError(f"shape mismatch: reference {ref.shape}, estimate {est.shape}")
    out = {}
    for name in which:
        if name == "nrmse":
            out["nrmse"] = nrmse(ref, est, complex_valued=complex_valued)
        elif name == "psnr":
            val = psnr(ref, est)
            out["psnr"] = val if math.isfinite(val) else None
        elif name == "ssim":
            out["ssim"] = ssim(ref, est)
            out["ssim100"] = 100.0 * out["ssim"]
        else:
            raise UsageError(f"unknown metric {name!r}")
    return out


def _field(data, name):
    try:
        return data[name]
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None


def cmd_eval(args):
    ref = _field(read_imrd(args.ref), args.ref_field)
    est = _field(read_imrd(args.est), args.est_field)
    report = metric_report(ref, est, args.metrics, complex_valued=args.complex)
    if args.format == "json":
        text = json.dumps(report, indent=2, allow_nan=False) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(report), lineterminator="\n")
        writer.writeheader()
        writer.writerow({k: "" if v is None else repr(v) for k, v in report.items()})
        text = buf.getvalue()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- sweep


def cell_seeds(seed, accel, sigma):
    data_seed = child_seed(seed, round(1000 * accel), round(1e6 * sigma))
    return data_seed, child_seed(data_seed, SEED_SOLVER)


def _tag(accel, sigma):
    return f"R{accel:g}_s{sigma:g}"


def _run_cell(task):
    """One (R, sigma) acquisition reconstructed by every method; returns CSV rows."""
    accel, sigma, methods, base, cfg, out_dir = task
    data_seed, solver_seed = cell_seeds(base["seed"], accel, sigma)
    spec = AcquisitionSpec(size=base["size"], coils=base["coils"], accel=accel, noise_sigma=sigma, seed=data_seed)
    arrays, meta = simulate_container(spec)
    data_path = os.path.join(out_dir, f"data_{_tag(accel, sigma)}.imrd")
    write_imrd(data_path, arrays, meta)
    data = read_imrd(data_path)
    raw = json.loads(json.dumps(cfg))
    raw["solver"]["seed"] = solver_seed
    raw["data"]["input"] = data_path
    cell_cfg = resolve_config(raw)
    rows = []
    for method in methods:
        row = {
            "accel": accel, "noise_sigma": sigma, "method": method, "status": "ok",
            "achieved_accel": meta["R"], "data_seed": data_seed, "solver_seed": solver_seed,
            "message": "", "n_iter": "",
        }  # fmt: skip
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                image, trace, info = run_recon(method, cell_cfg, data)
            out_meta = {"kind": "reconstruction", "method": method, "config": cell_cfg, **info, "source": meta}
            if trace is not None:
                row["n_iter"] = len(trace)
                out_meta.update(n_iter=len(trace), converged=trace.converged)
            rec_path = os.path.join(out_dir, f"recon_{_tag(accel, sigma)}_{method}.imrd")
            write_imrd(rec_path, {"reconstruction": image}, out_meta)
            # score the stored (single-precision) arrays so the row matches `immap eval`
            row.update(metric_report(data["ground_truth"], read_imrd(rec_path)["reconstruction"]))
        except NumericalError as exc:
            row.update(status="numerical-error", message=str(exc))
        except Exception as exc:  # a failed cell must not stop the sweep
            row.update(status="error", message=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


def run_sweep(accels, sigmas, methods, base, cfg, out_dir, workers=1):
    os.makedirs(out_dir, exist_ok=True)
    tasks = [(float(r), float(s), tuple(methods), base, cfg, out_dir) for r in accels for s in sigmas]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    rows = [row for cell in results for row in cell]
    path = os.path.join(out_dir, "results.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row.get(k, "")) for k in SWEEP_FIELDS})
    return rows, path


def _csv_value(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else v


def cmd_sweep(args):
    cfg = load_config(args.config)
    for m in args.methods:
        if m not in METHODS or m == "prior-sample":
            raise UsageError(f"sweep method must be one of immap, sense, zerofill; got {m!r}")
    base = {"seed": args.seed, "size": args.size, "coils": args.coils}
    rows, path = run_sweep(args.accel, args.noise_sigma, args.methods, base, cfg, args.out_dir, args.workers)
    bad = sum(r["status"] != "ok" for r in rows)
    _info(f"wrote {path}: {len(rows)} rows, {bad} failed")
    return EXIT_OK


# ---------------------------------------------------------------- export-png


def to_uint16(img, window=None):
    """Map magnitudes linearly from ``window = (lo, hi)`` onto 0..65535.

    The default window is ``[0, max |img|]``; an all-zero image maps to black.
    """
    mag = np.abs(np.asarray(img)).astype(np.float64)
    lo, hi = (0.0, float(mag.max(initial=0.0))) if window is None else map(float, window)
    if hi <= lo:
        return np.zeros(mag.shape, dtype=np.uint16)
    scaled = np.clip((mag - lo) / (hi - lo), 0.0, 1.0)
    return np.round(scaled * 65535.0).astype(np.uint16)


def write_png16(path, arr):
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint16)).save(path, format="PNG")


def cmd_export_png(args):
    img = _field(read_imrd(args.input), args.field)
    if img.ndim != 2:
        raise UsageError(f"field {args.field!r} has shape {img.shape}; expected a 2D image")
    window = args.window
    if args.error_ref:
        ref = _field(read_imrd(args.error_ref), args.error_ref_field)
        if ref.shape != img.shape:
            raise UsageError(f"error reference shape {ref.shape} does not match {img.shape}")
        img = np.abs(img.astype(np.complex128) - ref)
        if window is None:
            # error maps share the reference's intensity scale
            window = (0.0, float(np.abs(ref).max(initial=0.0)))
    write_png16(args.out, to_uint16(img, window))
    return EXIT_OK


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="immap", description="Multicoil MRI reconstruction by stochastic MAP ascent.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a phantom acquisition")
    s.add_argument("--phantom", choices=["shepp-logan"], default="shepp-logan")
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--coils", type=int, default=8)
    s.add_argument("--accel", type=float, default=4.0)
    s.add_argument("--acs-lines", type=int, default=None, help="default: 6%% of lines")
    s.add_argument("--scheme", choices=["uniform", "random-lines"], default="uniform")
    s.add_argument("--noise-sigma", type=float, default=0.05)
    s.add_argument("--phase", action="store_true", help="add a smooth quadratic phase")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("recon", help="reconstruct a container")
    r.add_argument("method", choices=METHODS)
    r.add_argument("-i", "--input", help="input container (or data.input in the config)")
    r.add_argument("-c", "--config", help="TOML run configuration")
    r.add_argument("--seed", type=int, default=None, help="override solver.seed")
    r.add_argument("-o", "--out", required=True)
    r.add_argument("--trace", help="iteration trace CSV (default: <out>.trace.csv)")
    r.set_defaults(func=cmd_recon)

    e = sub.add_parser("eval", help="compare an estimate with a reference")
    e.add_argument("ref")
    e.add_argument("est")
    e.add_argument("--ref-field", default="ground_truth")
    e.add_argument("--est-field", default="reconstruction")
    e.add_argument("--metrics", nargs="+", choices=METRICS, default=list(METRICS))
    e.add_argument("--complex", action="store_true", help="phase-aligned complex NRMSE")
    e.add_argument("--format", choices=["json", "csv"], default="json")
    e.add_argument("-o", "--out")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="grid over acceleration, noise level and method")
    w.add_argument("--accel", type=float, nargs="+", default=[4.0, 8.0])
    w.add_argument("--noise-sigma", type=float, nargs="+", default=[0.05])
    w.add_argument("--methods", nargs="+", default=["zerofill", "sense", "immap"])
    w.add_argument("--size", type=int, default=64)
    w.add_argument("--coils", type=int, default=8)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("-c", "--config", help="TOML run configuration shared by all cells")
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--out-dir", required=True)
    w.set_defaults(func=cmd_sweep)

    x = sub.add_parser("export-png", help="write a 16-bit grayscale magnitude PNG")
    x.add_argument("input")
    x.add_argument("--field", default="reconstruction")
    x.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"), help="default: [0, max]")
    x.add_argument("--error-ref", help="container holding a reference; exports |field - reference|")
    x.add_argument("--error-ref-field", default="ground_truth")
    x.add_argument("-o", "--out", required=True)
    x.set_defaults(func=cmd_export_png)
    return p


def _info(msg):
    print(msg, file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ContainerError, OSError) as exc:
        _info(f"immap: I/O error: {exc}")
        return EXIT_IO
    except NumericalError as exc:
        _info(f"immap: numerical error: {exc}")
        return EXIT_NUMERICAL
    except (ConfigError, UsageError, ValueError, KeyError, TypeError) as exc:
        _info(f"immap: error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
