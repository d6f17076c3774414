"""Command-line front end: ``scle run | correlations | noise-check | convergence``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .correlation import build_kernels, omega_max_report
from .ensemble import requests_for, run_ensemble
from .errors import SCLEError
from .noise import PAIRS, build_noise_plan, empirical_correlation

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


def _fmt(x):
    return format(float(x), ".17g")


def _sibling(path, suffix):
    root, _ = os.path.splitext(path)
    return root + suffix


def _plan(cfg: RunConfig, grid=None):
    grid = cfg.grid() if grid is None else grid
    kernels = build_kernels(cfg.spectral_density(), cfg.beta, grid)
    nz = cfg["noise"]
    plan = build_noise_plan(kernels, nz["construction"], regularization=nz["regularization"],
                            zeta_split=nz["zeta_split"], clip_tolerance=nz["clip_tolerance"])
    return kernels, plan


def write_result_csv(path, result):
    """Columns t, then Re_/Im_/stderr_ for each observable, 17 significant digits."""
    t = result.grid.times()
    header = ["t"]
    for nm in result.names:
        header += [f"Re_{nm}", f"Im_{nm}", f"stderr_{nm}"]
    se = result.stderr
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for j in range(t.size):
            row = [_fmt(t[j])]
            for k in range(len(result.names)):
                row += [_fmt(result.mean[k, j].real), _fmt(result.mean[k, j].imag),
                        _fmt(se[k, j])]
            w.writerow(row)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def cmd_run(cfg: RunConfig, workers=None, resume=False, stop_after=None):
    workers = workers or os.cpu_count() or 1
    grid = cfg.grid()
    kernels, plan = _plan(cfg, grid)
    model = cfg.model()
    requests = requests_for(model, cfg["observables"])
    out = cfg["output_path"]
    ckpt = _sibling(out, ".ckpt")
    every = cfg.data.get("checkpoint_every")
    res = run_ensemble(
        model, plan, cfg["trajectories"], cfg["master_seed"], requests,
        workers=workers, chunk_size=cfg["chunk_size"], batch_size=cfg["batch_size"],
        checkpoint_path=ckpt, checkpoint_every=every // cfg["chunk_size"] if every else None,
        resume=resume, stop_after=stop_after, run_id=cfg.run_id(),
    )
    if not res.complete:
        print(f"stopped after {res.count + res.rejected} trajectories; checkpoint at {ckpt}")
        return EXIT_OK
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_result_csv(out, res)
    meta = {
        "version": __version__,
        "config": cfg.data,
        "run_id": cfg.run_id(),
        "counts": {"accepted": res.count, "rejected": res.rejected},
        "kernel": {"beta": cfg.beta, "omega_max": kernels.spec.omega_max,
                   "n_half_points": grid.n_half},
        "noise": {"construction": plan.construction, "pad_length": plan.pad_length,
                  "diagnostics": plan.diagnostics},
        "model_params": model.params,
    }
    with open(_sibling(out, ".meta.json"), "w") as fh:
        json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if resume and os.path.exists(ckpt):
        os.remove(ckpt)
    print(f"wrote {out} ({res.count} trajectories, {res.rejected} rejected)")
    return EXIT_OK


def cmd_correlations(cfg: RunConfig, output=None):
    grid = cfg.grid()
    k = build_kernels(cfg.spectral_density(), cfg.beta, grid)
    path = output or _sibling(cfg["output_path"], "_kernels.csv")
    fh = sys.stdout if path == "-" else open(path, "w", newline="")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "Re_alpha", "Im_alpha", "Re_alphaT", "Im_alphaT",
                    "Re_alphaTilde", "Im_alphaTilde"])
        for j, t in enumerate(grid.lags()):
            w.writerow([_fmt(t), _fmt(k.alpha[j].real), _fmt(k.alpha[j].imag),
                        _fmt(k.alpha_T[j].real), _fmt(k.alpha_T[j].imag),
                        _fmt(k.alpha_tilde[j].real), _fmt(k.alpha_tilde[j].imag)])
    finally:
        if fh is not sys.stdout:
            fh.close()
            print(f"wrote {path}")
    return EXIT_OK


def cmd_noise_check(cfg: RunConfig, n_samples, output=None, n_probe=200, threshold=5.0):
    """Empirical 5-sigma test of every contracted kernel; nonzero exit on failure."""
    _, plan = _plan(cfg)
    rep = empirical_correlation((plan, cfg["master_seed"], n_samples), PAIRS,
                                n_probe=n_probe, threshold=threshold)
    path = output or _sibling(cfg["output_path"], "_noise_check.csv")
    probe = rep.probe
    lag = (probe[:, None] - probe[None, :]) * rep.lag_step
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kernel", "t", "s", "tau", "Re_target", "Im_target", "Re_estimate",
                    "Im_estimate", "stderr_re", "stderr_im", "z_re", "z_im"])
        tt = probe * rep.lag_step
        for pair in PAIRS:
            r = rep.rows[pair]
            for i in range(probe.size):
                for j in range(probe.size):
                    w.writerow([pair, _fmt(tt[i]), _fmt(tt[j]), _fmt(lag[i, j]),
                                _fmt(r["target"][i, j].real), _fmt(r["target"][i, j].imag),
                                _fmt(r["mean"][i, j].real), _fmt(r["mean"][i, j].imag),
                                _fmt(r["se_re"][i, j]), _fmt(r["se_im"][i, j]),
                                _fmt(r["z_re"][i, j]), _fmt(r["z_im"][i, j])])
    ok = True
    for pair in PAIRS:
        good = rep.passed(pair)
        ok &= good
        print(f"{pair:9s} max|z| = {rep.max_abs_z(pair):6.3f}  {'PASS' if good else 'FAIL'}")
    print(f"{'PASS' if ok else 'FAIL'} ({rep.samples} samples, {probe.size}x{probe.size} probes)"
          f"; report {path}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_convergence(cfg: RunConfig):
    rows = omega_max_report(cfg.spectral_density(), cfg.beta, cfg.grid())
    print("ratio,omega_max,Re_alphaT0,max_abs_change,max_abs_change_t_ge_1")
    for r in rows:
        print(",".join([str(r["ratio"]), _fmt(r["omega_max"]), _fmt(r["re_alphaT0"]),
                        _fmt(r["max_abs_change"]), _fmt(r["max_abs_change_t_ge_1"])]))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="scle", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a trajectory ensemble")
    r.add_argument("--config", required=True)
    r.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: available cores)")
    r.add_argument("--seed", type=int, default=None, help="override master_seed")
    r.add_argument("--resume", action="store_true", help="continue from the checkpoint")
    r.add_argument("--stop-after", type=int, default=None, metavar="CHUNKS",
                   help="stop with a checkpoint after this many chunks")

    c = sub.add_parser("correlations", help="dump the kernel table as CSV")
    c.add_argument("--config", required=True)
    c.add_argument("--output", default=None, help="CSV path, '-' for stdout")

    n = sub.add_parser("noise-check", help="empirical test of the noise kernels")
    n.add_argument("--config", required=True)
    n.add_argument("--samples", type=int, required=True)
    n.add_argument("--probe", type=int, default=200, help="probe points per time axis")
    n.add_argument("--output", default=None)

    v = sub.add_parser("convergence", help="sensitivity of the kernels to omega_max")
    v.add_argument("--config", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "run":
            if args.seed is not None:
                cfg = cfg.with_seed(args.seed)
            return cmd_run(cfg, args.workers, args.resume, args.stop_after)
        if args.command == "correlations":
            return cmd_correlations(cfg, args.output)
        if args.command == "noise-check":
            return cmd_noise_check(cfg, args.samples, args.output, args.probe)
        return cmd_convergence(cfg)
    except OSError as exc:
        print(f"error: [cli] {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SCLEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ValueError) else EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
