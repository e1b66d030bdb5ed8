"""Command line entry point ``homogelast``."""

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import checks
from . import tensor as T
from .cell import solve_corrector, solve_flux_corrector
from .config import ConfigError, ExperimentConfig
from .convexify import CalibrationError, CalibrationRecord, bound_from_record, build_bound, calibrate
from .fem import PeriodicGrid
from .homogenize import homogenized_point, rank_one_certificate, trust_radius
from .layered import solve_layered
from .macro import LoadData, error_study

log = logging.getLogger("homogelast")


def _fmt(x):
    return f"{x:.17g}"


def _header(cfg, rec):
    snap = json.loads(rec.to_json()) if rec is not None else {}
    snap.pop("margins", None)
    return [f"# config_sha256={cfg.digest()}", f"# calibration={json.dumps(snap, sort_keys=True)}"]


def _write_csv(path, cols, rows, header):
    with open(path, "w") as fh:
        for line in header:
            fh.write(line + "\n")
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in r) + "\n")


def _write_json(path, obj, cfg, rec):
    obj = dict(obj)
    obj["config_sha256"] = cfg.digest()
    obj["config"] = cfg.to_dict()
    obj["calibration"] = None if rec is None else json.loads(rec.to_json())
    with open(path, "w") as fh:
        json.dump(checks._plain(obj), fh, indent=2, sort_keys=True)


def _bound(cfg, model, out):
    """Calibrated bound from ``calibration_file`` or a fresh calibration (saved to ``out``)."""
    path = cfg.calibration_file
    if path and os.path.exists(path):
        with open(path) as fh:
            rec = CalibrationRecord.from_json(fh.read())
        return bound_from_record(model, rec)
    rec = calibrate(model, cfg.mu_grid, cfg.delta_grid, seed=cfg.seed, lambda_floor=cfg.lambda_floor)
    cb = build_bound(model, rec)
    with open(os.path.join(out, "calibration.json"), "w") as fh:
        fh.write(rec.to_json())
    return cb


def _load(cfg):
    return LoadData(force=tuple(cfg.force), strain=tuple(map(tuple, cfg.boundary_strain)))


# -- subcommands ---------------------------------------------------------------

def cmd_calibrate(cfg, args):
    model = cfg.density.build()
    t0 = time.time()
    rec = calibrate(model, cfg.mu_grid, cfg.delta_grid, seed=cfg.seed, lambda_floor=cfg.lambda_floor)
    cb = build_bound(model, rec)
    rec.margins["trust_radius"] = trust_radius(model, cb, n=min(cfg.grid_n, 16), seed=cfg.seed)
    with open(os.path.join(args.out, "calibration.json"), "w") as fh:
        fh.write(rec.to_json())
    print(json.dumps({"mu": rec.mu, "delta": rec.delta, "lambda": rec.lam,
                      "trust_radius": rec.margins["trust_radius"], "seconds": time.time() - t0}))
    return 0


def cmd_verify(cfg, args):
    ctx = checks.Context(cache_dir=args.out, seed=cfg.seed)
    model = cfg.density.build()
    slot = "layered" if cfg.density.kind == "layered" else "smooth"
    ctx._models[slot] = model
    try:
        rec = calibrate(model, cfg.mu_grid, cfg.delta_grid, seed=cfg.seed, lambda_floor=cfg.lambda_floor)
    except CalibrationError as exc:
        _write_json(os.path.join(args.out, "verify.json"),
                    {"passed": False, "error": str(exc), "margins": exc.margins}, cfg, None)
        print(json.dumps({"passed": False, "error": str(exc)}))
        return 1
    ctx._bounds[slot] = build_bound(model, rec)
    n = cfg.grid_n
    overrides = {
        1: {"n": n},
        2: {"n": n, "k_list": tuple(cfg.k_list), "n_starts": cfg.n_starts, "radius": cfg.strain_radius,
            "n_per_model": cfg.n_samples, "seed": cfg.seed, "amplitude": cfg.amplitude},
        9: {"eps_list": tuple(cfg.eps_list), "cells_per_period": cfg.cells_per_period, "load": _load(cfg)},
    }
    only = set(args.only) if args.only else None
    results = checks.run_all(ctx, only=only, overrides=overrides)
    for r in results:
        print(r.line(), file=sys.stderr)
    ok = all(r.passed for r in results)
    _write_json(os.path.join(args.out, "verify.json"),
                {"passed": ok, "checks": [r.to_dict() for r in results]}, cfg, rec)
    print(json.dumps({"passed": ok, "failed": [r.criterion for r in results if not r.passed]}))
    return 0 if ok else 1


def _scan_points(cfg):
    rng = np.random.default_rng(cfg.seed)
    base = [np.zeros((2, 2))]
    base += list(checks.sample_strained(rng, cfg.n_samples, cfg.strain_radius))
    out = []
    thetas = 2 * np.pi * np.arange(cfg.theta_count) / cfg.theta_count
    for j, F0 in enumerate(base):
        # F0 holds R (I + S); strip the rotation so that rows pair across theta
        E0 = np.zeros((2, 2)) if j == 0 else T.polar_rotation(F0).T @ F0 - np.eye(2)
        for th in thetas:
            R = T.rotation(th)
            out.append((th, R @ E0, R + R @ E0))
    return out


def cmd_whom_scan(cfg, args):
    model = cfg.density.build()
    cb = _bound(cfg, model, args.out)
    pts = _scan_points(cfg)

    def one(item):
        th, E, F = item
        p = homogenized_point(model, cb, F, PeriodicGrid(cfg.grid_n, args.k))
        c = rank_one_certificate(p.d2w_hom)[0]
        print(f"theta={th:.4f} |E|={T.frob(E):.4f} w_hom={p.w_hom:.6e} c={c:.4e}", file=sys.stderr)
        return (th, E[0, 0], E[0, 1], E[1, 0], E[1, 1], p.w_hom, c, cfg.grid_n)

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as ex:
        rows = list(ex.map(one, pts))
    _write_csv(os.path.join(args.out, "whom.csv"),
               ["theta", "e11", "e12", "e21", "e22", "w_hom", "rank_one_c", "grid_n"], rows,
               _header(cfg, cb.record))
    print(json.dumps({"rows": len(rows), "min_rank_one_c": min(r[6] for r in rows)}))
    return 0


def cmd_rate_study(cfg, args):
    model = cfg.density.build()
    cb = _bound(cfg, model, args.out)
    rep = error_study(model, cb, _load(cfg), tuple(cfg.eps_list), cells_per_period=cfg.cells_per_period,
                      progress=lambda r: print(f"eps={r['eps']:g} err_H1={r['err_H1']:.6e} "
                                               f"err_L2={r['err_L2']:.6e}", file=sys.stderr))
    rows = [(r["eps"], r["err_L2"], r["err_H1"], r["energy_eps"], r["energy_hom"], r["lambda"])
            for r in rep.rows]
    _write_csv(os.path.join(args.out, "report.csv"),
               ["eps", "err_L2", "err_H1", "energy_eps", "energy_hom", "lambda"], rows,
               _header(cfg, cb.record))
    _write_json(os.path.join(args.out, "report.json"),
                {"slope_H1": rep.slope_H1, "slope_L2": rep.slope_L2, "residual_H1": rep.residual_H1,
                 "residual_L2": rep.residual_L2, "monotone_H1": rep.monotone_H1(),
                 "complete": rep.complete, "runtime_s": rep.runtime, "eps_list": list(cfg.eps_list),
                 "rows": rep.rows}, cfg, cb.record)
    print(json.dumps({"slope_H1": rep.slope_H1, "slope_L2": rep.slope_L2, "complete": rep.complete}))
    return 0 if rep.complete else 1


def cmd_corrector(cfg, args):
    model = cfg.density.build()
    cb = _bound(cfg, model, args.out)
    F = np.asarray(cfg.corrector_F, dtype=float)
    sol = solve_flux_corrector(solve_corrector(model, cb, F, PeriodicGrid(cfg.grid_n, args.k)))
    stem = os.path.join(args.out, "corrector")
    sol.export(stem)
    print(json.dumps(sol.diagnostics()))
    return 0


def cmd_layered(cfg, args):
    model = cfg.density.build()
    if model.kind != "layered":
        raise ConfigError("density.kind: the layered subcommand needs a layered density")
    cb = _bound(cfg, model, args.out)
    F = np.asarray(cfg.corrector_F, dtype=float)
    lc = solve_layered(model, F, cb.mu)
    y = np.linspace(0, 1, 8 * cfg.grid_n + 1)
    phi = lc.phi(y)
    _write_csv(os.path.join(args.out, "layered.csv"), ["y1", "phi_1", "phi_2"],
               [(a, b, c) for a, (b, c) in zip(y, phi)], _header(cfg, cb.record))
    _write_json(os.path.join(args.out, "layered.json"),
                {"F": F, "slopes": lc.slopes, "offsets": lc.offsets, "normal_flux": lc.normal_flux,
                 "flux_residual": lc.flux_residual, "residual": lc.residual, "w_hom": lc.w_hom},
                cfg, cb.record)
    print(json.dumps({"w_hom": lc.w_hom, "flux_residual": lc.flux_residual}))
    return 0


COMMANDS = {"verify": cmd_verify, "whom-scan": cmd_whom_scan, "rate-study": cmd_rate_study,
            "corrector": cmd_corrector, "layered": cmd_layered, "calibrate": cmd_calibrate}


def build_parser():
    ap = argparse.ArgumentParser(prog="homogelast", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI or JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (default: config value)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--grid-n", type=int, default=None, dest="grid_n")
        p.add_argument("--k", type=int, default=1, help="cell multiplicity")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            p.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.grid_n is not None:
            cfg.grid_n = args.grid_n
        cfg.validate()
    except (ConfigError, OSError) as exc:
        ap.error(str(exc))
    args.out = args.out or cfg.out
    os.makedirs(args.out, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        ap.error(str(exc))
    except CalibrationError as exc:
        print(json.dumps({"error": str(exc)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
