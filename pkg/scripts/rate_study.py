"""Two-scale error study for a laminate; prints one row per eps and the fitted slopes."""

import argparse
import json

from homogelast import checks
from homogelast.macro import LoadData, error_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="layered", choices=sorted(checks.MODELS))
    ap.add_argument("--eps", type=float, nargs="+", default=[1 / 8, 1 / 16, 1 / 32, 1 / 64])
    ap.add_argument("--cells-per-period", type=int, default=16)
    ap.add_argument("--force", type=float, nargs=2, default=[0.0, -0.02])
    ap.add_argument("--cache", default="calibration")
    ap.add_argument("--json", help="write the full report here")
    args = ap.parse_args()

    ctx = checks.Context(cache_dir=args.cache)
    m, cb = ctx.model(args.model), ctx.bound(args.model)
    rep = error_study(m, cb, LoadData(force=tuple(args.force)), args.eps, args.cells_per_period,
                      progress=lambda r: print(f"eps={r['eps']:<8g} m={r['m']:<5d} "
                                               f"err_H1={r['err_H1']:.4e} err_L2={r['err_L2']:.4e}",
                                               flush=True))
    print(f"slope H1 {rep.slope_H1:.3f} (residual {rep.residual_H1:.2e}), "
          f"slope L2 {rep.slope_L2:.3f}, monotone {rep.monotone_H1()}, {rep.runtime:.0f} s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(checks._plain(rep.to_dict()), fh, indent=2)


if __name__ == "__main__":
    main()
