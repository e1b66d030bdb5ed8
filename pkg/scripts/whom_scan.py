"""W_hom and its rank-one constant along a one-parameter family F(t) = I + t G."""

import argparse

import numpy as np

from homogelast import checks
from homogelast.homogenize import homogenized_point, rank_one_certificate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="smooth", choices=sorted(checks.MODELS))
    ap.add_argument("--direction", type=float, nargs=4, default=[0.0, 0.0, 1.0, 0.0],
                    help="G as G11 G12 G21 G22")
    ap.add_argument("--t-max", type=float, default=0.08)
    ap.add_argument("--steps", type=int, default=9)
    ap.add_argument("--grid-n", type=int, default=16)
    ap.add_argument("--cache", default="calibration")
    args = ap.parse_args()

    ctx = checks.Context(cache_dir=args.cache)
    m, cb = ctx.model(args.model), ctx.bound(args.model)
    G = np.array(args.direction).reshape(2, 2)
    print("t,w_hom,rank_one_c,max_dist_SO,route")
    for t in np.linspace(0.0, args.t_max, args.steps):
        p = homogenized_point(m, cb, np.eye(2) + t * G, args.grid_n)
        c = rank_one_certificate(p.d2w_hom)[0]
        print(f"{t:.6g},{p.w_hom:.10e},{c:.6e},{p.max_dist_SO:.4e},{p.solution.route}")


if __name__ == "__main__":
    main()
