"""Lambda scan on a small 2D problem, printed as a table.

    python3 scripts/scan_demo.py [--n 17] [--lambdas 0 25 50 100 200 400 800]

Shows the minimum energy switching from zero to negative as lambda grows,
and the mountain-pass level of the second solution once it exists.
"""

import argparse

from varexp.energy import ProblemParams
from varexp.grid import build_grid
from varexp.lebesgue import ExponentField
from varexp.operators import MODELS
from varexp.solver import scan_lambda


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=17, help="nodes per axis")
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0, 25, 50, 100, 200, 400, 800])
    ap.add_argument("--operator", choices=sorted(MODELS), default="plaplace")
    args = ap.parse_args()

    grid = build_grid(2, [args.n, args.n], [1.0, 1.0])
    p = ExponentField.affine(grid, 0, 2.0, 2.4)
    params = ProblemParams(args.lambdas[0], 1.3, 1.7, MODELS[args.operator](p), p, grid)
    res = scan_lambda(params, args.lambdas, tol=1e-8, max_iter=1000, hypothesis_samples=2_000)

    print(f"{'lambda':>8} {'status':>16} {'I(u1)':>14} {'I(u2)':>12} {'max u1':>9} {'max u2':>9}")
    for r in res.rows:
        mu2 = f"{r.u2.values.max():9.4f}" if r.u2 is not None else f"{'-':>9}"
        print(f"{r.lam:8g} {r.status:>16} {r.I_u1:14.6g} {r.I_u2:12.6g} {r.u1.values.max():9.4f} {mu2}")
    print(f"lambda* bracket: {res.bracket}   concavity violations: {len(res.concavity_violations)}")


if __name__ == "__main__":
    main()
