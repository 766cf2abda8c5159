"""Compare the compiled batch kernel against the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py [--n 2000] [--repeat 3]``.
Prints wall time per backend, the speed-up and the largest state difference.
"""

import argparse
import time

import numpy as np

from approx import kernels
from approx.dynsys import SWEEP, Domain
from approx.sampling import sample_unit
from approx.zoo import RadialCycleField, cos_perturbation, double_well, make_perturbed


def _cases(n, seed):
    u = sample_unit(n, 2, seed)
    dw = make_perturbed(double_well(), cos_perturbation(), 0.1)
    x1 = (4 * u[:, :1] - 2)
    cyc = RadialCycleField(kappa=1.0, omega=1.0)
    x2 = 3 * u - 1.5
    return [
        ("double-well 1-D", dw, x1, Domain((-2.5,), (2.5,))),
        ("planar cycle", cyc, x2, Domain((-5.0, -5.0), (5.0, 5.0))),
    ]


def _time(field, X, grid, dom, backend, repeat):
    best, res = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = kernels.batch_grid(field, X, grid, SWEEP, dom, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, res


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--t-end", type=float, default=20.0)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if kernels._batch_c is None:
        print("compiled kernel not built; only the Python backend is available")
    grid = np.linspace(0.0, args.t_end, 33)
    print(f"{'case':<18}{'backend':<9}{'seconds':>10}{'speed-up':>10}{'max |diff|':>13}")
    for name, field, X, dom in _cases(args.n, args.seed):
        tp, rp = _time(field, X, grid, dom, "python", args.repeat)
        print(f"{name:<18}{'python':<9}{tp:>10.3f}{'1.0':>10}{'':>13}")
        if kernels._batch_c is None:
            continue
        tc, rc = _time(field, X, grid, dom, "cython", args.repeat)
        diff = float(np.max(np.abs(rc.states - rp.states)))
        print(f"{name:<18}{'cython':<9}{tc:>10.3f}{tp / tc:>10.1f}{diff:>13.2e}")


if __name__ == "__main__":
    main()
