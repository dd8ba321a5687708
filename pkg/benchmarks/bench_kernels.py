"""Compare the compiled and pure-Python kernel backends.

Run with ``python benchmarks/bench_kernels.py``. Prints the median time of
each kernel for both backends, the speed-up and the largest difference
between their outputs.
"""
import argparse
import statistics
import time

import numpy as np

from gunshape import _kernels_py
from gunshape.iga.fields import FieldmapData, FieldmapGrid
from gunshape.tracking import FieldMap

try:
    from gunshape import _kernels
except ImportError:
    _kernels = None


def _cases(rng, scale):
    knots = np.r_[np.zeros(3), np.linspace(0, 1, 17)[1:-1], np.ones(3)]
    xs = rng.random(2000 * scale)
    grads = rng.standard_normal((200 * scale, 16, 16, 2))
    weights = rng.random((200 * scale, 16))

    nz, nr = 121, 21
    grid = FieldmapGrid(nz, nr, 0.0, 0.12, 0.0, 0.01)
    zz, rr = np.meshgrid(*grid.axes(), indexing="ij")
    ez = -3.75e6 * (1.0 + 0.1 * np.cos(30 * zz))
    er = -0.5 * 3.75e6 * 0.1 * 30 * np.sin(30 * zz) * rr
    fmap = FieldMap(FieldmapData(grid, ez, er, np.ones((nz, nr), dtype=bool)))
    ez_pad, er_pad, valid, dz, dr = fmap.ez_pad, fmap.er_pad, fmap.valid, fmap.dz, fmap.dr
    zs = rng.random(5000 * scale) * 0.12
    rs = rng.random(5000 * scale) * 0.01

    n_p = 64 * scale
    state = np.zeros((n_p, 6))
    state[:, 0] = 1e-3 * rng.standard_normal(n_p)
    state[:, 1] = 1e-3 * rng.standard_normal(n_p)
    t_emit = 5e-12 * rng.standard_normal(n_p)
    planes = np.linspace(0.12 / 32, 0.12, 32)
    qm = -1.602176634e-19 / (9.1093837015e-31 * 299792458.0)

    return {
        "basis_ders": lambda k: k.basis_ders(knots, 2, xs, 1),
        "element_matrices": lambda k: k.element_matrices(grads, weights),
        "interp_field": lambda k: k.interp_field(ez_pad, er_pad, valid, 0.0, dz, dr, zs, rs),
        "track_rk4": lambda k: k.track_rk4(ez_pad, er_pad, valid, 0.0, dz, dr, state.copy(),
                                           t_emit, 0.5e-12, float(t_emit.min()), 4000, planes,
                                           qm)[0],
    }


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    both = np.isfinite(a) & np.isfinite(b)
    if not np.array_equal(np.isfinite(a), np.isfinite(b)):
        return float("inf")
    return float(np.max(np.abs(a[both] - b[both]), initial=0.0))


def _time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=int, default=1, help="multiply the problem sizes")
    args = ap.parse_args(argv)
    cases = _cases(np.random.default_rng(0), args.scale)
    if _kernels is None:
        print("compiled extension not built; timing the Python backend only")
    print(f"{'kernel':18s}{'python [s]':>12s}{'cython [s]':>12s}{'speed-up':>10s}{'max diff':>12s}")
    for name, run in cases.items():
        t_py = _time(lambda: run(_kernels_py), args.repeat)
        if _kernels is None:
            print(f"{name:18s}{t_py:12.4f}{'-':>12s}{'-':>10s}{'-':>12s}")
            continue
        t_c = _time(lambda: run(_kernels), args.repeat)
        diff = _max_diff(run(_kernels_py), run(_kernels))
        print(f"{name:18s}{t_py:12.4f}{t_c:12.4f}{t_py / t_c:10.1f}{diff:12.2e}")


if __name__ == "__main__":
    main()
