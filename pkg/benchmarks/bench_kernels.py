"""Time the compiled RK4 kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Reports seconds per call and per step for the monodromy kernel (a batch of
energies) and for the normal-form integrator, plus the largest difference
between the two backends.
"""

import argparse
import time

import numpy as np

from slowfast import _kernels
from slowfast._kernels import fallback


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_monodromy():
    rng = np.random.default_rng(0)
    E, K, n, nsteps = 64, 3, 4, 2048
    Cc = rng.normal(size=(E, K, n, n))
    Cc = Cc + np.swapaxes(Cc, -1, -2)
    Cs = np.zeros_like(Cc)
    freq = rng.uniform(0.5, 1.5, E)
    T = 2 * np.pi / freq
    call = lambda mod: mod.rk4_linear_trig(Cc, Cs, freq, 0.1, T, nsteps)
    return "rk4_linear_trig", E * nsteps, call


def bench_normal_form():
    rng = np.random.default_rng(1)
    nu, nv, ncoef = 21, 9, 15  # Fourier x Chebyshev table of [h, rho (2), A (4), T3 (8)]
    C = 1e-3 * rng.normal(size=(nu, nv, ncoef))
    C[0, 0, 0] = 1.0
    C[0, 0, 3] = C[0, 0, 6] = 1.0  # A close to the identity
    state = np.array([0.5, 0.0, 0.0, 0.0])
    nsteps = 20000
    call = lambda mod: mod.rk4_normal_form(state, C, 0.0, 2 * np.pi, -1.0, 1.0, 2, 0.05, 0.001, nsteps)
    return "rk4_normal_form", nsteps, call


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    print(f"compiled backend: {_kernels.BACKEND}")
    for make in (bench_monodromy, bench_normal_form):
        name, steps, call = make()
        t_py, out_py = _best(lambda: call(fallback), args.repeat)
        t_c, out_c = _best(lambda: call(_kernels), args.repeat)
        a = np.asarray(out_py[0] if isinstance(out_py, tuple) else out_py)
        b = np.asarray(out_c[0] if isinstance(out_c, tuple) else out_c)
        diff = float(np.abs(a - b).max() / max(1.0, np.abs(a).max()))
        print(f"{name:16s} python {t_py:8.3f} s ({1e6 * t_py / steps:7.2f} us/step)  "
              f"{_kernels.BACKEND} {t_c:8.3f} s ({1e6 * t_c / steps:7.2f} us/step)  "
              f"speedup {t_py / t_c:6.1f}x  max rel diff {diff:.1e}")


if __name__ == "__main__":
    main()
