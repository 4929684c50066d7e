"""Compare the numba and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--branches 2000] [--repeat 50]

Reports the best wall time per call of each kernel and the largest
relative difference between the backends, which is a few ulp because numba
and numpy use different sin/cos implementations.  The first numba call
(compilation or cache load) is excluded from the timings.
"""
import argparse
import time

import numpy as np

from flexmap.kernels import get_backend


def random_branches(m, seed=0):
    rng = np.random.default_rng(seed)
    vf = rng.uniform(0.9, 1.1, m)
    vt = rng.uniform(0.9, 1.1, m)
    thf = rng.uniform(-0.2, 0.2, m)
    tht = rng.uniform(-0.2, 0.2, m)
    z = rng.uniform(0.005, 0.05, m) + 1j * rng.uniform(0.01, 0.1, m)
    y = 1 / z
    gsh = np.zeros(m)
    bsh = rng.uniform(0, 1e-3, m)
    lam = rng.normal(size=(m, 4))
    return (vf, vt, thf, tht, y.real.copy(), y.imag.copy(), gsh, bsh), lam


def random_feeder(n, seed=0):
    """Random tree on ``n`` buses for the dense power-flow kernel."""
    rng = np.random.default_rng(seed)
    f = np.array([rng.integers(0, k) for k in range(1, n)], dtype=np.int64)
    t = np.arange(1, n, dtype=np.int64)
    y = 1 / (rng.uniform(0.005, 0.05, n - 1) + 1j * rng.uniform(0.01, 0.1, n - 1))
    vm = rng.uniform(0.95, 1.05, n)
    va = rng.uniform(-0.05, 0.05, n)
    p = rng.uniform(-0.05, 0, n)
    q = rng.uniform(-0.02, 0, n)
    z = np.zeros(n)
    return (f, t, y.real.copy(), y.imag.copy(), np.zeros(n - 1), np.zeros(n - 1), vm, va, p, q, z, z)


def best_of(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--branches", type=int, default=2000)
    ap.add_argument("--buses", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)

    br, lam = random_branches(args.branches)
    pf = random_feeder(args.buses)
    cases = {
        "branch_flows": br,
        "branch_jac": br,
        "branch_hess": br + (lam,),
        "dense_pf": pf,
    }
    np_mod, nb_mod = get_backend("numpy"), get_backend("numba")
    t0 = time.perf_counter()
    for name, a in cases.items():
        getattr(nb_mod, name)(*a)
    print(f"numba first-call overhead: {time.perf_counter() - t0:.2f} s")
    print(f"{'kernel':<14}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>9}  {'max rel diff':>12}")
    for name, a in cases.items():
        f_np, f_nb = getattr(np_mod, name), getattr(nb_mod, name)
        r_np, r_nb = f_np(*a), f_nb(*a)
        r_np = r_np if isinstance(r_np, tuple) else (r_np,)
        r_nb = r_nb if isinstance(r_nb, tuple) else (r_nb,)
        diff = max(float(np.abs(x - y).max() / max(np.abs(x).max(), 1e-300)) for x, y in zip(r_np, r_nb))
        t_np = best_of(f_np, a, args.repeat)
        t_nb = best_of(f_nb, a, args.repeat)
        print(f"{name:<14}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>8.1f}x  {diff:>12.1e}")


if __name__ == "__main__":
    main()
