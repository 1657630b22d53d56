"""Compare the compiled and pure-numpy reductions on the same inputs.

    python3 benchmarks/bench_backend.py [--sizes 64,256,1024] [--repeat 5]

Prints best-of-``repeat`` wall times per kernel and size, and the largest
absolute difference between the two backends' outputs.
"""

import argparse
import time

import numpy as np

from debiasable import _backend
from debiasable.instances import squared_distances
from debiasable.solvers import sinkhorn


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(n, rng):
    x = rng.random((n, 2))
    c = squared_distances(x)
    h = np.log(rng.dirichlet(np.ones(n)))
    psi = rng.normal(size=(min(n, 256), 2 * min(n, 256)))
    logw = np.log(rng.dirichlet(np.ones(psi.shape[1])))
    a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    return {
        "softmin": lambda: _backend.softmin(c, h, 0.1),
        "pairwise_lse": lambda: _backend.pairwise_lse(psi, psi, logw, 0.5),
        "sinkhorn": lambda: sinkhorn(c, a, b, 0.1, tol=1e-9).f,
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="64,256,1024")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    backends = _backend.available()
    if "compiled" not in backends:
        print("compiled extension not built; timing the python backend only")
    print(f"{'kernel':<14}{'n':>6}" + "".join(f"{b + ' [s]':>16}" for b in backends) + f"{'speedup':>10}{'max diff':>12}")
    previous = _backend.active()
    try:
        for n in (int(s) for s in args.sizes.split(",")):
            for name in ("softmin", "pairwise_lse", "sinkhorn"):
                times, outs = [], []
                for b in backends:
                    _backend.set_backend(b)
                    fn = cases(n, np.random.default_rng(args.seed))[name]
                    t, out = best_time(fn, args.repeat)
                    times.append(t)
                    outs.append(np.asarray(out))
                speed = times[-1] / times[0] if len(times) == 2 else 1.0
                diff = float(np.max(np.abs(outs[0] - outs[-1])))
                print(f"{name:<14}{n:>6}" + "".join(f"{t:>16.6f}" for t in times) + f"{speed:>10.2f}{diff:>12.2e}")
    finally:
        _backend.set_backend(previous)


if __name__ == "__main__":
    main()
