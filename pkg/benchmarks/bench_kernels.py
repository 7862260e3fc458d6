"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--atoms 256] [--points 2000] [--repeat 5]

Reports the best-of-``repeat`` wall time per call for each kernel and for an
end-to-end log-potential evaluation, plus the speed-up of the compiled path.
"""
from __future__ import annotations

import argparse
import contextlib
import timeit

import numpy as np

from braymoore import _kernels_py, kernels, spectral
from braymoore.spectral import FreeConvolution, SpectralMeasure

try:
    from braymoore import _kernels as _kernels_cy
except ImportError:  # pragma: no cover
    _kernels_cy = None

NAMES = ("stieltjes", "subordinate", "biane_map", "biane_invert")


@contextlib.contextmanager
def backend(impl):
    saved = {k: getattr(kernels, k) for k in NAMES}
    try:
        for k in NAMES:
            setattr(kernels, k, getattr(impl, k))
        yield
    finally:
        for k, v in saved.items():
            setattr(kernels, k, v)


def cases(n_atoms: int, n_points: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    loc = np.sort(rng.uniform(-3, 3, n_atoms))
    w = np.full(n_atoms, 1.0 / n_atoms)
    sigma2 = 0.5
    z = rng.uniform(-4, 4, n_points) + 1j * 10 ** rng.uniform(-2, 0, n_points)
    m0 = _kernels_py.stieltjes(loc, w, z + 1j * np.sqrt(sigma2))
    x = np.linspace(-4, 4, n_points)
    a = _kernels_py.biane_invert(loc, w, sigma2, x)
    fc = FreeConvolution(SpectralMeasure(loc, w), sigma2)

    def end_to_end():
        # fresh object so the cached support is recomputed under the active backend
        spectral.log_potential(FreeConvolution(fc.base, fc.sigma2))

    return {
        "stieltjes": lambda k: k.stieltjes(loc, w, z),
        "subordinate": lambda k: k.subordinate(loc, w, sigma2, z, m0.copy(), 1e-13, 20000, 1e-3),
        "biane_map": lambda k: k.biane_map(loc, w, sigma2, a),
        "biane_invert": lambda k: k.biane_invert(loc, w, sigma2, x),
        "log_potential": lambda k: end_to_end(),
    }


def best_time(fn, repeat: int) -> float:
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--atoms", type=int, default=256)
    ap.add_argument("--points", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    impls = {"python": _kernels_py}
    if _kernels_cy is not None:
        impls["cython"] = _kernels_cy
    print(f"atoms={args.atoms} points={args.points} repeat={args.repeat}")
    print(f"{'kernel':<14}" + "".join(f"{name:>14}" for name in impls) + f"{'speed-up':>10}")
    for name, call in cases(args.atoms, args.points).items():
        times = {}
        for label, impl in impls.items():
            with backend(impl):
                times[label] = best_time(lambda: call(impl), args.repeat)
        row = f"{name:<14}" + "".join(f"{t * 1e3:>11.3f} ms" for t in times.values())
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
