"""Compare the compiled kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--P 32 124 256] [--repeat 50]

Both implementations are checked for identical output before timing.
"""

import argparse
import timeit

import numpy as np

from approxcal import _kernels_py
from approxcal.accel import DatapathConfig
from approxcal.datagen import synthesize
from approxcal.kernels import compiled_module


def _inputs(P, dp):
    pr = synthesize(P, seed=0)
    rng = np.random.default_rng(1)
    g = 1 + 0.1 * (rng.standard_normal(P) + 1j * rng.standard_normal(P))
    ref_args = (pr.M.real.copy(), pr.M.imag.copy(), pr.V.real.copy(), pr.V.imag.copy(),
                g.real.copy(), g.imag.copy())

    def q(x, frac):
        return np.rint(np.ldexp(x, frac)).astype(np.int64)

    f_h, f_e, f_g = dp.fmt("h").frac_len, dp.fmt("e_mac").frac_len, dp.gain_fmt.frac_len
    fx_args = (q(pr.M.real, f_h), q(pr.M.imag, f_h), q(pr.V.real, f_e), q(pr.V.imag, f_e),
               q(g.real, f_g), q(g.imag, f_g), dp.kernel_params())
    return ref_args, fx_args


def _same(a, b):
    return all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in zip(a, b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--P", type=int, nargs="+", default=[32, 124, 256])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()

    compiled = compiled_module()
    if compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e .` first")
    dp = DatapathConfig.approximate()
    print(f"{'kernel':<14}{'P':>5}{'numpy us':>12}{'compiled us':>14}{'speedup':>10}")
    for P in args.P:
        ref_args, fx_args = _inputs(P, dp)
        for name, args_ in (("ref_iteration", ref_args), ("fx_iteration", fx_args)):
            py_fn, c_fn = getattr(_kernels_py, name), getattr(compiled, name)
            if not _same(py_fn(*args_), c_fn(*args_)):
                raise SystemExit(f"{name} differs between implementations at P={P}")
            t_py = min(timeit.repeat(lambda: py_fn(*args_), number=args.repeat, repeat=3))
            t_c = min(timeit.repeat(lambda: c_fn(*args_), number=args.repeat, repeat=3))
            us_py, us_c = 1e6 * t_py / args.repeat, 1e6 * t_c / args.repeat
            print(f"{name:<14}{P:>5}{us_py:>12.1f}{us_c:>14.1f}{us_py / us_c:>9.1f}x")


if __name__ == "__main__":
    main()
