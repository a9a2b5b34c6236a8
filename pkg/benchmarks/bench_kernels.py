"""Time the numba and numpy tanh-jet kernels on a surrogate-sized workload.

Run from the repository root:

    python benchmarks/bench_kernels.py [--points 4096] [--width 40] [--repeat 20]

Both backends are imported in the same process (the numpy path is always
available as ``tanh_jet_*_np``), checked for agreement, and timed.
"""
import argparse
import time

import numpy as np

from invpde import _kernels


def bench(fn, *args, repeat):
    fn(*args)  # warm-up (numba compilation)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=4096)
    ap.add_argument("--width", type=int, default=40)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    # t, x, y directions with the second derivatives a Burgers/KG library needs
    firsts, pairs = 3, np.array([[0, 0], [1, 1], [1, 2], [2, 2]], dtype=np.int64)
    C = 1 + firsts + len(pairs)
    Z = rng.standard_normal((args.points, C, args.width))
    G = rng.standard_normal(Z.shape)
    if not _kernels.USE_NUMBA:
        print("numba backend disabled (INVPDE_BACKEND=numpy or numba missing); timing numpy only")
    H_np = _kernels.tanh_jet_forward_np(Z, firsts, pairs)
    rows = [("forward", "numpy", bench(_kernels.tanh_jet_forward_np, Z, firsts, pairs, repeat=args.repeat)),
            ("backward", "numpy", bench(_kernels.tanh_jet_backward_np, G, Z, H_np, firsts, pairs,
                                        repeat=args.repeat))]
    if _kernels.USE_NUMBA:
        H_nb = _kernels.tanh_jet_forward_nb(Z, firsts, pairs)
        err_f = np.abs(H_nb - H_np).max()
        err_b = np.abs(_kernels.tanh_jet_backward_nb(G, Z, H_np, firsts, pairs)
                       - _kernels.tanh_jet_backward_np(G, Z, H_np, firsts, pairs)).max()
        print(f"max |numba - numpy|: forward {err_f:.2e}, backward {err_b:.2e}")
        rows += [("forward", "numba", bench(_kernels.tanh_jet_forward_nb, Z, firsts, pairs, repeat=args.repeat)),
                 ("backward", "numba", bench(_kernels.tanh_jet_backward_nb, G, Z, H_np, firsts, pairs,
                                             repeat=args.repeat))]
    print(f"points={args.points} width={args.width} channels={C}")
    print(f"{'kernel':<10}{'backend':<8}{'best ms':>10}")
    for k, b, t in rows:
        print(f"{k:<10}{b:<8}{1e3 * t:>10.3f}")


if __name__ == "__main__":
    main()
