"""Time the compiled kernels against the numpy fallback on per-bin batches.

    python benchmarks/bench_kernels.py [--bins 257] [--dim 4] [--repeat 5]

Each operation runs on a stack of ``bins`` random ``dim x dim`` Hermitian
positive definite matrices; the best of ``repeat`` runs is reported along
with the largest difference between the two backends' results.
"""

import argparse
import timeit

import numpy as np

from aecnr import linalg


def pd_stack(rng, f, n):
    X = rng.standard_normal((f, n, n)) + 1j * rng.standard_normal((f, n, n))
    return X @ X.conj().transpose(0, 2, 1) + 0.1 * np.eye(n)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bins", type=int, default=257)
    ap.add_argument("--dim", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    A = pd_stack(rng, args.bins, args.dim)
    B = pd_stack(rng, args.bins, args.dim)
    b = rng.standard_normal((args.bins, args.dim)) + 0j
    ops = {
        "cholesky": lambda: linalg.cholesky(A),
        "solve_hermitian": lambda: linalg.solve_hermitian(A, b),
        "herm_eig": lambda: linalg.herm_eig(A)[0],
        "gevd": lambda: linalg.gevd(A, B).lambda_a,
    }
    backends = linalg.available_backends()
    if "cython" not in backends:
        print("compiled kernels are not built; only the numpy fallback is timed")
    print(f"{args.bins} matrices of size {args.dim}, best of {args.repeat}")
    print(f"{'operation':<16}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}{'max diff':>11}")
    previous = linalg.BACKEND
    try:
        for name, fn in ops.items():
            times, outs = {}, {}
            for be in backends:
                linalg.set_backend(be)
                outs[be] = fn()
                times[be] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
            row = f"{name:<16}" + "".join(f"{times[be]:>14.3f}" for be in backends)
            if len(backends) == 2:
                diff = np.max(np.abs(outs["cython"] - outs["python"]))
                row += f"{times['python'] / times['cython']:>9.1f}x{diff:>11.1e}"
            print(row)
    finally:
        linalg.set_backend(previous)


if __name__ == "__main__":
    main()
