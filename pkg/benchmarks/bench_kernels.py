"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is warmed up once (so JIT compilation is excluded) and then
timed with ``timeit``; the table reports the best of ``--repeat`` runs and
checks that both paths return the same numbers.
"""
import argparse
import timeit

import numpy as np

from sha_asr import _accel, kernels


def segment_case(rng, T=120, V=60, K=64):
    logpost = np.log(rng.dirichlet(np.ones(K), size=T))
    seqs = [rng.integers(0, K, int(rng.integers(2, 5))) for _ in range(V)]
    offsets = np.zeros(V + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(s) for s in seqs])
    return logpost, np.concatenate(seqs).astype(np.int64), offsets


def edit_case(rng, n=400):
    return rng.integers(0, 50, n).astype(np.int64), rng.integers(0, 50, n + 17).astype(np.int64)


def gmm_case(rng, n=200_000):
    x = np.clip(np.concatenate([rng.normal(0.95, 0.05, n // 2), rng.normal(0.1, 0.1, n // 2)]), 0, 1)
    return x, np.array([0.5, 0.5]), np.array([0.1, 0.9]), np.array([0.01, 0.01])


CASES = [
    ("segment_scores", segment_case, kernels.segment_scores_jit, kernels.segment_scores_numpy),
    ("edit_ops", edit_case, kernels.edit_ops_jit, kernels.edit_ops_python),
    ("gmm_estep", gmm_case, kernels.gmm_estep_jit, kernels.gmm_estep_numpy),
]


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, atol=1e-9, equal_nan=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; only the numpy path is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}  agree")
    for name, make, jit_fn, np_fn in CASES:
        case = make(rng)
        t_np = best_time(np_fn, case, args.repeat)
        if _accel.HAVE_NUMBA:
            ok = same(jit_fn(*case), np_fn(*case))  # also compiles
            t_jit = best_time(jit_fn, case, args.repeat)
            print(f"{name:<16}{1e3 * t_jit:12.3f}{1e3 * t_np:12.3f}{t_np / t_jit:9.1f}x  {ok}")
        else:
            print(f"{name:<16}{'-':>12}{1e3 * t_np:12.3f}{'-':>10}  -")


if __name__ == "__main__":
    main()
