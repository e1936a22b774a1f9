"""Compare the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py --repeat 5
"""

import argparse
import timeit

import numpy as np

from multitune.kernels import _pykernels

try:
    from multitune.kernels import _ckernels
except ImportError:
    _ckernels = None


def _cases(rng, n_lcs, n_merge):
    lcs = [(rng.integers(0, 50, size=n_lcs).astype(np.int64), rng.integers(0, 50, size=n_lcs).astype(np.int64))
           for _ in range(20)]
    merges = [rng.integers(0, 4, size=n_merge).astype(np.int32) for _ in range(200)]
    return lcs, merges


def bench(mod, lcs, merges, repeat):
    t_lcs = min(timeit.repeat(lambda: [mod.lcs_length(a, b) for a, b in lcs], number=1, repeat=repeat))
    t_merge = min(timeit.repeat(lambda: [mod.merge_pair(s, 1, 2, 9) for s in merges], number=1, repeat=repeat))
    return t_lcs, t_merge


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--lcs-len", type=int, default=200, help="token sequence length for LCS")
    ap.add_argument("--merge-len", type=int, default=500, help="symbol sequence length for pair merges")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    lcs, merges = _cases(np.random.default_rng(args.seed), args.lcs_len, args.merge_len)
    rows = [("python", *bench(_pykernels, lcs, merges, args.repeat))]
    if _ckernels is None:
        print("compiled extension not built; run `pip install --no-build-isolation -e .` first")
    else:
        for (a, b) in lcs[:3]:
            assert _ckernels.lcs_length(a, b) == _pykernels.lcs_length(a, b)
        rows.append(("cython", *bench(_ckernels, lcs, merges, args.repeat)))
    print(f"{'backend':<8} {'lcs (20 pairs)':>16} {'merge (200 seqs)':>18}")
    for name, t1, t2 in rows:
        print(f"{name:<8} {1000 * t1:13.2f} ms {1000 * t2:15.2f} ms")
    if len(rows) == 2:
        print(f"speedup  {rows[0][1] / rows[1][1]:13.1f} x {rows[0][2] / rows[1][2]:15.1f} x")


if __name__ == "__main__":
    main()
