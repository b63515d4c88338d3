"""Time the compiled and pure-Python forest kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--rows 1300] [--dim 160] [--trees 20]

Prints per-call timings for split search and tree traversal, plus a full
forest fit through each backend, and checks that both give the same forest.
"""

import argparse
import timeit

import numpy as np

from dialogsent import _kernels
from dialogsent._kernels import _slow
from dialogsent.fusion import Forest, ForestConfig

try:
    from dialogsent._kernels import _fast
except ImportError:
    _fast = None


def best_of(fn, number, repeat=5):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def fit_with(backend, X, y, cfg):
    saved = _kernels.best_split, _kernels.apply_tree
    _kernels.best_split, _kernels.apply_tree = backend.best_split, backend.apply_tree
    try:
        return Forest.fit(X, y, cfg)
    finally:
        _kernels.best_split, _kernels.apply_tree = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=1300)
    ap.add_argument("--dim", type=int, default=160)
    ap.add_argument("--trees", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if _fast is None:
        raise SystemExit("compiled kernels not built; run `pip install -e .` with Cython available")

    rng = np.random.default_rng(args.seed)
    y = rng.integers(0, 3, args.rows).astype(np.intp)
    X = rng.standard_normal((args.rows, 3, args.dim))[np.arange(args.rows), y] + 0.3 * y[:, None]
    X = np.ascontiguousarray(X)
    idx = rng.integers(0, args.rows, args.rows).astype(np.intp)
    feats = rng.permutation(args.dim)[:int(np.sqrt(args.dim))].astype(np.intp)
    cfg = ForestConfig(num_trees=args.trees, seed=args.seed)
    tree = Forest.fit(X, y, ForestConfig(num_trees=1, seed=args.seed)).trees[0]
    tree_args = (tree.feature, tree.threshold, tree.left, tree.right, X)

    rows = []
    for name, mod in (("python", _slow), ("cython", _fast)):
        split = best_of(lambda: mod.best_split(X, y, idx, feats, 1), number=3)
        apply = best_of(lambda: mod.apply_tree(*tree_args), number=20)
        fit = best_of(lambda: fit_with(mod, X, y, cfg), number=1, repeat=1)
        rows.append((name, split, apply, fit))

    print(f"rows={args.rows} dim={args.dim} trees={args.trees}")
    print(f"{'backend':<8}{'best_split ms':>15}{'apply_tree ms':>15}{'forest fit s':>14}")
    for name, split, apply, fit in rows:
        print(f"{name:<8}{split * 1e3:>15.3f}{apply * 1e3:>15.3f}{fit:>14.2f}")
    (_, s0, a0, f0), (_, s1, a1, f1) = rows
    print(f"{'speedup':<8}{s0 / s1:>14.1f}x{a0 / a1:>14.1f}x{f0 / f1:>13.1f}x")

    same = fit_with(_slow, X, y, cfg).to_dict() == fit_with(_fast, X, y, cfg).to_dict()
    print("identical forests:", same)


if __name__ == "__main__":
    main()
