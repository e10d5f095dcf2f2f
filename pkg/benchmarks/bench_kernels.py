"""Time each hot kernel under numba and under the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--scale K]

Each kernel is run once untimed first so the numba compile cost is not
counted.  Results are also checked for agreement before timing.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from sbnet import _kernels as K


def _inputs(scale: int, seed: int = 0):
    g = np.random.default_rng(seed)
    b, d, c = 128 * scale, 128, 64
    emb = g.normal(size=(b, d))
    centers = g.normal(size=(c, d))
    labels = g.integers(0, c, b)
    n = 20_000 * scale
    scores = np.sort(np.round(g.normal(size=n), 3))[::-1].copy()
    truth = g.random(n) < 0.5
    match = g.normal(size=(2_000 * scale, 10))
    true_idx = g.integers(0, 10, match.shape[0])
    return {
        "splitmix64": ((np.uint64(7), np.uint64(0), 100_000 * scale), {}),
        "git_push": ((emb, labels, centers), {}),
        "roc_points": ((scores, truth), {}),
        "match_argmax": ((match, true_idx), {}),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--scale", type=int, default=1)
    args = ap.parse_args()
    if not K.HAS_NUMBA:
        print("numba is not importable; only the numpy path can run")
        return

    print(f"{'kernel':<14} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, (a, kw) in _inputs(args.scale).items():
        fnp, fnb = getattr(K, f"np_{name}"), getattr(K, f"nb_{name}")
        if not _same(fnp(*a, **kw), fnb(*a, **kw)):
            raise SystemExit(f"{name}: numba and numpy results disagree")
        t_np = min(timeit.repeat(lambda: fnp(*a, **kw), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fnb(*a, **kw), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<14} {t_np:>10.3f} {t_nb:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
