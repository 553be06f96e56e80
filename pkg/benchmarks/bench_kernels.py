"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 64]

Prints one line per kernel: best-of-N wall time for each backend and the
speed-up.  Results are also checked for agreement before timing.
"""
import argparse
import timeit

import numpy as np

from umil import kernels


def cases(rng, batch, n_auc, n_hist, m):
    z = rng.standard_normal((batch, 32))
    p = rng.random(batch)
    cl = rng.integers(0, 2, batch)
    q = rng.random((batch, 2))
    q /= q.sum(1, keepdims=True)
    lab = (rng.random(batch * (batch - 1) // 2) < 0.5).astype(np.uint8)
    s = np.sort(np.round(rng.random(n_auc), 3))[::-1].copy()
    y = rng.integers(0, 2, n_auc)
    y[:2] = [0, 1]
    hv = rng.random((n_hist, 5))
    hc = rng.integers(0, 6, n_hist)
    x = rng.standard_normal((m, 16))
    return {
        "cosine_pair_labels": (z, 0.8),
        "pair_prob_loss_grad": (p, cl, 1e-7),
        "pair_simplex_loss_grad": (q, lab, 1e-7),
        "roc_sweep": (s, y),
        "ring_variance": (hv, hc),
        "segment_bounds": (m, 32),
        "segment_means": (x, 32),
    }


def _close(a, b):
    if isinstance(a, tuple):
        return all(_close(u, v) for u, v in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--n-auc", type=int, default=200_000)
    ap.add_argument("--n-hist", type=int, default=10_000)
    ap.add_argument("--m", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    py = kernels.backend("python")
    try:
        cy = kernels.backend("cython")
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<24}{'python ms':>12}{'cython ms':>12}{'speed-up':>10}")
    for name, a in cases(rng, args.batch, args.n_auc, args.n_hist, args.m).items():
        f_py, f_cy = getattr(py, name), getattr(cy, name)
        if not _close(f_py(*a), f_cy(*a)):
            raise SystemExit(f"{name}: backends disagree")
        t_py = min(timeit.repeat(lambda: f_py(*a), number=args.number, repeat=args.repeat)) / args.number
        t_cy = min(timeit.repeat(lambda: f_cy(*a), number=args.number, repeat=args.repeat)) / args.number
        print(f"{name:<24}{t_py * 1e3:>12.3f}{t_cy * 1e3:>12.3f}{t_py / t_cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
