"""Compiled vs pure-Python kernels, and the SVD vs dense trigger paths.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each row reports the best-of-``repeat`` mean time per call.
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from fsclb import _kernels_py, kernels
from fsclb.agent import BanditParams, FSCLBAgent
from fsclb.baselines import FedLinAgent

try:
    from fsclb import _kernels as _kc
except ImportError:
    _kc = None


def per_call_us(fn, repeat, number):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e6


def kernel_cases(rng):
    for l, d, K in ((8, 50, 10), (20, 50, 10), (32, 400, 10), (40, 100, 100)):
        _, s, Vt = np.linalg.svd(rng.standard_normal((l, d)), full_matrices=False)
        S = np.ascontiguousarray(s[:, None] * Vt)
        c = 2.0
        H = 1.0 / (s ** 2 + c)
        X = rng.standard_normal((K, d))
        theta = rng.standard_normal(d)
        Vinv = np.linalg.inv(c * np.eye(d) + S.T @ S)
        B = rng.standard_normal((l + 1, d))
        _, sb, Vtb = np.linalg.svd(B, full_matrices=False)
        delta = float(sb[l - 1] ** 2)
        sv = np.ascontiguousarray(sb[:l])
        yield f"l={l} d={d} K={K}", {
            "ucb_scores": lambda m: m.ucb_scores(theta, S, H, c, 1.5, X),
            "dense_ucb_scores": lambda m: m.dense_ucb_scores(theta, Vinv, 1.5, X),
            "woodbury_quadform": lambda m: m.woodbury_quadform(S, H, c, X),
            "logdet_from_singvals": lambda m: m.logdet_from_singvals(sv, c, d),
            "shrink_rows": lambda m: m.shrink_rows(sb, Vtb, delta, l),
        }


def trigger_case(d, l, pulls, repeat, rng):
    p = BanditParams(d=d, l=l, M=10)
    X = rng.standard_normal((pulls, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    svd_a = FSCLBAgent(0, p, det_path="svd")
    dense_a = FSCLBAgent(0, p, det_path="dense")
    fed = FedLinAgent(0, p)
    for x in X:
        for a in (svd_a, dense_a, fed):
            a.local_update(x, 0.0)
    number = 20 if d >= 200 else 200
    return {
        "fsclb_svd": per_call_us(svd_a.evaluate_trigger, repeat, number),
        "fsclb_dense": per_call_us(dense_a.evaluate_trigger, repeat, number),
        "fedlinucb": per_call_us(fed.evaluate_trigger, repeat, number),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    out = {"kernels": [], "trigger": []}

    if _kc is None:
        print("compiled extension not built; reporting the pure-Python backend only")
    print(f"active backend: {kernels.BACKEND}, BLAS cutover {kernels.BLAS_CUTOVER} multiply-adds")
    print(f"{'case':<22}{'kernel':<22}{'python us':>11}{'cython us':>11}{'speedup':>9}"
          f"{'dispatched us':>15}")
    for label, fns in kernel_cases(rng):
        for name, fn in fns.items():
            py = per_call_us(lambda: fn(_kernels_py), args.repeat, 2000)
            cy = per_call_us(lambda: fn(_kc), args.repeat, 2000) if _kc else float("nan")
            auto = per_call_us(lambda: fn(kernels), args.repeat, 2000)
            print(f"{label:<22}{name:<22}{py:>11.2f}{cy:>11.2f}{py / cy:>9.2f}{auto:>15.2f}")
            out["kernels"].append({"case": label, "kernel": name, "python_us": py,
                                   "cython_us": cy, "dispatched_us": auto})

    print()
    print(f"{'trigger d,l':<14}{'fsclb svd us':>14}{'fsclb dense us':>16}{'fedlinucb us':>14}"
          f"{'svd/fed':>9}")
    for d, l in ((50, 8), (50, 20), (100, 20), (400, 32)):
        t = trigger_case(d, l, 3 * l, args.repeat, rng)
        print(f"{f'{d},{l}':<14}{t['fsclb_svd']:>14.1f}{t['fsclb_dense']:>16.1f}"
              f"{t['fedlinucb']:>14.1f}{t['fsclb_svd'] / t['fedlinucb']:>9.3f}")
        out["trigger"].append({"d": d, "l": l, **t})

    if args.json:
        with open(args.json, "w") as fh:
            json.dump(out, fh, indent=2)


if __name__ == "__main__":
    main()
