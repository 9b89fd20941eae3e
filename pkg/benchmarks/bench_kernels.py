"""Compare the compiled and numpy kernel backends.

Times one training-step gradient (``loss_and_grad``) and one ranking pass
(``score_candidates``) per scorer, and checks that both backends agree.

Usage::

    python benchmarks/bench_kernels.py --batch 512 --negatives 128 --dim 64
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from transkge import kernels
from transkge.scoring import SCORER_CODES


def _tables(rng, n_entities, n_relations, dim):
    u = lambda *shape: rng.uniform(-0.1, 0.1, shape)
    return [u(n_entities, dim), u(n_entities, dim), u(n_relations, dim),
            u(n_relations, dim), u(n_relations, dim)]


def _best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(args) -> list[dict]:
    rng = np.random.default_rng(args.seed)
    N, R, d, B, n = args.entities, args.relations, args.dim, args.batch, args.negatives
    tables = _tables(rng, N, R, d)
    heads = rng.integers(0, N, B)
    rels = rng.integers(0, R, B)
    tails = rng.integers(0, N, B)
    negs = rng.integers(0, N, (B, n))
    ch = (np.arange(B) % 2 == 0).astype(np.uint8)
    cands = rng.integers(0, N, (B, args.candidates))

    rows = []
    for name, code in SCORER_CODES.items():
        timings, outputs = {}, {}
        for backend in sorted(kernels.BACKENDS):
            kern = kernels.get(backend)
            grads = [np.zeros_like(t) for t in tables]

            def step():
                for g in grads:
                    g.fill(0.0)
                return kern.loss_and_grad(code, args.p, *tables, heads, rels, tails, negs, ch,
                                          6.0, True, 1.0, args.dropout, 1, 2, *grads)

            def rank():
                return kern.score_candidates(code, args.p, *tables, heads, rels, tails, cands, ch)

            repeats = args.repeats if backend != "numpy" else max(1, args.repeats // 5)
            timings[backend] = (_best_of(step, repeats), _best_of(rank, repeats))
            outputs[backend] = (step(), [g.copy() for g in grads], rank())
        row = {"scorer": name}
        for backend, (t_step, t_rank) in timings.items():
            row[f"{backend}_step_ms"] = 1e3 * t_step
            row[f"{backend}_rank_ms"] = 1e3 * t_rank
        if "cython" in outputs:
            (lc, gc, sc), (lp, gp, sp) = outputs["cython"], outputs["numpy"]
            row["speedup_step"] = timings["numpy"][0] / timings["cython"][0]
            row["speedup_rank"] = timings["numpy"][1] / timings["cython"][1]
            row["loss_diff"] = abs(lc - lp)
            row["grad_max_diff"] = max(float(np.max(np.abs(a - b), initial=0.0)) for a, b in zip(gc, gp))
            row["scores_identical"] = bool(np.array_equal(sc, sp))
        rows.append(row)
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--entities", type=int, default=200)
    ap.add_argument("--relations", type=int, default=10)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--batch", type=int, default=512)
    ap.add_argument("--negatives", type=int, default=128)
    ap.add_argument("--candidates", type=int, default=1000)
    ap.add_argument("--dropout", type=float, default=0.1)
    ap.add_argument("--p", type=int, default=1, choices=(1, 2))
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    print(f"backends: {sorted(kernels.BACKENDS)} (active: {kernels.BACKEND})")
    print(f"B={args.batch} n={args.negatives} d={args.dim} p={args.p} dropout={args.dropout}")
    for row in run(args):
        parts = [f"{row['scorer']:>9}"]
        for backend in sorted(kernels.BACKENDS):
            parts.append(f"{backend} step {row[f'{backend}_step_ms']:8.2f} ms"
                         f" rank {row[f'{backend}_rank_ms']:8.2f} ms")
        if "speedup_step" in row:
            parts.append(f"speedup {row['speedup_step']:5.1f}x / {row['speedup_rank']:5.1f}x")
            parts.append(f"max|dgrad| {row['grad_max_diff']:.1e}")
            parts.append("scores identical" if row["scores_identical"] else "SCORES DIFFER")
        print("  ".join(parts))


if __name__ == "__main__":
    main()
