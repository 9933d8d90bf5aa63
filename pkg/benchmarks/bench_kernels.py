"""Compare the numba kernels against their pure-numpy fallbacks.

Both tables are imported directly, so the comparison does not depend on
TOFNER_DISABLE_NUMBA. Inputs are sized like one training batch of the
default model (64 sentences of ~25 tokens, dim 64, vocabulary ~2k).

    python benchmarks/bench_kernels.py            # full run
    python benchmarks/bench_kernels.py --quick    # smoke run
"""

import argparse
import json
import timeit

import numpy as np

from tofner._kernels import HAVE_NUMBA, JIT_KERNELS, NUMPY_KERNELS


def make_inputs(rng, quick):
    rows = 400 if quick else 1600
    vocab = 500 if quick else 2000
    dim = 64
    logits = rng.normal(size=(rows, 9))
    x = rng.normal(size=(rows, dim))
    g, b = rng.normal(size=dim), rng.normal(size=dim)
    _, xhat, rstd = NUMPY_KERNELS["layernorm_fwd"](x, g, b, 1e-5)
    tags = rng.integers(0, 9, size=rows).astype(np.int64)
    p_start, p_end = rng.random(128), rng.random(128)
    return {
        "softmax_xent": (logits, rng.integers(0, 9, size=rows).astype(np.int64), np.ones(rows)),
        "scatter_add_rows": (np.zeros((vocab, dim)), rng.integers(0, vocab, size=rows).astype(np.int64), x),
        "bio_repair": (tags,),
        "mrc_greedy": (p_start, p_end, 0.5, 30),
        "layernorm_fwd": (x, g, b, 1e-5),
        "layernorm_bwd": (rng.normal(size=(rows, dim)), xhat, rstd, g),
    }


def _flat(result):
    if result is None:
        return []
    if isinstance(result, tuple):
        return [np.asarray(r, dtype=np.float64).ravel() for r in result]
    return [np.asarray(result, dtype=np.float64).ravel()]


def agree(name, args):
    if name == "scatter_add_rows":
        a, b = args[0].copy(), args[0].copy()
        JIT_KERNELS[name](a, *args[1:])
        NUMPY_KERNELS[name](b, *args[1:])
        return np.allclose(a, b)
    ja, na = _flat(JIT_KERNELS[name](*args)), _flat(NUMPY_KERNELS[name](*args))
    return len(ja) == len(na) and all(x.shape == y.shape and np.allclose(x, y) for x, y in zip(ja, na))


def bench(fn, args, number, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="small inputs, few repetitions")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print one JSON object instead of a table")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba unavailable or disabled: both columns time the numpy fallback")

    rng = np.random.default_rng(0)
    inputs = make_inputs(rng, args.quick)
    number = 3 if args.quick else 20
    repeat = 2 if args.quick else args.repeat
    rows = []
    for name, call_args in inputs.items():
        JIT_KERNELS[name](*call_args)  # compile outside the timed region
        same = agree(name, call_args)
        t_jit = bench(JIT_KERNELS[name], call_args, number, repeat)
        t_np = bench(NUMPY_KERNELS[name], call_args, number, repeat)
        rows.append({"kernel": name, "numba_us": t_jit * 1e6, "numpy_us": t_np * 1e6, "speedup": t_np / t_jit, "agree": same})

    if args.json:
        print(json.dumps(rows, indent=1))
    else:
        print(f"{'kernel':<18}{'numba (us)':>12}{'numpy (us)':>12}{'speedup':>9}  agree")
        for r in rows:
            print(f"{r['kernel']:<18}{r['numba_us']:>12.1f}{r['numpy_us']:>12.1f}{r['speedup']:>8.1f}x  {r['agree']}")
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    raise SystemExit(main())
