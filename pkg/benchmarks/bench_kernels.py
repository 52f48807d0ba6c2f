"""Time each hot kernel under the numba and pure-numpy implementations.

    python3 benchmarks/bench_kernels.py [--repeat N] [--dim D]

Compilation happens in a warm-up call before timing.  The last section runs
the chain-td fixture end to end in two subprocesses, one with
AFFORDGVF_DISABLE_NUMBA=1.
"""
import argparse
import os
import subprocess
import sys
import tempfile
import time
import timeit
from importlib import resources

import numpy as np

from affordgvf import _kernels


def cases(dim, buffer, batch, length, rng):
    theta = rng.normal(size=dim)
    x, x2 = rng.random(dim), rng.random(dim)
    Q = rng.normal(size=(4, dim))
    probs = np.full(4, 0.25)
    X, X2 = rng.random((buffer, dim)), rng.random((buffer, dim))
    C, G = rng.random(buffer), rng.random(buffer)
    rho = rng.random(buffer) * 2
    u = rng.random(batch)
    idx = _kernels.numpy_impl.resample_indices(rho, buffer, u)
    c, g = rng.random(length), rng.random(length) * 0.99
    Xe, Ge = rng.random((length, dim)), rng.random(length)
    return {
        "linear_td_step": lambda k: k.linear_td_step(theta.copy(), x, x2, 0.5, 0.9, 1e-3),
        "action_td_step": lambda k: k.action_td_step(Q.copy(), x, 1, x2, probs, 0.5, 0.9, 1e-3),
        "resample_indices": lambda k: k.resample_indices(rho, buffer, u),
        "minibatch_td_gradient": lambda k: k.minibatch_td_gradient(theta, X, X2, C, G, idx),
        "discounted_returns": lambda k: k.discounted_returns(c, g),
        "generalized_return": lambda k: k.generalized_return(c, g),
        "supervised_sweep": lambda k: k.supervised_sweep(theta.copy(), Xe, Ge, 1e-4),
    }


def per_call(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    best = min(timeit.repeat(fn, number=number, repeat=repeat))
    return best / number


def end_to_end():
    fixture = resources.files("affordgvf") / "fixtures" / "chain-td.json"
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, AFFORDGVF_DISABLE_NUMBA=flag)
        with tempfile.TemporaryDirectory() as tmp:
            t = time.perf_counter()
            subprocess.run([sys.executable, "-m", "affordgvf.cli", "learn", "--quiet",
                            "--config", str(fixture), "--out", tmp], check=True, env=env)
            out[label] = time.perf_counter() - t
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--buffer", type=int, default=10_000)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--length", type=int, default=1000)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if _kernels.numba_impl is None:
        sys.exit("numba is not installed; nothing to compare")
    _kernels.warmup(_kernels.numba_impl)
    rng = np.random.default_rng(0)
    table = cases(args.dim, args.buffer, args.batch, args.length, rng)
    print(f"{'kernel':24s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for name, fn in table.items():
        t_np = per_call(lambda: fn(_kernels.numpy_impl), args.repeat) * 1e6
        t_nb = per_call(lambda: fn(_kernels.numba_impl), args.repeat) * 1e6
        print(f"{name:24s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:8.1f}x")
    if not args.skip_end_to_end:
        e2e = end_to_end()
        print(f"\nchain-td learn (process wall time): numba {e2e['numba']:.2f} s, numpy {e2e['numpy']:.2f} s")


if __name__ == "__main__":
    main()
