"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Times the LSTM forward and backward passes and the Adam update at the default
network sizes, then one full actor forward+backward and one A3C segment gradient
with each backend swapped in.
"""
import argparse
import json
import timeit

import numpy as np

from forex_a3c.neural import Architecture, backward, forward_actor, init_parameters, kernels
from forex_a3c.trading_env import Observation


def lstm_case(B, T=16, I=5, H=128, seed=0):
    rng = np.random.default_rng(seed)
    x = np.ascontiguousarray(rng.normal(0, 0.2, (T, B, I)))
    w_ih = np.ascontiguousarray(rng.normal(0, 0.1, (4 * H, I)))
    w_hh = np.ascontiguousarray(rng.normal(0, 0.1, (4 * H, H)))
    b = np.zeros(4 * H)
    dh = np.ascontiguousarray(rng.normal(size=(B, H)))
    return x, w_ih, w_hh, b, dh


def time_call(fn, repeat):
    fn()
    per = min(timeit.repeat(fn, number=1, repeat=repeat))
    return per * 1e6  # microseconds


def kernel_rows(backend, repeat):
    rows = {}
    for B in (1, 20):
        x, w_ih, w_hh, b, dh = lstm_case(B)
        hs, cs, gates = backend.lstm_forward(x, w_ih, w_hh, b)
        rows[f"lstm_forward B={B}"] = time_call(lambda: backend.lstm_forward(x, w_ih, w_hh, b), repeat)
        rows[f"lstm_backward B={B}"] = time_call(
            lambda: backend.lstm_backward(x, w_ih, w_hh, hs, cs, gates, dh), repeat)
    n = Architecture().size
    rng = np.random.default_rng(1)
    p, g = rng.normal(size=n), rng.normal(size=n)
    m, v = np.zeros(n), np.zeros(n)
    rows[f"adam_update n={n}"] = time_call(
        lambda: backend.adam_update(p, g, m, v, 1e-4, 0.9, 0.999, 1e-8, 0.1, 0.001), repeat)
    return rows


def network_row(backend, repeat):
    saved = kernels.lstm_forward, kernels.lstm_backward
    kernels.lstm_forward, kernels.lstm_backward = backend.lstm_forward, backend.lstm_backward
    try:
        rng = np.random.default_rng(2)
        params = init_parameters(rng)
        obs = Observation(rng.normal(0, 2e-3, (16, 5)), np.eye(3)[rng.integers(3, size=16)])

        def step():
            policy, tape = forward_actor(params, obs)
            backward(tape, policy.probs)

        return {"actor forward+backward": time_call(step, repeat)}
    finally:
        kernels.lstm_forward, kernels.lstm_backward = saved


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--json", help="also write the timings to this file")
    args = ap.parse_args(argv)
    backends = {"python": kernels.python}
    if kernels.compiled is not None:
        backends["compiled"] = kernels.compiled
    else:
        print("compiled extension not importable; timing the numpy fallback only")
    results = {name: {**kernel_rows(b, args.repeat), **network_row(b, args.repeat)}
               for name, b in backends.items()}
    names = list(results["python"])
    print(f"{'kernel':28s} {'python us':>12s} {'compiled us':>12s} {'speedup':>8s}")
    for k in names:
        py = results["python"][k]
        co = results.get("compiled", {}).get(k)
        tail = f"{co:12.1f} {py / co:7.2f}x" if co else f"{'-':>12s} {'-':>8s}"
        print(f"{k:28s} {py:12.1f} {tail}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return results


if __name__ == "__main__":
    main()
