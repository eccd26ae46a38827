"""Compare the numba and numpy MLP kernels on the scheduler's network shape.

    python benchmarks/bench_kernels.py            # kernel micro-benchmark
    python benchmarks/bench_kernels.py --e2e 300  # plus a short CDPA-A2C run per backend

The end-to-end mode re-launches the simulator with QOSCHED_NUMBA=1 and =0,
because the backend is fixed at import time.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from qosched import kernels
from qosched.a2c import obs_size
from qosched.nn import MLP


def bench(forward, update, net, xs, reps):
    acts = net.acts
    forward(net.weights, net.biases, xs[0], acts)
    update(net.weights, net.biases, xs[0], acts, np.zeros(net.sizes[-1]), 0.0, 0.0)  # compile
    t0 = time.perf_counter()
    for i in range(reps):
        forward(net.weights, net.biases, xs[i % len(xs)], acts)
    t_fwd = (time.perf_counter() - t0) / reps
    dout = np.full(net.sizes[-1], 1e-3)
    t0 = time.perf_counter()
    for i in range(reps):
        x = xs[i % len(xs)]
        forward(net.weights, net.biases, x, acts)
        update(net.weights, net.biases, x, acts, dout, 1e-6, 100.0)
    t_upd = (time.perf_counter() - t0) / reps
    return t_fwd, t_upd


E2E = """
import time
from qosched import kernels
from qosched.domain import validate_config
from qosched.engine import run
t = time.perf_counter()
run(validate_config(dict(scheduler="CDPAA2C", n_ue=90, sim_ttis={ttis}, seed=0)))
print(kernels.BACKEND, time.perf_counter() - t)
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--candidates", type=int, default=50)
    ap.add_argument("--e2e", type=int, default=0, help="TTIs of an end-to-end run per backend")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n_in = obs_size(args.candidates)
    sizes = [n_in, 256, 256, 256, args.candidates + 1]
    # observations are sparse: roughly 15 of 50 candidate slots filled
    xs = [rng.random(n_in) * (rng.random(n_in) < 0.3) for _ in range(64)]
    print(f"network {sizes}, {args.reps} repetitions")
    backends = [("numpy", kernels.forward_numpy, kernels.backward_update_numpy)]
    if hasattr(kernels, "forward_numba"):
        backends.append(("numba", kernels.forward_numba, kernels.backward_update_numba))
    results = {}
    for name, fwd, upd in backends:
        net = MLP(sizes, np.random.default_rng(1))
        results[name] = bench(fwd, upd, net, xs, args.reps)
        print(f"{name:6s} forward {results[name][0] * 1e6:8.1f} us   "
              f"forward+update {results[name][1] * 1e6:8.1f} us")
    if "numba" in results:
        print(f"speed-up forward {results['numpy'][0] / results['numba'][0]:.1f}x, "
              f"forward+update {results['numpy'][1] / results['numba'][1]:.1f}x")

    if args.e2e:
        for flag in ("1", "0"):
            env = dict(os.environ, QOSCHED_NUMBA=flag)
            out = subprocess.run([sys.executable, "-c", E2E.format(ttis=args.e2e)], env=env,
                                 capture_output=True, text=True, check=True).stdout.split()
            print(f"end-to-end {args.e2e} TTIs, 90 UEs, backend {out[0]}: {float(out[1]):.1f} s")


if __name__ == "__main__":
    main()
