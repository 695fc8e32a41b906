"""Time the compiled and pure-Python event kernels on the same chain.

    python3 benchmarks/bench_kernels.py --n 100000 --events 2000000

Both kernels consume the same uniforms, so the script also checks that their
trajectories are identical before reporting the speed-up.
"""

import argparse
import json
import time

import numpy as np

from podsim import ctmc
from podsim.core import SystemConfig, heavy_traffic_lambda, solve_implicit_d


def time_kernel(config: SystemConfig, events: int, kernel: str, repeat: int):
    best = float("inf")
    tr = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        tr = ctmc.simulate(config, events=events, kernel=kernel)
        best = min(best, time.perf_counter() - t0)
    return best, tr


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--b", type=int, default=8)
    ap.add_argument("--gamma", type=float, default=0.25)
    ap.add_argument("--m", type=int, default=1)
    ap.add_argument("--events", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    sol = solve_implicit_d(args.n, args.gamma, args.m, strict=False)
    config = SystemConfig(n=args.n, b=args.b, lam=heavy_traffic_lambda(args.n, args.gamma), d=sol.d_int,
                          gamma=args.gamma, m=args.m, seed=0, allow_d_gt_n=True)
    results = {"n": args.n, "b": args.b, "d": config.d, "events": args.events, "default_kernel": ctmc.KERNEL}
    t_py, tr_py = time_kernel(config, args.events, "python", args.repeat)
    results["python_seconds"] = t_py
    results["python_events_per_second"] = args.events / t_py
    if ctmc.KERNEL == "compiled":
        t_c, tr_c = time_kernel(config, args.events, "compiled", args.repeat)
        results["compiled_seconds"] = t_c
        results["compiled_events_per_second"] = args.events / t_c
        results["speedup"] = t_py / t_c
        results["identical"] = bool(np.array_equal(tr_py.states, tr_c.states) and np.array_equal(tr_py.int_s, tr_c.int_s))
    else:
        results["compiled_seconds"] = None
    print(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
