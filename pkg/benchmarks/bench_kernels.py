"""Time the hot kernels compiled with numba against the plain-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

The fallback numbers come from a child process started with
BANKCONTAGION_DISABLE_NUMBA=1.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

FLAG = "BANKCONTAGION_DISABLE_NUMBA"


def workloads():
    from bankcontagion import InitialConditions, OcpSpec, Parameters, kernels, solve_direct

    beta, gamma, n, b = 0.00133, 0.0496, 169.0, 1.5
    steps, h = 3000, 0.01
    controls = np.linspace(0.17, 0.2, 300)
    bolza = kernels.empty_states(steps, 4)
    mayer = kernels.empty_states(steps, 3)
    lam = kernels.empty_states(steps, 3)
    grad = np.empty(300)
    x4 = np.array([168.0, 1.0, 0.0, 0.0])
    x3 = np.array([168.0, 0.0, 0.0])
    kernels.rk4_mayer(beta, gamma, n, b, x3, h, steps, controls, mayer)
    kernels.rk4_bolza(beta, gamma, b, x4, h, steps, controls, bolza)
    spec = OcpSpec(Parameters(beta, gamma), InitialConditions.canonical(), 30.0)

    def observe():
        rec, tail = np.zeros((1, 3)), np.zeros(2)
        kernels.sir_observe(beta, gamma, x4[:3], 0.01, 45625, np.array([3000]), 1.0, rec, tail)

    return {
        "rk4_bolza (3000 steps)": lambda: kernels.rk4_bolza(beta, gamma, b, x4, h, steps, controls, bolza),
        "rk4_mayer (3000 steps)": lambda: kernels.rk4_mayer(beta, gamma, n, b, x3, h, steps, controls, mayer),
        "adjoint gradient (3000 steps)": lambda: kernels.mayer_adjoint_gradient(
            beta, gamma, n, b, h, steps, controls, mayer, grad
        ),
        "costate sweep (3000 steps)": lambda: kernels.rk4_costate(
            beta, gamma, h, steps, controls, bolza, np.array([0.0, 1.0, 0.0]), lam
        ),
        "calibration observe (365 days)": observe,
        "solve_direct (T=30, 300 cells)": lambda: solve_direct(spec),
    }


def measure(repeat):
    out = {}
    for name, fn in workloads().items():
        fn()  # compile / warm up
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        print(json.dumps(measure(max(1, args.repeat // 2))))
        return
    compiled = measure(args.repeat)
    env = dict(os.environ, **{FLAG: "1"})
    done = subprocess.run(
        [sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    fallback = json.loads(done.stdout)
    print(f"{'workload':<34} {'numba':>12} {'python':>12} {'speed-up':>9}")
    for name, fast in compiled.items():
        slow = fallback[name]
        print(f"{name:<34} {fast * 1e3:>10.3f}ms {slow * 1e3:>10.1f}ms {slow / fast:>8.0f}x")


if __name__ == "__main__":
    main()
