"""Compare the numba and pure-numpy kernel backends on a full chain.

Usage::

    python3 benchmarks/bench_kernels.py [--preset scenario1] [--iterations 500]

Both backends consume the same pre-drawn variates, so the script also checks
that the two chains agree before reporting per-sweep timings.
"""

import argparse
import time

import numpy as np

from cmbvs.kernels import load_numba_backend, numpy_backend
from cmbvs.sampler import SamplerConfig, run_chain
from cmbvs.simulation import ScenarioSpec, generate


def _time_chain(data, cfg, backend):
    start = time.perf_counter()
    trace = run_chain(data, cfg=cfg, backend=backend)
    return time.perf_counter() - start, trace


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--preset", default="scenario1")
    parser.add_argument("--iterations", type=int, default=500)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args(argv)

    sim = generate(ScenarioSpec.preset(args.preset, seed=args.seed))
    cfg = SamplerConfig(iterations=args.iterations, burn_in=args.iterations // 5, thin=1,
                        seed=args.seed)
    jit = load_numba_backend()
    # warm-up compiles the jitted kernels outside the timed region
    run_chain(sim.data, cfg=SamplerConfig(iterations=20, burn_in=0, thin=1), backend=jit)

    results = {}
    for name, backend in (("numba", jit), ("numpy", numpy_backend)):
        elapsed, trace = _time_chain(sim.data, cfg, backend)
        results[name] = (elapsed, trace)
        print(f"{name:>6}: {elapsed:8.2f} s total  {1e3 * elapsed / args.iterations:8.2f} ms/sweep")

    same = np.allclose(results["numba"][1].alpha, results["numpy"][1].alpha, atol=1e-8)
    speedup = results["numpy"][0] / results["numba"][0]
    print(f"speedup: {speedup:.1f}x  chains agree: {same}")
    return 0 if same else 1


if __name__ == "__main__":
    raise SystemExit(main())
