"""Time the compiled sweep kernel against the numpy fallback.

    python benchmarks/bench_sweep.py --sweeps 2000 --regions 10 --days 60

Both backends run the same chain (same seed, same pre-drawn random numbers),
so the script also reports the largest parameter difference between them.
"""
import argparse
import time

import numpy as np

from stsir import backend
from stsir.forecast import scenario_from_dict, simulate_panel
from stsir.mcmc import SamplerConfig, run_chain
from stsir.model import ModelSpec, Variant


def time_backend(name, panel, spec, graph, cfg, repeats):
    best, trace = float("inf"), None
    for _ in range(repeats):
        t0 = time.perf_counter()
        trace = run_chain(panel, spec, graph, cfg, kernel=name)
        best = min(best, time.perf_counter() - t0)
    return best, trace


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sweeps", type=int, default=2000)
    ap.add_argument("--regions", type=int, default=10)
    ap.add_argument("--days", type=int, default=60)
    ap.add_argument("--variant", type=int, default=3, choices=range(1, 6))
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    sc = scenario_from_dict({"m": args.regions, "T": args.days, "seed": 0, "model": {"variant": args.variant},
                             "params": {"b0": -9.5, "b1": 0.8 if args.variant != 4 else 0.4, "b2": 0.5},
                             "sus_init": 1e5})
    panel = simulate_panel(sc)
    spec = ModelSpec(variant=Variant(args.variant))
    cfg = SamplerConfig(n_iter=args.sweeps, burn_in=args.sweeps // 2, thin=1, store_mu=False)

    results = {}
    for name in sorted(backend.KERNELS):
        results[name] = time_backend(name, panel, spec, sc.graph, cfg, args.repeats)
        secs = results[name][0]
        print(f"{name:>7}: {secs:8.3f} s  {args.sweeps / secs:10.0f} sweeps/s")
    if len(results) == 2:
        (tp, a), (tc, b) = results["python"], results["cython"]
        print(f"speedup: {tp / tc:.1f}x")
        print(f"max |theta_python - theta_cython|: {np.abs(a.theta - b.theta).max():.2e}")
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
