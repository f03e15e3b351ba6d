"""Which single K saves the most compute when hit-rate decays with K?

Builds a workload whose reuse rate at K falls linearly to zero at K=50, runs
one pipeline per K and compares the measured savings with the closed form.
"""
import numpy as np

from approxcache import (Pipeline, PipelineConfig, SyntheticBackend, compute_savings,
                         hit_curve_workload, k_opt_analytic, overall_hit_rate, profile,
                         similarity_sweep)

grid = tuple(range(5, 50, 5))
backend = SyntheticBackend(ks=grid)
simk = profile(backend, similarity_sweep(backend), grid)

for shape, curve in (("linear", lambda k: 1 - k / 50), ("quadratic", lambda k: 1 - (k / 50) ** 2)):
    preload, queries = hit_curve_workload(simk.thresholds, curve, 2_000, seed=1)
    print(f"{shape} decay")
    print(f"{'K':>4} {'h(K)':>8} {'savings':>9}")
    best = (0, 0.0)
    for k in grid:
        pipe = Pipeline(PipelineConfig(ks=(k,), use_predictor=False, capacity_items=len(preload)),
                        simk=simk.restrict([k]), backend=SyntheticBackend(ks=(k,)))
        pipe.preload(preload)
        r = pipe.run(queries)
        f = compute_savings(r)
        best = max(best, (k, f), key=lambda t: t[1])
        print(f"{k:>4} {overall_hit_rate(r):>8.3f} {f:>9.4f}")
    k_opt, f_max = k_opt_analytic(shape, 50, 50)
    print(f"measured best K={best[0]} ({best[1]:.4f}); closed form K={k_opt:.1f} ({f_max:.4f})\n")
