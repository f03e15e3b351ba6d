"""How similar must a cached prompt be before we can skip K denoising steps?

Profiles the similarity-to-K map on the synthetic backend and lines it up
with the exact worst-case threshold, for a loose and a strict quality target.
"""
from approxcache import SyntheticBackend, profile, similarity_sweep
from approxcache.backend import UNREACHABLE, BackendConfig

backend = SyntheticBackend()
pairs = similarity_sweep(backend)
print(f"{len(pairs)} query/cached pairs on the sweep grid")
print(f"scratch quality of any prompt: {backend.scratch_quality():.4f}\n")

for alpha in (0.9, 0.99):
    simk = profile(backend, pairs, alpha=alpha)
    print(f"alpha = {alpha}")
    print(f"{'K':>4} {'profiled':>10} {'analytic':>10}")
    for k, s in simk.thresholds:
        print(f"{k:>4} {s:>10.4f} {backend.analytic_min_similarity(k, alpha):>10.4f}")
    print()

# the more steps we skip, the closer the cached prompt has to be;
# once concepts freeze no similarity short of an exact copy helps
frozen = SyntheticBackend(BackendConfig(freeze_step=20))
simk = profile(frozen, similarity_sweep(frozen))
for k, s in simk.thresholds:
    print(f"freeze at 20, K={k:>2}: {'unreachable' if s >= UNREACHABLE else f'{s:.4f}'}")
