"""Eviction policies on a workload with a mix of tight and loose prompt clusters.

Tight clusters reuse deep states (large K), loose ones only shallow states.
LCBFU weighs access frequency by the K it saves; LRU, LFU and FIFO do not.
"""
from approxcache import (Pipeline, PipelineConfig, PolicyKind, SynthConfig, compute_savings,
                         overall_hit_rate, synth_stream)

records = list(synth_stream(SynthConfig(total_prompts=10_000, cluster_sigmas=(0.02, 0.09),
                                        n_clusters=300, repeat_prob=0.0)))
simk = None
print(f"{'policy':<7} {'capacity':>8} {'hit-rate':>9} {'savings':>9}")
for cap in (100, 400, 1500):
    for kind in PolicyKind:
        pipe = Pipeline(PipelineConfig(use_predictor=False, capacity_items=cap, policy=kind), simk=simk)
        simk = pipe.simk  # profile once, reuse for every run
        r = pipe.run(records)
        print(f"{kind.value:<7} {cap:>8} {overall_hit_rate(r):>9.3f} {compute_savings(r):>9.4f}")
    print()
