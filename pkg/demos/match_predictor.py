"""What does the match predictor buy us?

Without it every request pays for a vector search; with it, requests that
look novel go straight to the GPU. The searches that still come back empty
should be about 1 - max(h, c_p) of all requests.
"""
from approxcache import (Pipeline, PipelineConfig, SynthConfig, compute_savings,
                         overall_hit_rate, synth_stream)

simk = None
for sigma in (0.06, 0.1, 0.15):
    records = list(synth_stream(SynthConfig(total_prompts=6_000, sigma=sigma)))
    print(f"sigma = {sigma}")
    for use in (False, True):
        pipe = Pipeline(PipelineConfig(use_predictor=use), simk=simk)
        simk = pipe.simk
        pipe.preload(records[:1_000])
        r = pipe.run(records[1_000:])
        h = overall_hit_rate(r)
        line = (f"  predictor {'on ' if use else 'off'} hit-rate {h:.3f} savings {compute_savings(r):.4f}"
                f" mean latency {r.latency_summary()['mean']:.3f}s wasted searches {r.wasted_search_fraction:.4f}")
        if use:
            c_p = r.predictor_precision
            line += f" (c_p {c_p:.3f}, expected {1 - max(h, c_p):.4f})"
        print(line)
