import math

import numpy as np
import pytest

from approxcache.domain import DEFAULT_KS, PromptRecord, normalize
from approxcache.pipeline import (LatencyParams, Pipeline, PipelineConfig, Prices, Route,
                                  RunReport, amortized_cost, compute_savings, k_opt_analytic,
                                  overall_hit_rate)
from approxcache.policy import PolicyKind
from approxcache.backend import UNREACHABLE
from approxcache.selector import SimKMap
from approxcache.workload import SynthConfig, preload, synth_stream

from conftest import at_similarity, unit


def report(hits, total, n=50, ks=DEFAULT_KS):
    hits = {k: hits.get(k, 0) for k in ks}
    steps = sum(hits[k] * (n - k) for k in ks) + (total - sum(hits.values())) * n
    return RunReport(total, n, list(ks), hits, {}, steps, [1.0] * total)


def expected_latency(o, lat=LatencyParams(), n=50):
    if o.path is Route.CACHE_HIT:
        return lat.search + lat.compute * (n - o.k_used) / n + lat.retrieve
    if o.path is Route.SCRATCH_NO_MATCH:
        return lat.search + lat.compute
    return lat.compute


def record(pid, e, t=0):
    return PromptRecord(pid, "u", t, embedding=e)


@pytest.fixture
def pipe(simk):
    return Pipeline(PipelineConfig(use_predictor=False), simk=simk)


def test_savings_worked_example():
    assert compute_savings(report({25: 8}, 100)) == pytest.approx(0.04, abs=1e-15)
    assert compute_savings(report({}, 100)) == 0.0
    assert compute_savings(report({25: 100}, 100)) == 0.5


def test_savings_matches_steps():
    r = report({5: 3, 10: 7, 25: 11}, 40)
    assert compute_savings(r) == pytest.approx(1 - r.steps_executed / (40 * 50), abs=1e-15)
    assert sum(r.savings_by_k.values()) == pytest.approx(compute_savings(r), abs=1e-15)


def test_overall_hit_rate_sums_h_opt():
    r = report({5: 8, 10: 10, 15: 20, 20: 47, 25: 8}, 100)
    assert overall_hit_rate(r) == pytest.approx(0.93)
    assert sum(r.h_opt.values()) == pytest.approx(overall_hit_rate(r))
    assert r.h[5] == pytest.approx(0.93) and r.h[25] == pytest.approx(0.08)
    assert overall_hit_rate(report({}, 10)) == 0.0


def test_h_is_non_increasing_and_differences_give_h_opt():
    r = report({5: 1, 10: 4, 15: 0, 20: 9, 25: 2}, 30)
    hs = [r.h[k] for k in DEFAULT_KS]
    assert hs == sorted(hs, reverse=True)
    for k, nxt in zip(DEFAULT_KS, DEFAULT_KS[1:]):
        assert r.h_opt[k] == pytest.approx(r.h[k] - r.h[nxt])


def test_k_opt_analytic():
    assert k_opt_analytic("linear", 50, 50) == (25, 0.25)
    k, f = k_opt_analytic("quadratic", 50, 50)
    assert f == pytest.approx(0.3849, abs=1e-4)
    assert k == pytest.approx(50 / math.sqrt(3))
    assert f > k_opt_analytic("linear", 50, 50)[1]
    with pytest.raises(ValueError):
        k_opt_analytic("linear", 60, 50)


def test_k_opt_against_grid_search():
    grid = np.linspace(0, 40, 400_001)
    for shape, h in (("linear", lambda k: 1 - k / 40), ("quadratic", lambda k: 1 - (k / 40) ** 2)):
        savings = h(grid) * grid / 50
        k, f = k_opt_analytic(shape, 40, 50)
        assert grid[np.argmax(savings)] == pytest.approx(k, abs=1e-4)
        assert savings.max() == pytest.approx(f, abs=1e-9)


def test_amortized_cost():
    r = report({}, 10)
    r.latencies = [0.5] * 10  # 2 images per second
    assert amortized_cost(r, Prices(8.0, 0.0, 0.0)) == pytest.approx(8.0 / 7200)
    r.latencies = []
    with pytest.raises(ValueError):
        amortized_cost(r, Prices())


def test_three_paths_and_latency_identity(simk, rng):
    pipe = Pipeline(PipelineConfig(use_predictor=True), simk=simk)
    base = [record(f"c{i}", unit(rng)) for i in range(50)]
    pipe.preload(base)
    near = pipe.handle_prompt(record("near", normalize(at_similarity(rng, base[3].embedding, 0.999))))
    assert near.path is Route.CACHE_HIT and near.k_used == 25
    far = pipe.handle_prompt(record("far", unit(rng)))
    assert far.path is Route.SCRATCH_PREDICTED_MISS and far.sim_latency == 8.59
    off = Pipeline(PipelineConfig(use_predictor=False), simk=simk)
    off.preload(base)
    miss = off.handle_prompt(record("far", unit(rng)))
    assert miss.path is Route.SCRATCH_NO_MATCH
    for o in (near, far, miss):
        assert o.sim_latency == pytest.approx(expected_latency(o), abs=1e-12)


def test_repeat_of_preloaded_prompt_hits_max_k(pipe, rng):
    recs = [record(f"c{i}", unit(rng)) for i in range(10)]
    assert preload(iter(recs), 10, pipe) == 10
    o = pipe.handle_prompt(record("again", recs[4].embedding))
    assert (o.path, o.k_used, o.matched_prompt) == (Route.CACHE_HIT, 25, "c4")
    assert o.similarity == pytest.approx(1.0)


def test_preload_zero_and_capacity(simk, rng):
    pipe = Pipeline(PipelineConfig(use_predictor=False, capacity_items=100), simk=simk)
    assert preload(iter([]), 0, pipe) == 0 and len(pipe.index) == 0
    recs = [record(f"c{i}", unit(rng)) for i in range(100)]
    preload(iter(recs), 100, pipe)
    assert len(pipe.index) <= 100 and len(pipe.store) <= 100


def test_only_scratch_generations_are_admitted(pipe, rng):
    base = record("c", unit(rng))
    pipe.preload([base])
    o = pipe.handle_prompt(record("n", normalize(at_similarity(rng, base.embedding, 0.95))))
    assert o.path is Route.CACHE_HIT
    assert pipe.index.ids() == ["c"]
    pipe.handle_prompt(record("x", unit(rng)))
    assert sorted(pipe.index.ids()) == ["c", "x"]


def test_hit_updates_frequency_of_used_state(pipe, rng):
    base = record("c", unit(rng))
    pipe.preload([base])
    o = pipe.handle_prompt(record("n", normalize(at_similarity(rng, base.embedding, 0.95))))
    assert pipe.policy.metas[("c", o.k_used)].freq == 1
    assert sum(m.freq for m in pipe.policy.metas.values()) == 1


def test_hole_fallback_and_dirty_removal(pipe, rng):
    base = record("c", unit(rng))
    pipe.preload([base])
    q = record("n", base.embedding)
    for k in (25, 20):
        pipe.evict("c", k)
    o = pipe.handle_prompt(q, admit=False)
    assert (o.k_star, o.k_used) == (25, 15)
    for k in (5, 10):
        assert pipe.evict("c", k) == []
    assert pipe.evict("c", 15) == ["c"]
    assert "c" not in pipe.index
    assert pipe.handle_prompt(q, admit=False).path is Route.SCRATCH_NO_MATCH


def test_duplicate_ids_get_unique_keys(pipe, rng):
    pipe.preload([record("same", unit(rng)), record("same", unit(rng))])
    assert len(pipe.index) == 2


def test_predictor_off_always_searches(simk):
    pipe = Pipeline(PipelineConfig(use_predictor=False), simk=simk)
    recs = list(synth_stream(SynthConfig(total_prompts=300)))
    outs = []
    pipe.run(recs, outs.append)
    assert all(o.search_latency == 0.1 for o in outs)
    assert all(o.path is not Route.SCRATCH_PREDICTED_MISS for o in outs)


def test_run_is_deterministic(simk):
    recs = list(synth_stream(SynthConfig(total_prompts=500)))
    a = Pipeline(PipelineConfig(), simk=simk)
    b = Pipeline(PipelineConfig(), simk=simk)
    a.preload(recs[:100])
    b.preload(recs[:100])
    assert a.run(recs[100:]).to_json() == b.run(recs[100:]).to_json()


def test_report_consistency(simk):
    pipe = Pipeline(PipelineConfig(), simk=simk)
    recs = list(synth_stream(SynthConfig(total_prompts=1000)))
    pipe.preload(recs[:200])
    r = pipe.run(recs[200:])
    assert 0.0 <= overall_hit_rate(r) <= 1.0
    assert compute_savings(r) == pytest.approx(
        sum(r.hits_by_k[k] * k for k in DEFAULT_KS) / (800 * 50), abs=1e-15)
    assert compute_savings(r) == pytest.approx(1 - r.steps_executed / (800 * 50), abs=1e-12)
    doc = r.to_dict()
    assert doc["config"]["policy"] == "lcbfu" and "simk" in doc["config"]
    assert "compute savings" in r.to_table()


def test_savings_lower_cost(simk):
    recs = list(synth_stream(SynthConfig(total_prompts=600)))
    warm = Pipeline(PipelineConfig(), simk=simk)
    warm.preload(recs[:300])
    never = SimKMap(tuple((k, UNREACHABLE) for k in DEFAULT_KS))
    cold = Pipeline(PipelineConfig(), simk=never)
    rw, rc = warm.run(recs[300:]), cold.run(recs[300:])
    assert compute_savings(rw) > compute_savings(rc) == 0.0
    assert rw.throughput > rc.throughput
    assert amortized_cost(rw, Prices()) < amortized_cost(rc, Prices())


def test_single_k_pipeline(simk, rng):
    pipe = Pipeline(PipelineConfig(ks=(25,), use_predictor=False), simk=simk)
    base = record("c", unit(rng))
    pipe.preload([base])
    assert pipe.store.available_ks("c") == [25]
    assert pipe.handle_prompt(record("q", base.embedding)).k_used == 25


def test_retrain_after_five_percent_change(simk, rng):
    pipe = Pipeline(PipelineConfig(use_predictor=True), simk=simk)
    pipe.preload([record(f"c{i}", unit(rng)) for i in range(100)])
    trained = pipe.model
    for i in range(5):
        pipe.handle_prompt(record(f"n{i}", unit(rng)))
    assert pipe.model is trained
    pipe.handle_prompt(record("n5", unit(rng)))
    assert pipe.model is not trained and pipe.model.trained_on_count == 106


@pytest.mark.parametrize("kind", list(PolicyKind))
def test_store_never_exceeds_capacity(simk, kind):
    pipe = Pipeline(PipelineConfig(capacity_items=50, policy=kind), simk=simk)
    pipe.run(synth_stream(SynthConfig(total_prompts=400)))
    assert len(pipe.store) <= 50
    assert set(pipe.index.ids()) == set(pipe.store.prompts())
