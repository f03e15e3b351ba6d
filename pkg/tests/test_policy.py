import numpy as np
import pytest

from approxcache.domain import DEFAULT_KS, LatentState
from approxcache.policy import CacheEntryMeta, CachePolicy, PolicyKind, eviction_key, lcbfu_score
from approxcache.store import StateStore


def states(pid="p"):
    return {k: LatentState(np.full(4, float(k)), k, pid) for k in DEFAULT_KS}


def policy(capacity, kind=PolicyKind.LCBFU):
    return CachePolicy(StateStore(capacity_items=capacity), kind)


def test_lcbfu_scores():
    assert lcbfu_score(CacheEntryMeta("a", 25, 100, 0, 0)) == 2500
    assert lcbfu_score(CacheEntryMeta("b", 5, 200, 0, 0)) == 1000
    assert lcbfu_score(CacheEntryMeta("c", 15, 0, 0, 0)) == 0


def test_record_access():
    pol = policy(10)
    pol.admit("p", states())
    pol.metas[("p", 25)].freq = 99
    assert pol.record_access("p", 25) == 2500
    pol.record_access("p", 5)
    pol.record_access("p", 5)
    assert pol.metas[("p", 5)].freq == 2


def test_access_to_hole_raises():
    pol = policy(10)
    pol.admit("p", states())
    pol.evict("p", 25)
    with pytest.raises(KeyError):
        pol.record_access("p", 25)


def test_admission_at_capacity():
    pol = policy(10)
    assert pol.admit("a", states("a")) == ([], [])
    assert pol.admit("b", states("b")) == ([], [])
    for _ in range(3):
        pol.record_access("a", 25)
    pol.record_access("b", 5)
    before = {item: lcbfu_score(m) for item, m in pol.metas.items()}
    evicted, dirty = pol.admit("c", states("c"))
    assert len(evicted) == 5
    kept = [s for item, s in before.items() if item not in evicted]
    assert max(before[item] for item in evicted) <= min(kept)
    assert dirty == []
    assert len(pol.store) == 10


def test_evicting_last_state_marks_dirty():
    pol = policy(10)
    pol.admit("a", states("a"))
    for k in DEFAULT_KS[:-1]:
        assert pol.evict("a", k) == []
    assert pol.evict("a", 25) == ["a"]
    assert pol.evict("a", 25) == []


def access(pol, pid, k, times):
    for _ in range(times):
        pol.record_access(pid, k)


def test_victim_order_by_kind():
    pol = policy(10)
    pol.admit("a", states("a"))
    pol.admit("b", states("b"))
    for pid in "ab":
        for k in DEFAULT_KS:
            if (pid, k) not in (("a", 5), ("b", 25)):
                access(pol, pid, k, 1000)
    access(pol, "a", 5, 200)
    access(pol, "b", 25, 100)
    # (K=5, f=200) scores 1000 and goes before (K=25, f=100) at 2500
    assert [(m.prompt_id, m.k) for m in pol.victims(2)] == [("a", 5), ("b", 25)]
    lfu = pol.victims(1, PolicyKind.LFU)[0]
    assert (lfu.prompt_id, lfu.k) == ("b", 25)
    fifo = pol.victims(1, PolicyKind.FIFO)[0]
    assert fifo.insert_seq == 0


def test_lfu_ignores_k():
    pol = policy(10, PolicyKind.LFU)
    pol.admit("a", states("a"))
    for k in DEFAULT_KS:
        access(pol, "a", k, 1 if k == 25 else 2)
    assert pol.victims(1)[0].k == 25


def test_lru_evicts_least_recent():
    pol = policy(10, PolicyKind.LRU)
    pol.admit("a", states("a"))
    pol.admit("b", states("b"))
    for k in DEFAULT_KS:
        pol.record_access("a", k)
    evicted, dirty = pol.admit("c", states("c"))
    assert sorted(evicted) == [("b", k) for k in DEFAULT_KS]
    assert dirty == ["b"]


def test_victims_does_not_evict():
    pol = policy(10)
    pol.admit("a", states("a"))
    pol.victims(3)
    assert len(pol) == 5
    with pytest.raises(ValueError):
        pol.victims(6)


@pytest.mark.parametrize("kind", list(PolicyKind))
def test_fuzz_against_full_scan(kind):
    """Every eviction removes items whose key is no larger than any survivor's."""
    rng = np.random.default_rng(7)
    pol = policy(60, kind)
    for i in range(400):
        pid = f"p{i}"
        snapshot = {item: eviction_key(m, kind) for item, m in pol.metas.items()}
        evicted, _ = pol.admit(pid, states(pid))
        if evicted:
            survivors = [key for item, key in snapshot.items() if item not in evicted]
            assert max(snapshot[item] for item in evicted) <= min(survivors)
        live = list(pol.metas)
        for j in rng.choice(len(live), size=min(len(live), 8), replace=False):
            pol.record_access(*live[j])
    assert len(pol.store) <= 60
