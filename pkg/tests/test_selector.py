import json

import numpy as np
import pytest

from approxcache.backend import UNREACHABLE, BackendConfig, SyntheticBackend
from approxcache.domain import DEFAULT_KS
from approxcache.selector import (REFERENCE_THRESHOLDS, SimKMap, profile, resolve_k, select_k,
                                  similarity_sweep)


@pytest.mark.parametrize("s,k", [(0.96, 25), (0.92, 20), (0.87, 15), (0.8, 10), (0.7, 5), (0.6, 0)])
def test_reference_map(s, k):
    assert select_k(s, REFERENCE_THRESHOLDS) == k


@pytest.mark.parametrize("s,k", [(0.95, 20), (0.9, 15), (0.85, 10), (0.75, 5), (0.65, 0)])
def test_threshold_itself_falls_to_lower_bucket(s, k):
    assert select_k(s, REFERENCE_THRESHOLDS) == k


def test_exact_duplicate_gets_max_k():
    assert select_k(1.0, REFERENCE_THRESHOLDS) == 25


def test_offset_shifts_nonzero_selection():
    assert select_k(0.8, REFERENCE_THRESHOLDS, offset=1) == 15
    assert select_k(0.96, REFERENCE_THRESHOLDS, offset=1) == 25
    assert select_k(0.8, REFERENCE_THRESHOLDS, offset=-5) == 5
    assert select_k(0.6, REFERENCE_THRESHOLDS, offset=2) == 0


@pytest.mark.parametrize("k_star,available,expected", [
    (20, [5, 10, 25], 10), (20, [5, 10, 20], 20), (5, [10, 25], None), (25, [], None),
])
def test_resolve_k(k_star, available, expected):
    assert resolve_k(k_star, available) == expected


def test_map_validation_and_json(tmp_path):
    with pytest.raises(ValueError):
        SimKMap(((5, 0.9), (10, 0.8)))
    with pytest.raises(ValueError):
        SimKMap(((10, 0.8), (5, 0.9)))
    path = tmp_path / "simk.json"
    REFERENCE_THRESHOLDS.save(path)
    assert SimKMap.load(path) == REFERENCE_THRESHOLDS
    assert json.loads(path.read_text())["thresholds"][0] == {"k": 5, "min_sim": 0.65}


def test_profile_matches_analytic(backend, simk):
    for k, s in simk.thresholds:
        assert abs(s - backend.analytic_min_similarity(k, 0.9)) <= 0.02


def test_profile_is_monotone_and_conservative(simk):
    values = [s for _, s in simk.thresholds]
    assert values == sorted(values)


def test_profile_stricter_alpha(backend, simk):
    strict = profile(backend, similarity_sweep(backend), alpha=0.99)
    for k in DEFAULT_KS:
        assert strict[k] >= simk[k]
        assert abs(strict[k] - backend.analytic_min_similarity(k, 0.99)) <= 0.02


def test_profile_marks_frozen_steps():
    b = SyntheticBackend(BackendConfig(freeze_step=20))
    simk = profile(b, similarity_sweep(b))
    assert simk[20] == UNREACHABLE and simk[25] == UNREACHABLE
    assert simk[15] < 1.0
    assert select_k(1.0, simk) == 15


def test_profiled_thresholds_keep_quality(backend, simk, rng):
    # pairs just above the profiled threshold at the worst alignment still pass
    for k, s in simk.thresholds:
        assert backend.worst_case_quality(s + 1e-6, k) > 0.9 * backend.scratch_quality()


def test_sweep_requires_matching_dims():
    with pytest.raises(ValueError):
        similarity_sweep(SyntheticBackend(latent_dim=32))


def test_sweep_covers_range(backend):
    pairs = similarity_sweep(backend, step=0.1)
    sims = np.array([p.similarity for p in pairs])
    assert sims.min() == pytest.approx(-1.0, abs=1e-9) and sims.max() == pytest.approx(1.0, abs=1e-9)
