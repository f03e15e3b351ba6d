import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from approxcache.domain import (DegenerateEmbeddingError, LatentState, PromptRecord,
                                cosine_similarity, normalize)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_normalize_three_four():
    v = np.zeros(64)
    v[:2] = [3, 4]
    out = normalize(v)
    assert out[0] == pytest.approx(0.6, abs=1e-15)
    assert out[1] == pytest.approx(0.8, abs=1e-15)
    assert not out[2:].any()


def test_normalize_unit_is_identity():
    e1 = np.eye(64)[0]
    assert np.array_equal(normalize(e1), e1)


@pytest.mark.parametrize("bad", [np.zeros(64), np.full(4, np.nan), np.array([np.inf, 1.0])])
def test_normalize_rejects_degenerate(bad):
    with pytest.raises(DegenerateEmbeddingError):
        normalize(bad)


def test_normalize_output_is_read_only():
    out = normalize(np.ones(8))
    with pytest.raises(ValueError):
        out[0] = 2.0


@given(arrays(np.float64, 16, elements=finite))
def test_normalize_has_unit_norm(v):
    if np.linalg.norm(v) < 1e-12:
        return
    assert abs(np.linalg.norm(normalize(v)) - 1.0) <= 1e-9


def test_cosine_cases(rng):
    a = normalize(rng.standard_normal(64))
    b = rng.standard_normal(64)
    b = normalize(b - np.dot(b, a) * a)
    assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity(a, b) == pytest.approx(0.0, abs=1e-12)
    assert cosine_similarity(a, -a) == pytest.approx(-1.0, abs=1e-12)


def test_cosine_dimension_mismatch():
    with pytest.raises(ValueError):
        cosine_similarity(normalize(np.ones(3)), normalize(np.ones(4)))


@given(arrays(np.float64, 8, elements=finite), arrays(np.float64, 8, elements=finite))
def test_cosine_bounded(a, b):
    if np.linalg.norm(a) < 1e-9 or np.linalg.norm(b) < 1e-9:
        return
    assert -1.0 <= cosine_similarity(normalize(a), normalize(b)) <= 1.0


def test_prompt_record_needs_content():
    with pytest.raises(ValueError):
        PromptRecord("p", "u", 0)
    rec = PromptRecord("p", "u", 0, embedding=np.array([3.0, 4.0]))
    assert np.allclose(rec.embedding, [0.6, 0.8])


def test_latent_state_is_frozen():
    st_ = LatentState(np.ones(4), 5, "p")
    with pytest.raises(ValueError):
        st_.values[0] = 0.0
