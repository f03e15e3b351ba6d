import numpy as np
import pytest

from approxcache import SyntheticBackend, profile, similarity_sweep


@pytest.fixture(scope="session")
def backend():
    return SyntheticBackend()


@pytest.fixture(scope="session")
def simk(backend):
    return profile(backend, similarity_sweep(backend), alpha=0.9)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit(rng, dim=64):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def at_similarity(rng, base, s):
    """A unit vector with cosine ``s`` to unit vector ``base``."""
    u = rng.standard_normal(len(base))
    u -= np.dot(u, base) * base
    u /= np.linalg.norm(u)
    return s * base + np.sqrt(max(0.0, 1 - s * s)) * u


# acceptance results, filled in by test_acceptance.py and printed after the run
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {cid:>2}. {name}: {detail}")
