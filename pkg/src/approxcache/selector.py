"""Similarity-to-K threshold maps: offline profiling and runtime lookup."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .backend import UNREACHABLE, SyntheticBackend
from .domain import LatentState, cosine_similarity, normalize


@dataclass(frozen=True)
class SimKMap:
    """Minimum similarity at which each K may be reused, ascending in K."""

    thresholds: tuple[tuple[int, float], ...]
    alpha: float = 0.9

    def __post_init__(self):
        ks = [k for k, _ in self.thresholds]
        if ks != sorted(set(ks)):
            raise ValueError("thresholds must be strictly increasing in K")
        sims = [s for _, s in self.thresholds]
        if any(b < a for a, b in zip(sims, sims[1:])):
            raise ValueError("minimum similarity must be non-decreasing in K")

    @property
    def ks(self) -> tuple[int, ...]:
        return tuple(k for k, _ in self.thresholds)

    def __getitem__(self, k: int) -> float:
        return dict(self.thresholds)[k]

    def restrict(self, ks) -> "SimKMap":
        keep = set(ks)
        return SimKMap(tuple((k, s) for k, s in self.thresholds if k in keep), self.alpha)

    def to_json(self) -> str:
        doc = {
            "alpha": self.alpha,
            "thresholds": [{"k": k, "min_sim": s} for k, s in self.thresholds],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SimKMap":
        doc = json.loads(text)
        rows = sorted((int(r["k"]), float(r["min_sim"])) for r in doc["thresholds"])
        return cls(tuple(rows), float(doc.get("alpha", 0.9)))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "SimKMap":
        return cls.from_json(Path(path).read_text())


# Hand-tuned thresholds for real prompt traffic, kept as a fixed preset.
REFERENCE_THRESHOLDS = SimKMap(((5, 0.65), (10, 0.75), (15, 0.85), (20, 0.9), (25, 0.95)), 0.9)


def select_k(s: float, simk: SimKMap, offset: int = 0) -> int:
    """Largest K whose threshold ``s`` strictly exceeds; 0 when none does.

    ``offset`` moves a non-zero selection that many buckets up (or down),
    trading quality for savings.
    """
    chosen = -1
    for i, (_, min_sim) in enumerate(simk.thresholds):
        if s > min_sim:
            chosen = i
    if chosen < 0:
        return 0
    if offset:
        chosen = min(max(chosen + offset, 0), len(simk.thresholds) - 1)
    return simk.thresholds[chosen][0]


def resolve_k(k_star: int, available) -> Optional[int]:
    """Largest available K not above ``k_star``, or ``None``."""
    fit = [k for k in available if k <= k_star]
    return max(fit) if fit else None


@dataclass(frozen=True)
class ProfilePair:
    query: np.ndarray = field(repr=False)
    cached: np.ndarray = field(repr=False)
    states: dict[int, LatentState] = field(repr=False)
    similarity: float = 0.0


def profile(backend, pairs, ks=None, alpha: float = 0.9, seed_of=None) -> SimKMap:
    """Profile the minimum safe similarity for each K.

    For every K, ``min_sim`` is the smallest observed similarity ``s`` such that
    every pair with similarity ``>= s`` reconditions to a quality strictly above
    ``alpha`` times the query's scratch quality. A K where even the most similar
    pair fails, where only exact duplicates pass, or where the output no longer
    responds to the new prompt is marked :data:`UNREACHABLE`. Thresholds are then made
    non-decreasing in K by a running maximum.
    """
    pairs = sorted(pairs, key=lambda p: p.similarity)
    ks = tuple(sorted(ks or backend.ks))
    if not pairs:
        raise ValueError("profiling needs at least one pair")
    # pairs built for the same nominal similarity differ only by rounding noise
    levels = np.round(np.array([p.similarity for p in pairs]), 9)
    floors = []
    for i, p in enumerate(pairs):
        seed = seed_of(i) if seed_of else None
        scratch = backend.generate(p.query, seed)
        floors.append(alpha * backend.quality(scratch.final, backend.target(p.query)))
    rows = []
    running = -math.inf
    for k in ks:
        ok = np.empty(len(pairs), dtype=bool)
        for i, p in enumerate(pairs):
            out = backend.recondition(p.query, p.states[k], k)
            ok[i] = backend.quality(out.final, backend.target(p.query)) > floors[i]
        failed = levels[~ok]
        if len(failed) == 0:
            min_sim = float(levels[0])
        else:
            above = levels[levels > failed.max()]
            min_sim = float(above[0]) if len(above) else UNREACHABLE
        if min_sim >= 1.0 - 1e-9 or _frozen(backend, pairs, k):
            min_sim = UNREACHABLE
        running = max(running, min_sim)
        rows.append((k, running))
    return SimKMap(tuple(rows), alpha)


def _frozen(backend, pairs, k: int, sample: int = 8) -> bool:
    """True when reconditioning from step ``k`` ignores the new prompt."""
    distinct = [p for p in pairs if p.similarity < 1.0 - 1e-9][:sample]
    if not distinct:
        return False
    for p in distinct:
        new = backend.recondition(p.query, p.states[k], k).final.values
        old = backend.recondition(p.cached, p.states[k], k).final.values
        if not np.array_equal(new, old):
            return False
    return True


def similarity_sweep(backend: SyntheticBackend, step: float = 0.005, lo: float = -1.0,
                     hi: float = 1.0, n_random: int = 1, seed: int = 0,
                     fine_above: float = 0.99) -> list[ProfilePair]:
    """Query/cached prompt pairs on a dense similarity grid.

    At each grid similarity the query is placed against the cached prompt's
    noise direction (the least favourable alignment), along it (the most
    favourable) and along ``n_random`` random orthogonal directions, so the
    sample covers the full range of outcomes at that similarity. Above
    ``fine_above`` the grid is ten times denser, since strict quality targets
    put thresholds close to 1.
    """
    if backend.latent_dim != backend.embed_dim:
        raise ValueError("the sweep places queries in latent space; needs latent_dim == embed_dim")
    rng = np.random.default_rng(seed)
    dim = backend.embed_dim
    grid = np.arange(lo, hi + step / 2, step)
    fine = np.arange(max(lo, fine_above), hi, step / 10)
    grid = np.unique(np.clip(np.round(np.concatenate([grid, fine]), 12), -1.0, 1.0))
    pairs = []
    for j, s in enumerate(grid):
        cached = normalize(rng.standard_normal(dim))
        gen = backend.generate(cached, seed=j)
        z = backend.initial_noise(backend.target(cached), j)
        directions = [-z, z]
        for _ in range(n_random):
            u = rng.standard_normal(dim)
            u -= np.dot(u, cached) * cached
            directions.append(normalize(u))
        for u in directions:
            query = s * cached + math.sqrt(max(0.0, 1.0 - s * s)) * np.asarray(u)
            if np.linalg.norm(query) == 0:
                continue
            query = normalize(query)
            pairs.append(ProfilePair(query, cached, gen.intermediates,
                                     cosine_similarity(query, cached)))
    return pairs
