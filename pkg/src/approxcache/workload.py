"""Prompt streams: JSON Lines trace replay and a seeded synthetic generator."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional

import numpy as np

from .domain import DEFAULT_DIM, PromptRecord, normalize

log = logging.getLogger(__name__)


def embed_text(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Deterministic stand-in for a text encoder: the text's hash seeds a random unit vector."""
    if not text:
        raise ValueError("cannot embed empty text")
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return normalize(rng.standard_normal(dim))


# -- trace replay ------------------------------------------------------------


@dataclass
class ReplayResult:
    records: list[PromptRecord]
    skipped: int = 0
    reordered: bool = False

    def __iter__(self) -> Iterator[PromptRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def replay_trace(path) -> ReplayResult:
    """Read a JSON Lines trace of ``{id, user, ts_ms, text?, embedding?}`` records.

    Malformed lines are logged and skipped. Records are returned in timestamp
    order (stable, so equal timestamps keep file order).
    """
    records = []
    skipped = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                emb = row.get("embedding")
                records.append(
                    PromptRecord(
                        id=str(row["id"]),
                        user=str(row.get("user", "")),
                        timestamp=int(row["ts_ms"]),
                        text=row.get("text") or None,
                        embedding=None if emb is None else np.asarray(emb, dtype=np.float64),
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                skipped += 1
                log.warning("%s:%d: skipping record (%s)", path, lineno, exc)
    ts = [r.timestamp for r in records]
    reordered = any(b < a for a, b in zip(ts, ts[1:]))
    if reordered:
        log.warning("%s: timestamps out of order; replaying in sorted order", path)
        records.sort(key=lambda r: r.timestamp)
    return ReplayResult(records, skipped, reordered)


def write_trace(records: Iterable[PromptRecord], path) -> int:
    n = 0
    with open(path, "w") as fh:
        for r in records:
            row = {"id": r.id, "user": r.user, "ts_ms": r.timestamp}
            if r.text is not None:
                row["text"] = r.text
            if r.embedding is not None:
                row["embedding"] = [float(x) for x in r.embedding]
            fh.write(json.dumps(row) + "\n")
            n += 1
    return n


# -- synthetic stream ---------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    n_clusters: int = 200
    zipf_exponent: float = 1.0
    sigma: float = 0.06
    n_users: int = 500
    session_length: int = 5
    repeat_prob: float = 0.1
    total_prompts: int = 10_000
    seed: int = 0
    dim: int = DEFAULT_DIM
    interarrival_ms: int = 1_000
    # per-cluster noise levels assigned at random; empty means every cluster uses sigma
    cluster_sigmas: tuple[float, ...] = ()

    def __post_init__(self):
        if self.sigma < 0 or any(s < 0 for s in self.cluster_sigmas):
            raise ValueError("sigma must be non-negative")
        if self.zipf_exponent <= 0:
            raise ValueError("zipf_exponent must be positive")
        if not 0.0 <= self.repeat_prob <= 1.0:
            raise ValueError("repeat_prob must lie in [0, 1]")
        if min(self.n_clusters, self.n_users, self.session_length) < 1:
            raise ValueError("cluster, user and session counts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    logw = -exponent * np.log(np.arange(1, n + 1))
    w = np.exp(logw - logw.max())
    return w / w.sum()


def synth_stream(cfg: SynthConfig) -> Iterator[PromptRecord]:
    """Clustered prompts with Zipf popularity and per-user sessions.

    Each prompt is a Zipf-chosen cluster centre plus isotropic Gaussian noise of
    standard deviation ``sigma`` per coordinate (or the cluster's own level
    from ``cluster_sigmas``), renormalised. With probability
    ``repeat_prob`` a user instead resubmits their previous prompt verbatim.
    Users arrive in sessions of ``session_length`` consecutive prompts.
    """
    rng = np.random.default_rng(cfg.seed)
    centers = rng.standard_normal((cfg.n_clusters, cfg.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    weights = zipf_weights(cfg.n_clusters, cfg.zipf_exponent)
    if cfg.cluster_sigmas:
        sigmas = rng.choice(np.asarray(cfg.cluster_sigmas, dtype=float), size=cfg.n_clusters)
    else:
        sigmas = np.full(cfg.n_clusters, cfg.sigma)
    last: dict[int, np.ndarray] = {}
    user = 0
    for i in range(cfg.total_prompts):
        if i % cfg.session_length == 0:
            user = int(rng.integers(cfg.n_users))
        if user in last and rng.random() < cfg.repeat_prob:
            emb = last[user]
        else:
            c = rng.choice(cfg.n_clusters, p=weights)
            emb = normalize(centers[c] + sigmas[c] * rng.standard_normal(cfg.dim))
        last[user] = emb
        yield PromptRecord(
            id=f"p{i:07d}", user=f"u{user}", timestamp=i * cfg.interarrival_ms, embedding=emb
        )


def intra_cluster_similarity(sigma: float, dim: int = DEFAULT_DIM, samples: int = 2_000,
                             seed: int = 0) -> float:
    """Mean cosine similarity of two prompts drawn from the same cluster."""
    rng = np.random.default_rng(seed)
    center = np.zeros(dim)
    center[0] = 1.0
    a = center + sigma * rng.standard_normal((samples, dim))
    b = center + sigma * rng.standard_normal((samples, dim))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    return float(np.mean(np.sum(a * b, axis=1)))


def sigma_calibration(sigmas=None, dim: int = DEFAULT_DIM, seed: int = 0) -> list[tuple[float, float]]:
    """Table of ``(sigma, expected intra-cluster similarity)``, similarity decreasing."""
    if sigmas is None:
        sigmas = np.round(np.linspace(0.0, 0.5, 51), 4)
    return [(float(s), intra_cluster_similarity(s, dim, seed=seed)) for s in sigmas]


def sigma_for_similarity(target: float, dim: int = DEFAULT_DIM, seed: int = 0) -> float:
    """Noise level whose expected intra-cluster similarity is ``target`` (interpolated)."""
    table = sigma_calibration(dim=dim, seed=seed)
    sig = np.array([s for s, _ in table])
    sim = np.array([m for _, m in table])
    # np.interp wants increasing x
    return float(np.interp(target, sim[::-1], sig[::-1]))


def preload(stream: Iterable[PromptRecord], n: int, pipeline) -> int:
    """Warm ``pipeline`` with the first ``n`` records of ``stream``; returns how many were used."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return pipeline.preload(itertools.islice(stream, n))


# -- engineered hit-rate curves ------------------------------------------------


def hit_curve_workload(
    thresholds,
    hit_rate: Callable[[int], float],
    n_queries: int,
    dim: int = DEFAULT_DIM,
    seed: int = 0,
) -> tuple[list[PromptRecord], list[PromptRecord]]:
    """Cached prompts plus queries whose reuse rate at each K follows ``hit_rate``.

    ``thresholds`` is a sequence of ``(K, min_similarity)``. Query ``i`` is
    placed against its own cached prompt at a similarity chosen so that the
    fraction of queries above the threshold of K is ``hit_rate(K)``; the
    target curve must be non-increasing in K. Returns ``(preload, queries)``.
    """
    rng = np.random.default_rng(seed)
    rows = sorted(thresholds)
    targets = [min(1.0, max(0.0, hit_rate(k))) for k, _ in rows]
    if any(b > a + 1e-12 for a, b in zip(targets, targets[1:])):
        raise ValueError("target hit-rate curve must be non-increasing in K")
    # similarity bands: below the first threshold, between thresholds, above the last
    edges = [-0.2] + [s for _, s in rows] + [1.0]
    mass = [1.0 - targets[0]] + [a - b for a, b in zip(targets, targets[1:])] + [targets[-1]]
    counts = np.floor(np.array(mass) * n_queries + 1e-9).astype(int)
    counts[-1] += n_queries - counts.sum()
    sims = []
    for band, c in enumerate(counts):
        lo, hi = edges[band], edges[band + 1]
        lo, hi = lo + 0.2 * (hi - lo), hi - 0.2 * (hi - lo)
        sims.extend(rng.uniform(lo, hi, size=c))
    sims = np.array(sims)
    rng.shuffle(sims)
    preload, queries = [], []
    for i, s in enumerate(sims):
        cached = normalize(rng.standard_normal(dim))
        u = rng.standard_normal(dim)
        u -= np.dot(u, cached) * cached
        u /= np.linalg.norm(u)
        query = normalize(s * cached + math.sqrt(max(0.0, 1 - s * s)) * u)
        preload.append(PromptRecord(f"c{i:06d}", "preload", i, embedding=cached))
        queries.append(PromptRecord(f"q{i:06d}", "bench", n_queries + i, embedding=query))
    return preload, queries
