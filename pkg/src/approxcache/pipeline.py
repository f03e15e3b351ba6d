"""Request orchestration, simulated latency accounting and run metrics."""

from __future__ import annotations

import enum
import hashlib
import json
import math
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import predictor as mp
from .backend import BackendConfig, SyntheticBackend
from .domain import DEFAULT_DIM, DEFAULT_KS, PromptRecord
from .index import IndexEntry, VectorIndex, state_key
from .policy import CachePolicy, PolicyKind
from .selector import SimKMap, profile, resolve_k, select_k, similarity_sweep
from .store import LatencyLedger, StateStore
from .workload import embed_text


class Route(str, enum.Enum):
    SCRATCH_PREDICTED_MISS = "scratch_predicted_miss"
    SCRATCH_NO_MATCH = "scratch_no_match"
    CACHE_HIT = "cache_hit"


@dataclass(frozen=True)
class LatencyParams:
    compute: float = 8.59
    search: float = 0.1
    retrieve: float = 0.05

    def __post_init__(self):
        if min(self.compute, self.search, self.retrieve) < 0:
            raise ValueError("latencies must be non-negative")


@dataclass(frozen=True)
class Prices:
    gpu_per_hour: float = 8.144
    index_per_hour: float = 0.12
    store_per_hour: float = 0.09


@dataclass(frozen=True)
class PipelineConfig:
    ks: tuple[int, ...] = DEFAULT_KS
    alpha: float = 0.9
    capacity_items: int = 5_000
    policy: PolicyKind = PolicyKind.LCBFU
    use_predictor: bool = True
    mp_centroids: int = 64
    mp_threshold_quantile: float = 0.99
    mp_retrain_fraction: float = mp.DEFAULT_RETRAIN_FRACTION
    selector_offset: int = 0
    dim: int = DEFAULT_DIM
    latency: LatencyParams = field(default_factory=LatencyParams)
    backend: BackendConfig = field(default_factory=BackendConfig)
    seed: int = 0
    # uncharged index lookups on predicted misses, used only to measure recall
    shadow_search: bool = True
    realtime_scale: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy"] = PolicyKind(self.policy).value
        d["ks"] = list(self.ks)
        return d


@dataclass(frozen=True)
class RequestOutcome:
    prompt_id: str
    path: Route
    k_used: int
    similarity: Optional[float]
    sim_latency: float
    steps_executed: int
    quality: float
    k_star: int = 0
    matched_prompt: Optional[str] = None
    search_latency: float = 0.0
    retrieve_latency: float = 0.0
    compute_latency: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["path"] = Route(self.path).value
        return d


@dataclass
class RunReport:
    total_requests: int
    n_steps: int
    ks: list[int]
    hits_by_k: dict[int, int]
    path_counts: dict[str, int]
    steps_executed: int
    latencies: list[float] = field(repr=False)
    wasted_searches: int = 0
    predicted_true: int = 0
    predicted_true_hits: int = 0
    shadow_hits_predicted_false: int = 0
    compute_seconds: float = 8.59
    config: dict = field(default_factory=dict)
    prices: Optional[Prices] = None

    @property
    def h_opt(self) -> dict[int, float]:
        return {k: self.hits_by_k.get(k, 0) / self.total_requests for k in self.ks}

    @property
    def h(self) -> dict[int, float]:
        """Cumulative hit-rate: fraction of requests served from K or a larger step."""
        out, acc = {}, 0
        for k in sorted(self.ks, reverse=True):
            acc += self.hits_by_k.get(k, 0)
            out[k] = acc / self.total_requests
        return dict(sorted(out.items()))

    @property
    def savings_by_k(self) -> dict[int, float]:
        return {k: v * k / self.n_steps for k, v in self.h_opt.items()}

    @property
    def throughput(self) -> float:
        total = math.fsum(self.latencies)
        return self.total_requests / total if total > 0 else 0.0

    @property
    def vanilla_throughput(self) -> float:
        return 1.0 / self.compute_seconds if self.compute_seconds > 0 else 0.0

    @property
    def wasted_search_fraction(self) -> float:
        return self.wasted_searches / self.total_requests

    @property
    def predictor_precision(self) -> Optional[float]:
        if not self.predicted_true:
            return None
        return self.predicted_true_hits / self.predicted_true

    @property
    def predictor_recall(self) -> Optional[float]:
        would_hit = self.predicted_true_hits + self.shadow_hits_predicted_false
        if not would_hit:
            return None
        return self.predicted_true_hits / would_hit

    def latency_summary(self) -> dict[str, float]:
        lat = np.array(self.latencies)
        return {
            "mean": float(lat.mean()),
            "p50": float(np.percentile(lat, 50)),
            "p90": float(np.percentile(lat, 90)),
            "p99": float(np.percentile(lat, 99)),
            "total": math.fsum(self.latencies),
        }

    def to_dict(self) -> dict:
        d = {
            "total_requests": self.total_requests,
            "n_steps": self.n_steps,
            "hits_by_k": {str(k): self.hits_by_k.get(k, 0) for k in self.ks},
            "h": {str(k): v for k, v in self.h.items()},
            "h_opt": {str(k): v for k, v in self.h_opt.items()},
            "overall_hit_rate": overall_hit_rate(self),
            "compute_savings": compute_savings(self),
            "savings_by_k": {str(k): v for k, v in self.savings_by_k.items()},
            "path_counts": dict(sorted(self.path_counts.items())),
            "steps_executed": self.steps_executed,
            "latency": self.latency_summary(),
            "throughput_per_s": self.throughput,
            "vanilla_throughput_per_s": self.vanilla_throughput,
            "wasted_search_fraction": self.wasted_search_fraction,
            "match_predictor": {
                "predicted_true": self.predicted_true,
                "precision": self.predictor_precision,
                "recall": self.predictor_recall,
            },
            "config": self.config,
        }
        if self.prices is not None:
            d["cost_per_image"] = {
                "approximate_cache": amortized_cost(self, self.prices),
                "vanilla": vanilla_cost(self, self.prices),
            }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        lines = [f"{'K':>4} {'hits':>7} {'h(K)':>8} {'h_opt(K)':>9} {'saved':>8}"]
        h, h_opt, saved = self.h, self.h_opt, self.savings_by_k
        for k in self.ks:
            lines.append(f"{k:>4} {self.hits_by_k.get(k, 0):>7} {h[k]:>8.4f} {h_opt[k]:>9.4f} "
                         f"{saved[k]:>8.4f}")
        lat = self.latency_summary()
        lines += [
            f"requests            {self.total_requests}",
            f"overall hit-rate    {overall_hit_rate(self):.4f}",
            f"compute savings     {compute_savings(self):.4f}",
            f"mean latency (s)    {lat['mean']:.4f}  p99 {lat['p99']:.4f}",
            f"throughput (img/s)  {self.throughput:.4f}  vanilla {self.vanilla_throughput:.4f}",
            f"wasted searches     {self.wasted_search_fraction:.4f}",
        ]
        if self.predictor_precision is not None:
            lines.append(f"predictor precision {self.predictor_precision:.4f}")
        return "\n".join(lines)


def compute_savings(report: RunReport) -> float:
    """Fraction of denoising compute avoided: sum of hits(K) * K over total * N."""
    if report.total_requests == 0:
        raise ValueError("no requests processed")
    saved = sum(report.hits_by_k.get(k, 0) * k for k in report.ks)
    return saved / (report.total_requests * report.n_steps)


def overall_hit_rate(report: RunReport) -> float:
    return sum(report.hits_by_k.get(k, 0) for k in report.ks) / report.total_requests


def k_opt_analytic(shape: str, k_t: float, n: float) -> tuple[float, float]:
    """Best single K and its savings when h(K) decays to zero at ``k_t``.

    ``linear`` means ``h(K) = 1 - K/k_t`` and ``quadratic`` means
    ``h(K) = 1 - (K/k_t)**2``; savings are ``h(K) * K / n``.
    """
    if k_t > n:
        raise ValueError("freeze step cannot exceed the step count")
    if shape == "linear":
        return k_t / 2, k_t / (4 * n)
    if shape == "quadratic":
        return k_t / math.sqrt(3), 2 * k_t / (3 * math.sqrt(3) * n)
    raise ValueError(f"unknown decay shape {shape!r}")


def amortized_cost(report: RunReport, prices: Prices) -> float:
    per_hour = report.throughput * 3600.0
    if per_hour <= 0:
        raise ValueError("throughput is zero")
    return prices.gpu_per_hour / per_hour + (prices.index_per_hour + prices.store_per_hour) / per_hour


def vanilla_cost(report: RunReport, prices: Prices) -> float:
    per_hour = report.vanilla_throughput * 3600.0
    if per_hour <= 0:
        raise ValueError("throughput is zero")
    return prices.gpu_per_hour / per_hour


def _stable_seed(*parts) -> int:
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Pipeline:
    """Serves prompts through predictor, index, selector, store and backend.

    Latency is simulated: each request is charged ``search`` per index lookup,
    ``retrieve`` per state fetched and ``compute * steps / N`` for denoising.
    """

    def __init__(self, config: Optional[PipelineConfig] = None, simk: Optional[SimKMap] = None,
                 backend: Optional[SyntheticBackend] = None):
        self.config = cfg = config or PipelineConfig()
        self.backend = backend or SyntheticBackend(cfg.backend, ks=cfg.ks, embed_dim=cfg.dim)
        if simk is None:
            simk = profile(self.backend, similarity_sweep(self.backend), cfg.ks, cfg.alpha)
        if set(simk.ks) != set(cfg.ks):
            simk = simk.restrict(cfg.ks)
        self.simk = simk
        self.index = VectorIndex(cfg.dim)
        self.store = StateStore(cfg.capacity_items, cfg.ks, cfg.latency.retrieve)
        self.policy = CachePolicy(self.store, cfg.policy, cfg.ks)
        self.model: Optional[mp.PredictorModel] = None
        self._trained_size = 0
        self._changes = 0
        self._lock = threading.RLock()
        self._admitted = 0
        self.reset_metrics()

    # -- metrics -------------------------------------------------------------

    def reset_metrics(self) -> None:
        self._hits = {k: 0 for k in self.config.ks}
        self._paths = {r.value: 0 for r in Route}
        self._steps = 0
        self._latencies: list[float] = []
        self._wasted = 0
        self._pred_true = 0
        self._pred_true_hits = 0
        self._shadow_hits = 0

    def report(self, prices: Optional[Prices] = None) -> RunReport:
        with self._lock:
            return RunReport(
                total_requests=len(self._latencies),
                n_steps=self.backend.n_steps,
                ks=list(self.config.ks),
                hits_by_k=dict(self._hits),
                path_counts=dict(self._paths),
                steps_executed=self._steps,
                latencies=list(self._latencies),
                wasted_searches=self._wasted,
                predicted_true=self._pred_true,
                predicted_true_hits=self._pred_true_hits,
                shadow_hits_predicted_false=self._shadow_hits,
                compute_seconds=self.config.latency.compute,
                config=self.config.to_dict() | {"simk": json.loads(self.simk.to_json())},
                prices=prices,
            )

    # -- maintenance ---------------------------------------------------------

    def _retrain_if_needed(self) -> None:
        if not self.config.use_predictor or len(self.index) == 0:
            return
        frac = min(1.0, self._changes / max(1, self._trained_size))
        if self.model is None or mp.needs_retrain(frac, self.config.mp_retrain_fraction):
            self.retrain()

    def retrain(self) -> None:
        n = len(self.index)
        if n == 0:
            self.model = None
            return
        self.model = mp.train(
            self.index._vecs[:n].copy(),
            n_centroids=self.config.mp_centroids,
            quantile=self.config.mp_threshold_quantile,
            seed=self.config.seed,
            min_radius=self._reuse_radius(),
        )
        self._trained_size = n
        self._changes = 0

    def _reuse_radius(self) -> float:
        """Embedding distance inside which the loosest threshold can still be met."""
        s = min(s for _, s in self.simk.thresholds)
        return math.sqrt(2.0 * (1.0 - min(1.0, max(-1.0, s))))

    def _admit(self, p: PromptRecord, e, intermediates) -> str:
        key = p.id
        while key in self.index or self.store.available_ks(key):
            self._admitted += 1
            key = f"{p.id}#{self._admitted}"
        evicted, dirty = self.policy.admit(key, intermediates)
        self.index.remove(dirty)
        self.index.insert([IndexEntry(key, e, {k: state_key(key, k) for k in self.config.ks})])
        self._changes += 1 + len(dirty)
        self._retrain_if_needed()
        return key

    def evict(self, prompt_id: str, k: int) -> list[str]:
        """Targeted eviction; prompts left without states leave the index in the same step."""
        with self._lock:
            dirty = self.policy.evict(prompt_id, k)
            self.index.remove(dirty)
            self._changes += len(dirty)
            return dirty

    # -- request path --------------------------------------------------------

    def embed(self, p: PromptRecord):
        if p.embedding is not None:
            return p.embedding
        return embed_text(p.text, self.config.dim)

    def _lookup(self, e):
        """Top-1 match, its similarity and the selected K (0 when unusable)."""
        found = self.index.search(e, 1)
        if not found:
            return None, None, 0
        entry, s = found[0]
        return entry, s, select_k(s, self.simk, self.config.selector_offset)

    def handle_prompt(self, p: PromptRecord, record: bool = True, admit: bool = True
                      ) -> RequestOutcome:
        with self._lock:
            outcome, predicted, shadow_hit = self._handle(p, admit)
            if record:
                self._record(outcome, predicted, shadow_hit)
        if self.config.realtime_scale > 0:
            time.sleep(outcome.sim_latency * self.config.realtime_scale)
        return outcome

    def _would_hit(self, e) -> bool:
        entry, s, k_star = self._lookup(e)
        if entry is None or k_star == 0:
            return False
        return resolve_k(k_star, self.store.available_ks(entry.prompt_id)) is not None

    def _handle(self, p: PromptRecord, admit: bool):
        """Serve one prompt; also returns the predictor's verdict and the shadow lookup."""
        cfg = self.config
        n = self.backend.n_steps
        e = self.embed(p)
        ledger = LatencyLedger()
        predicted = None

        if cfg.use_predictor:
            predicted = self.model is not None and self.model.predict(e)
            if not predicted:
                shadow_hit = cfg.shadow_search and self._would_hit(e)
                out = self._scratch(p, e, ledger, Route.SCRATCH_PREDICTED_MISS, admit)
                return out, predicted, shadow_hit

        ledger.search += cfg.latency.search
        entry, s, k_star = self._lookup(e)
        matched = entry.prompt_id if entry is not None else None
        state = k = None
        if entry is not None and k_star:
            # holes: fall back to the largest cached K not above the selection
            available = self.store.available_ks(entry.prompt_id)
            k = resolve_k(k_star, available)
            while k is not None:
                state = self.store.get_state(entry.prompt_id, k, ledger)
                if state is not None:
                    break
                available = [a for a in available if a != k]
                k = resolve_k(k_star, available)
        if state is None:
            out = self._scratch(p, e, ledger, Route.SCRATCH_NO_MATCH, admit, s, k_star, matched)
            return out, predicted, False

        result = self.backend.recondition(e, state, k)
        ledger.compute += cfg.latency.compute * (n - k) / n
        self.policy.record_access(entry.prompt_id, k)
        q = self.backend.quality(result.final, self.backend.target(e))
        out = RequestOutcome(p.id, Route.CACHE_HIT, k, s, ledger.total, result.steps_executed, q,
                             k_star, matched, ledger.search, ledger.retrieve, ledger.compute)
        return out, predicted, False

    def _scratch(self, p, e, ledger, path, admit, s=None, k_star=0, matched=None):
        seed = _stable_seed(self.config.backend.noise_seed, p.id)
        result = self.backend.generate(e, seed, source=p.id)
        ledger.compute += self.config.latency.compute
        if admit:
            self._admit(p, e, result.intermediates)
        q = self.backend.quality(result.final, self.backend.target(e))
        return RequestOutcome(p.id, path, 0, s, ledger.total, result.steps_executed, q, k_star,
                              matched, ledger.search, ledger.retrieve, ledger.compute)

    def _record(self, o: RequestOutcome, predicted, shadow_hit) -> None:
        self._paths[Route(o.path).value] += 1
        self._steps += o.steps_executed
        self._latencies.append(o.sim_latency)
        if o.path is Route.CACHE_HIT:
            self._hits[o.k_used] += 1
        elif o.path is Route.SCRATCH_NO_MATCH:
            self._wasted += 1
        if predicted:
            self._pred_true += 1
            self._pred_true_hits += o.path is Route.CACHE_HIT
        elif predicted is False:
            self._shadow_hits += bool(shadow_hit)

    # -- batch helpers -------------------------------------------------------

    def preload(self, records: Iterable[PromptRecord]) -> int:
        """Generate ``records`` from scratch and cache them without touching run metrics."""
        n = 0
        with self._lock:
            for p in records:
                e = self.embed(p)
                self._scratch(p, e, LatencyLedger(), Route.SCRATCH_NO_MATCH, True)
                n += 1
            if self.config.use_predictor and len(self.index):
                self.retrain()
        return n

    def run(self, records: Iterable[PromptRecord],
            on_outcome: Optional[Callable[[RequestOutcome], None]] = None) -> RunReport:
        for p in records:
            o = self.handle_prompt(p)
            if on_outcome is not None:
                on_outcome(o)
        return self.report()
