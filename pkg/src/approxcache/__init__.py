"""Approximate caching of intermediate diffusion states for text-to-image serving."""

from .backend import UNREACHABLE, BackendConfig, GenerationResult, SyntheticBackend
from .domain import (DEFAULT_DIM, DEFAULT_KS, DegenerateEmbeddingError, LatentState, PromptRecord,
                     cosine_similarity, normalize)
from .index import DuplicateEntryError, IndexEntry, VectorIndex
from .pipeline import (LatencyParams, Pipeline, PipelineConfig, Prices, RequestOutcome, Route,
                       RunReport, amortized_cost, compute_savings, k_opt_analytic,
                       overall_hit_rate)
from .policy import CachePolicy, PolicyKind
from .predictor import PredictorModel, needs_retrain
from .selector import REFERENCE_THRESHOLDS, SimKMap, profile, resolve_k, select_k, similarity_sweep
from .store import CapacityError, LatencyLedger, StateStore
from .workload import SynthConfig, embed_text, hit_curve_workload, replay_trace, synth_stream

__version__ = "0.1.0"
