"""Core value types and vector primitives shared across the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DEFAULT_DIM = 64
DEFAULT_KS: tuple[int, ...] = (5, 10, 15, 20, 25)


class DegenerateEmbeddingError(ValueError):
    pass


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def normalize(v) -> np.ndarray:
    """Return ``v`` scaled to unit L2 norm as a read-only float64 array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DegenerateEmbeddingError("degenerate embedding: non-finite entries")
    norm = np.linalg.norm(arr)
    if norm == 0.0:
        raise DegenerateEmbeddingError("degenerate embedding: zero vector")
    out = arr / norm
    # one more pass absorbs the rounding left by the first division
    out = out / np.linalg.norm(out)
    return _frozen(out)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


@dataclass(frozen=True)
class PromptRecord:
    id: str
    user: str
    timestamp: int
    text: Optional[str] = None
    embedding: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.text is None and self.embedding is None:
            raise ValueError(f"prompt {self.id!r} has neither text nor embedding")
        if self.embedding is not None:
            object.__setattr__(self, "embedding", normalize(self.embedding))


@dataclass(frozen=True)
class LatentState:
    """Flattened intermediate state after ``k`` denoising steps of ``source_prompt``.

    ``condition`` optionally records the target the state was denoised toward;
    backends need it to continue a trajectory whose concepts are frozen.
    """

    values: np.ndarray = field(compare=False)
    k: int
    source_prompt: str
    condition: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ValueError("latent values must be a finite 1-d vector")
        if self.k < 0:
            raise ValueError(f"negative step index {self.k}")
        if not (
            isinstance(self.values, np.ndarray)
            and self.values.dtype == np.float64
            and not self.values.flags.writeable
        ):
            object.__setattr__(self, "values", _frozen(values))
        if self.condition is not None and self.condition.flags.writeable:
            object.__setattr__(self, "condition", _frozen(self.condition))
