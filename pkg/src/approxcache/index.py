"""Exact cosine-similarity index over prompt embeddings."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import normalize


@dataclass(frozen=True)
class IndexEntry:
    prompt_id: str
    embedding: np.ndarray = field(compare=False, repr=False)
    payload: dict[int, str] = field(default_factory=dict)


class DuplicateEntryError(KeyError):
    pass


def state_key(prompt_id: str, k: int) -> str:
    return f"{prompt_id}/{k}"


class VectorIndex:
    """Linear-scan nearest neighbour index.

    Embeddings live in one contiguous matrix; removal swaps the last row into
    the freed slot so a search is a single matrix-vector product.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self._vecs = np.empty((0, dim))
        self._entries: list[IndexEntry] = []
        self._pos: dict[str, int] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, prompt_id: str) -> bool:
        return prompt_id in self._pos

    def get(self, prompt_id: str) -> IndexEntry:
        return self._entries[self._pos[prompt_id]]

    def ids(self) -> list[str]:
        return [e.prompt_id for e in self._entries]

    def insert(self, entries) -> int:
        entries = list(entries)
        with self._lock:
            seen = set()
            for e in entries:
                if e.prompt_id in self._pos or e.prompt_id in seen:
                    raise DuplicateEntryError(f"duplicate prompt id {e.prompt_id!r}")
                if np.shape(e.embedding) != (self.dim,):
                    raise ValueError(f"entry {e.prompt_id!r} has wrong dimension")
                seen.add(e.prompt_id)
            if not entries:
                return 0
            start = len(self._entries)
            need = start + len(entries)
            if need > self._vecs.shape[0]:
                grown = np.empty((max(need, 2 * self._vecs.shape[0], 64), self.dim))
                grown[:start] = self._vecs[:start]
                self._vecs = grown
            for i, e in enumerate(entries):
                self._vecs[start + i] = e.embedding
                self._pos[e.prompt_id] = start + i
                self._entries.append(e)
            return len(entries)

    def remove(self, prompt_ids) -> int:
        removed = 0
        with self._lock:
            for pid in prompt_ids:
                i = self._pos.pop(pid, None)
                if i is None:
                    continue
                last = len(self._entries) - 1
                if i != last:
                    moved = self._entries[last]
                    self._entries[i] = moved
                    self._vecs[i] = self._vecs[last]
                    self._pos[moved.prompt_id] = i
                self._entries.pop()
                removed += 1
        return removed

    def search(self, e, m: int = 1) -> list[tuple[IndexEntry, float]]:
        """Top-``m`` entries by cosine similarity; ties go to the smaller prompt id."""
        e = np.asarray(e, dtype=np.float64)
        if e.shape != (self.dim,):
            raise ValueError(f"expected a query of dim {self.dim}, got {e.shape}")
        with self._lock:
            n = len(self._entries)
            if n == 0 or m <= 0:
                return []
            scores = np.clip(self._vecs[:n] @ e, -1.0, 1.0)
            m = min(m, n)
            if m < n:
                # keep everything tied with the m-th best so the tie-break stays exact
                cut = np.partition(scores, n - m)[n - m]
                cand = np.flatnonzero(scores >= cut)
            else:
                cand = np.arange(n)
            order = sorted(cand, key=lambda i: (-scores[i], self._entries[i].prompt_id))[:m]
            return [(self._entries[i], float(scores[i])) for i in order]

    # -- persistence -------------------------------------------------------

    def snapshot(self, path) -> int:
        with self._lock, open(path, "w") as fh:
            for e in self._entries:
                row = {
                    "prompt_id": e.prompt_id,
                    "embedding": [float(x) for x in e.embedding],
                    "payload": {str(k): v for k, v in sorted(e.payload.items())},
                }
                fh.write(json.dumps(row) + "\n")
            return len(self._entries)

    @classmethod
    def restore(cls, path, dim=None) -> "VectorIndex":
        entries = []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            emb = np.array(row["embedding"], dtype=np.float64)
            if abs(np.linalg.norm(emb) - 1.0) > 1e-9:
                emb = normalize(emb)
            emb.setflags(write=False)
            payload = {int(k): v for k, v in row.get("payload", {}).items()}
            entries.append(IndexEntry(row["prompt_id"], emb, payload))
        if dim is None:
            if not entries:
                raise ValueError("cannot infer dimension from an empty snapshot")
            dim = len(entries[0].embedding)
        index = cls(dim)
        index.insert(entries)
        return index
