"""Keyed store for intermediate latent states, with simulated retrieval latency."""

from __future__ import annotations

import logging
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional
from urllib.parse import quote, unquote

import numpy as np

from .domain import DEFAULT_KS, LatentState

log = logging.getLogger(__name__)

DEFAULT_BYTES_PER_ITEM = 144_000
_HEADER = struct.Struct("<ii")


class CapacityError(RuntimeError):
    pass


@dataclass(frozen=True)
class StoreStats:
    item_count: int
    capacity_items: int
    bytes_per_item: int
    hole_count: int

    @property
    def bytes_used(self) -> int:
        return self.item_count * self.bytes_per_item


@dataclass
class LatencyLedger:
    """Simulated seconds charged to a single request, by component."""

    search: float = 0.0
    retrieve: float = 0.0
    compute: float = 0.0

    @property
    def total(self) -> float:
        return self.search + self.retrieve + self.compute


def write_state_file(path, state: LatentState) -> None:
    """Little-endian ``int32 d_l, int32 K`` header, then float32 values (and condition, if any)."""
    values = np.asarray(state.values, dtype="<f4")
    body = values.tobytes()
    if state.condition is not None:
        body += np.asarray(state.condition, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(len(values), state.k) + body)


def read_state_file(path, source_prompt: str = "") -> LatentState:
    raw = Path(path).read_bytes()
    dim, k = _HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    if data.size not in (dim, 2 * dim):
        raise ValueError(f"{path}: payload of {data.size} floats does not match d_l={dim}")
    condition = data[dim:] if data.size == 2 * dim else None
    return LatentState(data[:dim], k, source_prompt, condition=condition)


class StateStore:
    """In-memory blob store for ``(prompt_id, K)`` states.

    Capacity is counted in items; the byte figure is accounting only. With a
    ``root`` directory every put is also written to
    ``root/<quoted prompt id>/K<k>.bin``.
    """

    def __init__(
        self,
        capacity_items: int = 5_000,
        ks: tuple[int, ...] = DEFAULT_KS,
        retrieval_latency: float = 0.05,
        bytes_per_item: int = DEFAULT_BYTES_PER_ITEM,
        root=None,
    ):
        self.capacity_items = capacity_items
        self.ks = tuple(sorted(ks))
        self.retrieval_latency = retrieval_latency
        self.bytes_per_item = bytes_per_item
        self.root = Path(root) if root is not None else None
        self._items: dict[tuple[str, int], LatentState] = {}
        self._by_prompt: dict[str, set[int]] = {}
        self._lock = threading.RLock()
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def __len__(self) -> int:
        return len(self._items)

    @property
    def free(self) -> int:
        return self.capacity_items - len(self._items)

    def _path(self, prompt_id: str, k: int) -> Path:
        return self.root / quote(prompt_id, safe="") / f"K{k}.bin"

    def put_state(self, prompt_id: str, k: int, state: LatentState) -> None:
        if k not in self.ks:
            raise ValueError(f"K={k} is not one of the cached step counts {self.ks}")
        with self._lock:
            key = (prompt_id, k)
            if key not in self._items and len(self._items) >= self.capacity_items:
                raise CapacityError("store is full: eviction required first")
            self._items[key] = state
            self._by_prompt.setdefault(prompt_id, set()).add(k)
            if self.root is not None:
                path = self._path(prompt_id, k)
                path.parent.mkdir(exist_ok=True)
                write_state_file(path, state)

    def get_state(
        self, prompt_id: str, k: int, ledger: Optional[LatencyLedger] = None
    ) -> Optional[LatentState]:
        """Return the stored state or ``None`` for a hole; only hits are charged."""
        state = self._items.get((prompt_id, k))
        if state is not None and ledger is not None:
            ledger.retrieve += self.retrieval_latency
        return state

    def available_ks(self, prompt_id: str) -> list[int]:
        return sorted(self._by_prompt.get(prompt_id, ()))

    def delete_state(self, prompt_id: str, k: int) -> bool:
        with self._lock:
            if self._items.pop((prompt_id, k), None) is None:
                log.debug("delete of missing state %s@%d ignored", prompt_id, k)
                return False
            ks = self._by_prompt[prompt_id]
            ks.discard(k)
            if not ks:
                del self._by_prompt[prompt_id]
            if self.root is not None:
                path = self._path(prompt_id, k)
                path.unlink(missing_ok=True)
                if not ks:
                    try:
                        path.parent.rmdir()
                    except OSError:
                        pass
            return True

    def prompts(self) -> list[str]:
        return sorted(self._by_prompt)

    def stats(self) -> StoreStats:
        holes = sum(len(self.ks) - len(ks) for ks in self._by_prompt.values())
        return StoreStats(len(self._items), self.capacity_items, self.bytes_per_item, holes)

    @classmethod
    def load(cls, root, **kwargs) -> "StateStore":
        """Rebuild a store from a directory written by a store with the same ``root``."""
        root = Path(root)
        store = cls(root=None, **kwargs)
        for path in sorted(root.glob("*/K*.bin")):
            pid = unquote(path.parent.name)
            state = read_state_file(path, pid)
            store.put_state(pid, state.k, state)
        store.root = root
        return store
