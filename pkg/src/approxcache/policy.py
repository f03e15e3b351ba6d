"""Admission and eviction of cached ``(prompt, K)`` states.

LCBFU ranks an item by ``access frequency x K``: a state from a late step is
worth more per hit because it skips more compute. FIFO, LRU and LFU share the
same machinery so runs can be compared under one interface.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass

from .domain import DEFAULT_KS, LatentState
from .store import StateStore


class PolicyKind(str, enum.Enum):
    LCBFU = "lcbfu"
    LRU = "lru"
    LFU = "lfu"
    FIFO = "fifo"


@dataclass
class CacheEntryMeta:
    prompt_id: str
    k: int
    freq: int = 0
    last_access: int = 0
    insert_seq: int = 0
    present: bool = True


def lcbfu_score(meta: CacheEntryMeta) -> int:
    return meta.freq * meta.k


def eviction_key(meta: CacheEntryMeta, kind: PolicyKind) -> tuple:
    kind = PolicyKind(kind)
    if kind is PolicyKind.LCBFU:
        primary = lcbfu_score(meta)
    elif kind is PolicyKind.LRU:
        primary = meta.last_access
    elif kind is PolicyKind.LFU:
        primary = meta.freq
    else:
        primary = meta.insert_seq
    return (primary, meta.insert_seq, meta.prompt_id, meta.k)


class CachePolicy:
    """Owns item metadata and keeps ``store`` within capacity.

    The heap holds ``(key, item)`` pairs and is invalidated lazily: an entry is
    live only while its key equals the item's current key.
    """

    def __init__(self, store: StateStore, kind: PolicyKind = PolicyKind.LCBFU, ks=DEFAULT_KS):
        self.store = store
        self.kind = PolicyKind(kind)
        self.ks = tuple(sorted(ks))
        self.metas: dict[tuple[str, int], CacheEntryMeta] = {}
        self._heap: list[tuple[tuple, tuple[str, int]]] = []
        self._clock = 0
        self._seq = 0
        self.evictions = 0

    def __len__(self) -> int:
        return len(self.metas)

    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    def _push(self, meta: CacheEntryMeta) -> None:
        heapq.heappush(self._heap, (eviction_key(meta, self.kind), (meta.prompt_id, meta.k)))
        if len(self._heap) > 4 * len(self.metas) + 64:
            self._heap = [(eviction_key(m, self.kind), item) for item, m in self.metas.items()]
            heapq.heapify(self._heap)

    def _live(self, entry) -> bool:
        key, item = entry
        meta = self.metas.get(item)
        return meta is not None and eviction_key(meta, self.kind) == key

    def _pop(self) -> CacheEntryMeta:
        while self._heap:
            entry = heapq.heappop(self._heap)
            if self._live(entry):
                return self.metas[entry[1]]
        raise IndexError("pop from an empty cache")

    def record_access(self, prompt_id: str, k: int) -> int:
        meta = self.metas.get((prompt_id, k))
        if meta is None:
            raise KeyError(f"no cached state for {prompt_id!r} at K={k}")
        meta.freq += 1
        meta.last_access = self._tick()
        if self.kind in (PolicyKind.LCBFU, PolicyKind.LRU, PolicyKind.LFU):
            self._push(meta)
        return lcbfu_score(meta)

    def victims(self, n: int, kind=None) -> list[CacheEntryMeta]:
        """The ``n`` items ``kind`` would evict next, without evicting them."""
        if n > len(self.metas):
            raise ValueError(f"asked for {n} victims but only {len(self.metas)} items are cached")
        kind = self.kind if kind is None else PolicyKind(kind)
        if kind is not self.kind:
            return sorted(self.metas.values(), key=lambda m: eviction_key(m, kind))[:n]
        out = [self._pop() for _ in range(n)]
        for meta in out:
            self._push(meta)
        return out

    def _drop(self, meta: CacheEntryMeta, dirty: list[str]) -> None:
        del self.metas[(meta.prompt_id, meta.k)]
        meta.present = False
        self.store.delete_state(meta.prompt_id, meta.k)
        self.evictions += 1
        if not self.store.available_ks(meta.prompt_id) and meta.prompt_id not in dirty:
            dirty.append(meta.prompt_id)

    def admit(self, prompt_id: str, states: dict[int, LatentState]):
        """Insert all states of a freshly generated prompt, evicting first if needed.

        Returns ``(evicted, dirty)``: the ``(prompt_id, K)`` pairs removed and the
        prompts left with no cached state at all.
        """
        if set(states) != set(self.ks):
            raise ValueError(f"admission needs states for every K in {self.ks}")
        evicted: list[tuple[str, int]] = []
        dirty: list[str] = []
        need = len(states) - self.store.free
        for _ in range(max(0, need)):
            meta = self._pop()
            self._drop(meta, dirty)
            evicted.append((meta.prompt_id, meta.k))
        for k in self.ks:
            self.store.put_state(prompt_id, k, states[k])
            meta = CacheEntryMeta(prompt_id, k, 0, self._tick(), self._seq)
            self._seq += 1
            self.metas[(prompt_id, k)] = meta
            self._push(meta)
        return evicted, dirty

    def evict(self, prompt_id: str, k: int) -> list[str]:
        """Targeted eviction of one item; returns the prompt if it became dirty."""
        meta = self.metas.get((prompt_id, k))
        dirty: list[str] = []
        if meta is not None:
            self._drop(meta, dirty)
        return dirty
