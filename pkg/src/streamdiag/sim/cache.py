"""Two-level (memory over disk) LRU cache and the CDN serving-latency model."""
from __future__ import annotations

import random
from collections import OrderedDict
from dataclasses import dataclass
from typing import Hashable, NamedTuple

from ..telemetry import US_PER_MS, CacheStatus
from .catalog import Catalog
from .config import ConfigError, SimConfig


class LRU:
    """Fixed-capacity least-recently-used set."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self._map: OrderedDict[Hashable, None] = OrderedDict()

    def __contains__(self, key: Hashable) -> bool:
        return key in self._map

    def __len__(self) -> int:
        return len(self._map)

    def keys(self) -> list[Hashable]:
        """Keys from least to most recently used."""
        return list(self._map)

    def touch(self, key: Hashable) -> bool:
        """Mark ``key`` as most recently used; returns False if absent."""
        if key in self._map:
            self._map.move_to_end(key)
            return True
        return False

    def put(self, key: Hashable) -> Hashable | None:
        """Insert ``key``; returns the evicted key, if any."""
        if key in self._map:
            self._map.move_to_end(key)
            return None
        if self.capacity == 0:
            return key
        evicted = None
        if len(self._map) >= self.capacity:
            evicted, _ = self._map.popitem(last=False)
        self._map[key] = None
        return evicted


class CacheKey(NamedTuple):
    video_rank: int
    chunk_id: int
    bitrate: int


@dataclass
class CacheState:
    memory: LRU
    disk: LRU

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "CacheState":
        return cls(LRU(cfg.memory_cache_entries), LRU(cfg.disk_cache_entries))

    def lookup(self, key: CacheKey) -> CacheStatus:
        """Resolve ``key`` and update both levels as the server would."""
        if self.memory.touch(key):
            self.disk.touch(key)
            return CacheStatus.HIT_MEMORY
        if self.disk.touch(key):
            self.memory.put(key)
            return CacheStatus.HIT_DISK
        self.disk.put(key)
        self.memory.put(key)
        return CacheStatus.MISS


class ServeResult(NamedTuple):
    d_wait: int
    d_open: int
    d_read: int
    d_be: int
    cache_status: CacheStatus

    @property
    def d_cdn(self) -> int:
        return self.d_wait + self.d_open + self.d_read

    @property
    def server_latency(self) -> int:
        return self.d_cdn + self.d_be


def _us(ms: float) -> int:
    return int(round(ms * US_PER_MS))


def cdn_serve(
    key: CacheKey,
    cache: CacheState,
    rng: random.Random,
    cfg: SimConfig,
    catalog: Catalog | None = None,
) -> ServeResult:
    """Serve one chunk request.

    Memory hits read in about a millisecond.  A disk hit pays the async-read
    retry timer before the first byte goes out.  Misses fetch from the backend;
    the backend request is issued directly so its latency lands in ``d_be``.
    """
    if catalog is not None:
        if not 1 <= key.video_rank <= catalog.n_videos:
            raise ConfigError("request", f"unknown video rank {key.video_rank}")
        if not 1 <= key.chunk_id <= catalog.length(key.video_rank):
            raise ConfigError("request", f"unknown chunk {key.chunk_id} of {key.video_rank}")
        if key.bitrate not in cfg.bitrate_ladder_kbps:
            raise ConfigError("request", f"bitrate {key.bitrate} not in ladder")
    status = cache.lookup(key)
    d_wait = _us(cfg.wait_ms.sample(rng))
    d_open = _us(cfg.open_ms.sample(rng))
    if status is CacheStatus.HIT_DISK:
        d_read = _us(cfg.async_read_timer_ms + cfg.disk_read_extra_ms.sample(rng))
        d_be = 0
    else:
        d_read = _us(cfg.memory_read_ms.sample(rng))
        d_be = _us(cfg.backend_ms.sample(rng)) if status is CacheStatus.MISS else 0
    return ServeResult(d_wait, d_open, d_read, d_be, status)
