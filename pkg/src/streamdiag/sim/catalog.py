"""Video catalog with Zipf popularity."""
from __future__ import annotations

import bisect
import random
from dataclasses import dataclass
from itertools import accumulate

import numpy as np


def zipf_weights(n_videos: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, n_videos + 1, dtype=float)
    w = ranks ** (-exponent)
    return w / w.sum()


def top_share(n_videos: int, exponent: float, top_fraction: float = 0.1) -> float:
    """Share of plays going to the ``top_fraction`` most popular videos."""
    w = zipf_weights(n_videos, exponent)
    k = max(1, int(round(top_fraction * n_videos)))
    return float(w[:k].sum())


def solve_exponent(
    target_share: float,
    n_videos: int,
    top_fraction: float = 0.1,
    tol: float = 1e-10,
) -> float:
    """Zipf exponent whose top-``top_fraction`` share equals ``target_share``.

    The share is monotone increasing in the exponent, so plain bisection works.
    """
    lo, hi = 0.0, 1.0
    if not top_share(n_videos, 0.0, top_fraction) <= target_share < 1.0:
        raise ValueError(f"target share {target_share} not reachable")
    while top_share(n_videos, hi, top_fraction) < target_share:
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if top_share(n_videos, mid, top_fraction) < target_share:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Catalog:
    weights: tuple[float, ...]
    cumulative: tuple[float, ...]
    lengths: tuple[int, ...]  # chunks per video, index = rank - 1

    @property
    def n_videos(self) -> int:
        return len(self.weights)

    def sample_rank(self, rng: random.Random) -> int:
        u = rng.random() * self.cumulative[-1]
        return min(bisect.bisect_right(self.cumulative, u), self.n_videos - 1) + 1

    def video_id(self, rank: int) -> str:
        return f"v{rank:06d}"

    def length(self, rank: int) -> int:
        return self.lengths[rank - 1]


def build_catalog(
    n_videos: int,
    zipf_exponent: float,
    seed: int,
    chunks_min: int = 8,
    chunks_max: int = 30,
) -> Catalog:
    if n_videos < 10:
        raise ValueError("n_videos must be >= 10")
    w = zipf_weights(n_videos, zipf_exponent).tolist()
    rng = random.Random(f"catalog:{seed}")
    lengths = tuple(rng.randint(chunks_min, chunks_max) for _ in range(n_videos))
    return Catalog(tuple(w), tuple(accumulate(w)), lengths)
