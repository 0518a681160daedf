"""Rate-based bitrate selection used by the simulated player.

The rule is deliberately simple: pick the highest rung not above
``safety * mean(last window download rates)``.  The first chunk goes out at the
lowest rung, and a chunk that found the buffer empty forces a one-rung step
down on the next request.
"""
from __future__ import annotations

from typing import Sequence


def abr_select(
    history_kbps: Sequence[float],
    buffer_s: float,
    ladder: Sequence[int],
    *,
    previous: int | None = None,
    playing: bool = False,
    safety: float = 0.8,
    window: int = 3,
) -> int:
    if not ladder:
        raise ValueError("empty bitrate ladder")
    if not history_kbps:
        return ladder[0]
    if playing and buffer_s <= 0 and previous is not None:
        idx = ladder.index(previous) if previous in ladder else 0
        return ladder[max(0, idx - 1)]
    recent = history_kbps[-window:]
    budget = safety * sum(recent) / len(recent)
    choice = ladder[0]
    for rate in ladder:
        if rate <= budget:
            choice = rate
    return choice
