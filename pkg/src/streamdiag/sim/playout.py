"""Client playback buffer and rendering model.

Media of a chunk enters the playback buffer along a piecewise-linear arrival
curve between its first and last byte (by default a straight line; the
simulator passes the per-round delivery curve, which is flat during a
retransmission timeout).  Playback starts once ``startup`` microseconds of
media are buffered.
When the buffer runs dry during playback the player stalls until the chunk
it is waiting for has fully arrived.  All bookkeeping is in integer
microseconds of media, so the buffer change over a chunk fetched during steady
playback is exactly ``tau - (d_fb + d_lb)``.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from ..telemetry import US_PER_S
from .config import RenderProfile

RATE_LOW = 1.0
RATE_GOOD = 1.5


def expected_drop_fraction(
    rate: float,
    render: RenderProfile,
    buffered_s: float = 0.0,
    overloaded: bool = False,
) -> float:
    """Mean dropped-frame fraction for a visible chunk downloaded at ``rate``
    seconds of video per second; piecewise linear with knots at 1.0 and 1.5.

    ``buffered_s`` of media already in the buffer masks part of the slow-rate
    excess; an overloaded host adds a flat penalty.
    """
    if rate <= RATE_LOW:
        w = 1.0
    elif rate >= RATE_GOOD:
        w = 0.0
    else:
        w = (RATE_GOOD - rate) / (RATE_GOOD - RATE_LOW)
    w *= max(0.0, 1.0 - buffered_s / render.mask_buffer_s)
    base = render.baseline_drop + (render.overload_drop if overloaded else 0.0)
    return min(1.0, base + w * max(0.0, render.peak_drop - base))


class Frames(NamedTuple):
    vis: bool
    avg_fr: float
    drop_fr: int


def render_chunk(
    rate: float,
    render: RenderProfile,
    rng: random.Random,
    frame_rate: int,
    tau_s: float,
    buffered_s: float = 0.0,
    overloaded: bool = False,
) -> Frames:
    vis = rng.random() < render.vis_prob
    mean = expected_drop_fraction(rate, render, buffered_s, overloaded) if vis else render.hidden_drop
    frac = mean + render.noise * rng.gauss(0.0, 1.0) if render.noise else mean
    frac = min(1.0, max(0.0, frac))
    total = int(round(frame_rate * tau_s))
    drop = int(round(frac * total))
    return Frames(vis, (total - drop) / tau_s, drop)


class ChunkPlayout(NamedTuple):
    t_request: int
    t_done: int
    buffer_at_request: int
    buffer_at_completion: int
    playing_at_request: bool
    buf_count: int
    buf_dur: int
    idle_before: int


@dataclass
class Player:
    tau: int
    startup: int
    max_buffer: int
    now: int = 0
    buffered: int = 0
    started: bool = False
    start_time: int | None = None

    @classmethod
    def create(cls, tau_s: float, startup_s: float, max_buffer_s: float) -> "Player":
        return cls(
            tau=int(round(tau_s * US_PER_S)),
            startup=int(round(startup_s * US_PER_S)),
            max_buffer=int(round(max_buffer_s * US_PER_S)),
        )

    def _wait_for_room(self) -> int:
        # Hold the next request until one chunk fits under the buffer cap.
        limit = self.max_buffer - self.tau
        if self.started and self.buffered > limit:
            idle = self.buffered - limit
            self.now += idle
            self.buffered = limit
            return idle
        return 0

    def fetch(
        self,
        d_fb: int,
        d_lb: int,
        arrival: Sequence[tuple[int, int]] | None = None,
    ) -> ChunkPlayout:
        """Advance the clock over one chunk download requested as soon as allowed.

        ``arrival`` lists ``(t_offset, media)`` breakpoints after the first byte,
        with media in microseconds of playback; missing end points are added.
        """
        if d_fb < 0 or d_lb <= 0:
            raise ValueError("need d_fb >= 0 and d_lb > 0")
        idle = self._wait_for_room()
        tau = self.tau
        t0 = self.now
        b0 = self.buffered
        t_fb = t0 + d_fb
        t_done = t_fb + d_lb
        playing0 = self.started
        pts = arrival_points(arrival, d_lb, tau)
        if self.started:
            if b0 < d_fb:
                stall_at: int | None = t0 + b0
            else:
                _, stall_at = _walk(t_fb, pts, b0 - d_fb, None)
            played = (stall_at if stall_at is not None else t_done) - t0
        else:
            t_start, stall_at = _walk(t_fb, pts, b0, self.startup)
            played = 0
            if t_start is not None:
                self.started = True
                self.start_time = t_start
                played = (stall_at if stall_at is not None else t_done) - t_start
        self.now = t_done
        self.buffered = b0 + tau - played
        if stall_at is None:
            return ChunkPlayout(t0, t_done, b0, self.buffered, playing0, 0, 0, idle)
        return ChunkPlayout(t0, t_done, b0, self.buffered, playing0, 1, t_done - stall_at, idle)


def arrival_points(
    arrival: Sequence[tuple[int, int]] | None, d_lb: int, tau: int
) -> list[tuple[int, int]]:
    pts = [(0, 0)]
    for t, m in arrival or ():
        if t < pts[-1][0] or m < pts[-1][1] or t > d_lb or m > tau:
            raise ValueError("arrival curve must be non-decreasing inside the chunk window")
        pts.append((t, m))
    if pts[-1] != (d_lb, tau):
        pts.append((d_lb, tau))
    return pts


def _walk(
    t_fb: int,
    pts: list[tuple[int, int]],
    b: int,
    startup: int | None,
) -> tuple[int | None, int | None]:
    """Follow one chunk's arrival curve from the first byte.

    ``startup`` is None when already playing.  Returns (playback start time,
    time the buffer ran dry); either may be None.
    """
    t_start = None
    playing = startup is None
    for (ta, ma), (tb, mb) in zip(pts, pts[1:]):
        dt = tb - ta
        dm = mb - ma
        if not playing:
            if b + dm < startup:
                b += dm
                continue
            # Playback starts partway through this piece.
            x = -(-(startup - b) * dt // dm) if dm else 0
            got = dm * x // dt if dt else dm
            t_start = t_fb + ta + x
            playing = True
            b += got
            ta += x
            dt -= x
            dm -= got
        if dt == 0:
            b += dm
            continue
        if dm < dt:
            x = b * dt // (dt - dm)
            if x < dt:
                return t_start, t_fb + ta + x
        b += dm - dt
    return t_start, None


def client_playout(
    arrivals: Sequence[tuple],
    tau_s: float,
    startup_buffer_s: float,
    render: RenderProfile,
    rng: random.Random,
    frame_rate: int = 30,
    max_buffer_s: float = 1e9,
) -> list[tuple[int, int, float, int, bool]]:
    """Play back a back-to-back sequence of ``(d_fb, d_lb[, curve])`` downloads (us).

    Returns ``(buf_count, buf_dur, avg_fr, drop_fr, vis)`` per chunk.
    """
    player = Player.create(tau_s, startup_buffer_s, max_buffer_s)
    out = []
    for item in arrivals:
        d_fb, d_lb = item[0], item[1]
        p = player.fetch(d_fb, d_lb, item[2] if len(item) > 2 else None)
        rate = player.tau / (d_fb + d_lb)
        f = render_chunk(rate, render, rng, frame_rate, tau_s)
        out.append((p.buf_count, p.buf_dur, f.avg_fr, f.drop_fr, f.vis))
    return out
