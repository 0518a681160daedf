"""Round-based TCP path model.

A transfer proceeds in RTT rounds.  Each round sends ``min(cwnd, capacity,
remaining)`` segments, where capacity is the bandwidth-delay product of the
round.  Slow start doubles the window when it is fully used; congestion
avoidance adds one segment per fully-used round.  A round with a few losses
and enough surviving segments to trigger duplicate ACKs halves the window once
(fast recovery).  Otherwise the sender waits a retransmission timeout, backing
off while the retransmission is lost again, and restarts from one segment.
Lost segments are always sent again later.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Mapping, NamedTuple

from ..telemetry import US_PER_MS, US_PER_S, rto_us
from .config import PathProfile

SNAPSHOT_PERIOD_US = 500 * US_PER_MS
DUPACK_THRESHOLD = 3
TIMEOUT_LOSSES = 3  # this many losses in one round defeat fast recovery
MAX_BACKOFF = 6


def binomial(rng: random.Random, n: int, p: float) -> int:
    """Inverse-transform binomial draw; cheap when ``n * p`` is small."""
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    q = 1.0 - p
    pmf = q ** n
    cdf = pmf
    u = rng.random()
    k = 0
    ratio = p / q
    while u > cdf and k < n:
        pmf *= (n - k) / (k + 1) * ratio
        k += 1
        cdf += pmf
    return k


@dataclass(slots=True)
class PathState:
    """Sender-side connection state plus the static path parameters it runs over."""

    cwnd: int
    ssthresh: int
    srtt: int  # us
    srttvar: int  # us
    retx: int
    mss: int
    max_cwnd: int
    base_rtt: int  # us
    jitter: int  # us
    spike_prob: float
    spike: int  # us
    loss_rate: float  # this session's background rate
    burst_loss_rate: float  # first chunk's final slow-start round
    first_chunk_loss_multiplier: float
    bandwidth: float  # bytes/s, 0 = unlimited
    dip_prob: float
    dip_min: float
    bloat_prob: float = 0.0
    bloat: int = 0  # us, zero unless this session suffers self-inflicted queueing

    @classmethod
    def open(
        cls,
        profile: PathProfile,
        rng: random.Random,
        iw_segments: int = 10,
        mss: int = 1460,
        max_cwnd: int = 4000,
    ) -> "PathState":
        state = cls(
            cwnd=iw_segments,
            ssthresh=max_cwnd,
            srtt=1,
            srttvar=0,
            retx=0,
            mss=mss,
            max_cwnd=max_cwnd,
            base_rtt=int(round(profile.base_rtt_ms * US_PER_MS)),
            jitter=int(round(profile.rtt_jitter_ms * US_PER_MS)),
            spike_prob=profile.spike_prob,
            spike=int(round(profile.spike_ms * US_PER_MS)),
            loss_rate=profile.loss_rate,
            burst_loss_rate=min(1.0, profile.loss_rate * profile.first_chunk_loss_multiplier),
            first_chunk_loss_multiplier=profile.first_chunk_loss_multiplier,
            bandwidth=profile.bandwidth,
            dip_prob=profile.dip_prob,
            dip_min=profile.dip_min,
        )
        if profile.bloat_prob > 0.0 and rng.random() < profile.bloat_prob:
            state.bloat_prob = profile.bloat_chunk_prob
            state.bloat = int(round(profile.bloat_ms * US_PER_MS))
        if profile.lossless_prob > 0.0 and rng.random() < profile.lossless_prob:
            state.loss_rate = 0.0
        elif profile.loss_sigma > 0.0:
            state.loss_rate = min(1.0, profile.loss_rate * rng.lognormvariate(0.0, profile.loss_sigma))
        # Handshake sample seeds the estimators (RFC 6298 initialisation).
        r = state.sample_rtt(rng, 0)
        state.srtt = r
        state.srttvar = r // 2
        return state

    @property
    def in_slow_start(self) -> bool:
        return self.cwnd < self.ssthresh

    @property
    def rto(self) -> int:
        return rto_us(self.srtt, self.srttvar)

    def chunk_level(self, rng: random.Random) -> int:
        """Queueing delay shared by every round of one chunk."""
        if self.spike_prob > 0.0 and rng.random() < self.spike_prob:
            return int(rng.random() * self.spike)
        return 0

    def sample_rtt(self, rng: random.Random, level: int) -> int:
        noise = int(rng.random() * self.jitter) if self.jitter else 0
        return self.base_rtt + level + noise

    def observe(self, r: int) -> None:
        self.srttvar = (3 * self.srttvar + abs(self.srtt - r)) // 4
        self.srtt = (7 * self.srtt + r) // 8


class Sample(NamedTuple):
    t_offset: int
    cwnd: int
    srtt: int
    srttvar: int
    retx: int


class Transfer(NamedTuple):
    first_byte_rtt: int  # us
    duration: int  # us
    samples: list[Sample]
    retx_added: int
    loss_rounds: list[int]
    segments: int
    rounds: int
    arrivals: list[tuple[int, int]]  # (t_offset us, cumulative segments delivered)
    timeouts: int


def network_transfer(
    nbytes: int,
    path: PathState,
    rng: random.Random,
    first_chunk: bool = False,
    forced_losses: Mapping[int, int] | None = None,
) -> Transfer:
    """Deliver ``nbytes`` over ``path`` and return timings and TCP samples.

    ``forced_losses`` maps a round index (0-based) to a number of lost segments
    and replaces the random loss draw; it exists for controlled experiments.
    """
    if nbytes <= 0:
        raise ValueError("nbytes must be positive")
    mss = path.mss
    segments = -(-nbytes // mss)
    level = path.chunk_level(rng)
    first_byte_rtt = path.sample_rtt(rng, level)
    if path.bloat and rng.random() < path.bloat_prob:
        level += int(rng.random() * path.bloat)

    snap = [Sample(0, path.cwnd, path.srtt, path.srttvar, path.retx)]
    ends: list[int] = []
    states: list[Sample] = []
    t = 0
    remaining = segments
    rnd = 0
    retx_added = 0
    loss_rounds: list[int] = []
    arrivals: list[tuple[int, int]] = []
    done = 0
    timeouts = 0
    burst_pending = first_chunk and path.first_chunk_loss_multiplier > 1.0
    bw = path.bandwidth
    if bw > 0.0 and path.dip_prob > 0.0 and rng.random() < path.dip_prob:
        bw *= path.dip_min + (1.0 - path.dip_min) * rng.random()
    carry = 0.0
    while remaining > 0:
        r = path.sample_rtt(rng, level)
        cwnd = path.cwnd
        allowed = cwnd
        if bw > 0.0:
            # Fractional bandwidth-delay product carries over while the cap binds.
            quota = bw * r / (mss * US_PER_S) + carry
            cap = int(quota)
            if cap < allowed:
                carry = quota - cap
                if cap < 1:
                    cap = 1
                    carry = 0.0
                allowed = cap
            else:
                carry = 0.0
        sent = allowed if allowed < remaining else remaining
        p = path.loss_rate
        if burst_pending and cwnd < path.ssthresh and (
            sent >= remaining or allowed < cwnd or 2 * cwnd >= path.ssthresh
        ):
            p = path.burst_loss_rate
            burst_pending = False
        if forced_losses is not None:
            lost = min(sent, forced_losses.get(rnd, 0))
        else:
            lost = binomial(rng, sent, p)
        t += r
        path.observe(r)
        delivered = sent - lost
        remaining -= delivered
        done += delivered
        arrivals.append((t, done))
        if lost:
            path.retx += lost
            retx_added += lost
            loss_rounds.append(rnd)
            path.ssthresh = max(2, cwnd // 2)
            if lost >= TIMEOUT_LOSSES or delivered < DUPACK_THRESHOLD:
                wait = path.rto
                stall = wait
                backoff = 0
                while backoff < MAX_BACKOFF and rng.random() < p:
                    path.retx += 1
                    retx_added += 1
                    wait *= 2
                    stall += wait
                    backoff += 1
                t += stall
                arrivals.append((t, done))
                path.cwnd = 1
                timeouts += 1
            else:
                path.cwnd = path.ssthresh
        elif sent == cwnd:
            if cwnd < path.ssthresh:
                path.cwnd = min(2 * cwnd, path.ssthresh, path.max_cwnd)
            elif cwnd < path.max_cwnd:
                path.cwnd = cwnd + 1
        ends.append(t)
        states.append(Sample(t, path.cwnd, path.srtt, path.srttvar, path.retx))
        rnd += 1

    duration = t
    # Periodic samples carry the state after the last round finished by then.
    i = 0
    tick = SNAPSHOT_PERIOD_US
    while tick < duration:
        while i < len(ends) and ends[i] <= tick:
            i += 1
        s = states[i - 1] if i else snap[0]
        snap.append(Sample(tick, s.cwnd, s.srtt, s.srttvar, s.retx))
        tick += SNAPSHOT_PERIOD_US
    last = states[-1]
    snap.append(Sample(duration, last.cwnd, last.srtt, last.srttvar, last.retx))
    return Transfer(first_byte_rtt, duration, snap, retx_added, loss_rounds, segments, rnd,
                    arrivals, timeouts)
