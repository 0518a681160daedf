"""Cross-session aggregate analyses.

Every analysis is an accumulator with ``add``, ``merge`` and ``result``.
Accumulators keep integer counts, integer microsecond sums and plain value
lists (sorted only when finalised), and means go through :func:`math.fsum`,
which is exactly rounded.  Merging therefore gives bit-identical results for
any partition of the input, which is what makes ``jobs`` invisible.
"""
from __future__ import annotations

import csv
import ipaddress
import json
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .diagnosis import SessionSummary, baseline_rtt_us, population_cv, session_summary
from .ingest import group_sessions, read_jsonl
from .telemetry import US_PER_MS, JoinedChunk, SessionMeta

BASELINE_TAIL_MS = 100.0
TOP_FRACTION = 0.1
MIN_ORG_SESSIONS = 50
CV_THRESHOLD = 1.0
RATE_GOOD = 1.5
BAD_DROP = 0.30
IW_SEGMENTS = 10
SRTT_BAND_MS = (55.0, 65.0)
D_CDN_MAX_MS = 5.0
MIN_PER_ARM = 100
QUANTILES = tuple(i / 20 for i in range(21))
RATE_BIN = 0.25
RATE_BINS = 12  # last bin is open-ended


def prefix_of(ip: str) -> str:
    """The /24 network of an IPv4 address, e.g. ``"10.1.2.0/24"``."""
    return str(ipaddress.IPv4Network(f"{ip}/24", strict=False))


def quantile(sorted_values: Sequence[float], q: float) -> float:
    """Lower nearest-rank quantile of already sorted values."""
    if not sorted_values:
        return math.nan
    return sorted_values[int(math.floor(q * (len(sorted_values) - 1)))]


def median(sorted_values: Sequence[float]) -> float:
    n = len(sorted_values)
    if n == 0:
        return math.nan
    mid = n // 2
    if n % 2:
        return float(sorted_values[mid])
    return (sorted_values[mid - 1] + sorted_values[mid]) / 2


def _mean(values: Iterable[float]) -> float | None:
    values = list(values)
    return math.fsum(values) / len(values) if values else None


def rank_bucket(rank: int) -> tuple[int, int]:
    """Logarithmic bucket ``[2^b, 2^(b+1) - 1]`` containing ``rank``."""
    b = rank.bit_length() - 1
    return 1 << b, (1 << (b + 1)) - 1


# --------------------------------------------------------------------------- CDN latency


CDN_PARTS = ("d_wait", "d_open", "d_read", "d_be", "server_latency")


@dataclass(frozen=True)
class CdnStatusRow:
    cache_status: str
    chunks: int
    median_wait_ms: float | None
    median_open_ms: float | None
    median_read_ms: float | None
    median_be_ms: float | None
    median_server_latency_ms: float | None


@dataclass(frozen=True)
class CdnBreakdown:
    rows: list[CdnStatusRow]
    median_hit_server_latency_ms: float | None
    median_miss_server_latency_ms: float | None
    hit_read_quantiles_ms: tuple[float, ...]


@dataclass
class CdnAcc:
    # status -> one list of microsecond values per part
    values: dict[str, list[list[int]]] = field(default_factory=dict)

    def add(self, chunks: Iterable[JoinedChunk]) -> None:
        for c in chunks:
            parts = self.values.setdefault(c.cache_status.value, [[] for _ in CDN_PARTS])
            for i, name in enumerate(CDN_PARTS):
                parts[i].append(getattr(c, name))

    def merge(self, other: "CdnAcc") -> "CdnAcc":
        for k, parts in other.values.items():
            mine = self.values.setdefault(k, [[] for _ in CDN_PARTS])
            for a, b in zip(mine, parts):
                a.extend(b)
        return self

    def result(self) -> CdnBreakdown:
        rows = []
        for status in sorted(self.values):
            parts = [sorted(v) for v in self.values[status]]
            meds = [median(v) / US_PER_MS for v in parts]
            rows.append(CdnStatusRow(status, len(parts[0]), *meds))
        hits_sl: list[int] = []
        hits_read: list[int] = []
        for status, parts in self.values.items():
            if status != "miss":
                hits_read.extend(parts[2])
                hits_sl.extend(parts[4])
        miss_sl = sorted(self.values["miss"][4]) if "miss" in self.values else []
        hits_sl.sort()
        hits_read.sort()
        return CdnBreakdown(
            rows,
            median(hits_sl) / US_PER_MS if hits_sl else None,
            median(miss_sl) / US_PER_MS if miss_sl else None,
            tuple(quantile(hits_read, q) / US_PER_MS for q in QUANTILES) if hits_read else (),
        )


def cdn_breakdown(chunks: Iterable[JoinedChunk]) -> CdnBreakdown:
    """Median CDN latency components per cache status and the D_READ
    distribution of hits (bimodal when the disk timer fires)."""
    acc = CdnAcc()
    acc.add(chunks)
    return acc.result()


# --------------------------------------------------------------------------- prefixes


@dataclass(frozen=True)
class PrefixPersistence:
    prefix: str
    days_in_tail: int
    total_days: int
    recurrence: float
    persistent: bool


@dataclass
class PrefixAcc:
    """Per (prefix, day) minimum session baseline RTT in microseconds."""

    minima: dict[tuple[str, int], int] = field(default_factory=dict)

    def add(self, ip: str, day: int, baseline_us: int | None) -> None:
        if baseline_us is None:
            return
        k = (prefix_of(ip), day)
        cur = self.minima.get(k)
        if cur is None or baseline_us < cur:
            self.minima[k] = baseline_us

    def merge(self, other: "PrefixAcc") -> "PrefixAcc":
        for k, v in other.minima.items():
            cur = self.minima.get(k)
            if cur is None or v < cur:
                self.minima[k] = v
        return self

    def result(self, threshold_ms: float = BASELINE_TAIL_MS,
               top_fraction: float = TOP_FRACTION) -> list[PrefixPersistence]:
        days: dict[str, int] = Counter()
        tail: dict[str, int] = Counter()
        limit = threshold_ms * US_PER_MS
        for (prefix, _day), v in self.minima.items():
            days[prefix] += 1
            tail[prefix] += v > limit
        rows = sorted(((tail[p] / days[p], p) for p in days), key=lambda x: (-x[0], x[1]))
        if not rows:
            return []
        k = max(1, math.ceil(top_fraction * len(rows)))
        cut = rows[k - 1][0]
        return [
            PrefixPersistence(p, tail[p], days[p], r, r > 0 and r >= cut)
            for r, p in rows
        ]


def prefix_tail_persistence(
    sessions: Iterable[SessionSummary],
    threshold_ms: float = BASELINE_TAIL_MS,
    top_fraction: float = TOP_FRACTION,
) -> list[PrefixPersistence]:
    """Rank /24 prefixes by how often they sit in the high-baseline tail.

    On each day a prefix is in the tail when the minimum baseline RTT over its
    sessions exceeds ``threshold_ms``.  Recurrence is days in the tail over days
    the prefix was seen.  The top ``top_fraction`` of prefixes by recurrence
    (ties at the cut included, zero recurrence never) are flagged persistent.
    Rows come back ranked.
    """
    acc = PrefixAcc()
    for s in sessions:
        base = None if s.baseline_rtt_ms is None else int(round(s.baseline_rtt_ms * US_PER_MS))
        acc.add(s.client_ip, s.day, base)
    return acc.result(threshold_ms, top_fraction)


# --------------------------------------------------------------------------- orgs


@dataclass(frozen=True)
class OrgCv:
    org: str
    sessions: int
    high_cv: int
    fraction: float


@dataclass
class OrgAcc:
    sessions: Counter = field(default_factory=Counter)
    high: Counter = field(default_factory=Counter)

    def add(self, org: str, cv: float | None, threshold: float = CV_THRESHOLD) -> None:
        if cv is None:
            return
        self.sessions[org] += 1
        self.high[org] += cv > threshold

    def merge(self, other: "OrgAcc") -> "OrgAcc":
        self.sessions.update(other.sessions)
        self.high.update(other.high)
        return self

    def result(self, min_sessions: int = MIN_ORG_SESSIONS) -> list[OrgCv]:
        rows = [
            OrgCv(org, n, self.high[org], self.high[org] / n)
            for org, n in self.sessions.items()
            if n >= min_sessions
        ]
        return sorted(rows, key=lambda r: (-r.fraction, r.org))


def org_cv_ranking(
    sessions: Iterable[SessionSummary],
    min_sessions: int = MIN_ORG_SESSIONS,
    cv_threshold: float = CV_THRESHOLD,
) -> list[OrgCv]:
    """Organisations ranked by the share of sessions whose SRTT CV exceeds
    ``cv_threshold``; organisations with fewer than ``min_sessions`` are left out."""
    acc = OrgAcc()
    for s in sessions:
        acc.add(s.org_label, s.cv_srtt, cv_threshold)
    return acc.result(min_sessions)


# --------------------------------------------------------------------------- popularity


@dataclass(frozen=True)
class RankBucket:
    rank_lo: int
    rank_hi: int
    chunks: int
    misses: int
    miss_rate: float
    hit_chunks: int
    mean_hit_server_latency_ms: float | None


@dataclass(frozen=True)
class PopularityResult:
    buckets: list[RankBucket]
    sessions: int
    sessions_with_miss: int
    mean_session_miss_ratio: float | None
    median_session_miss_ratio: float | None


@dataclass
class PopularityAcc:
    # bucket lo -> [chunks, misses, hit chunks, hit server latency us]
    buckets: dict[int, list[int]] = field(default_factory=dict)
    session_misses: list[tuple[int, int]] = field(default_factory=list)  # (misses, chunks)
    sessions: int = 0

    def add(self, rank: int, chunks: Sequence[JoinedChunk]) -> None:
        if not chunks:
            return
        lo, _ = rank_bucket(rank)
        b = self.buckets.setdefault(lo, [0, 0, 0, 0])
        misses = 0
        for c in chunks:
            b[0] += 1
            if c.cache_status.is_hit:
                b[2] += 1
                b[3] += c.server_latency
            else:
                misses += 1
        b[1] += misses
        self.sessions += 1
        if misses:
            self.session_misses.append((misses, len(chunks)))

    def merge(self, other: "PopularityAcc") -> "PopularityAcc":
        for lo, v in other.buckets.items():
            b = self.buckets.setdefault(lo, [0, 0, 0, 0])
            for i in range(4):
                b[i] += v[i]
        self.session_misses.extend(other.session_misses)
        self.sessions += other.sessions
        return self

    def result(self) -> PopularityResult:
        rows = []
        for lo in sorted(self.buckets):
            n, m, h, sl = self.buckets[lo]
            rows.append(RankBucket(lo, 2 * lo - 1, n, m, m / n, h,
                                   sl / h / US_PER_MS if h else None))
        ratios = sorted(m / n for m, n in self.session_misses)
        return PopularityResult(
            rows, self.sessions, len(ratios), _mean(ratios),
            median(ratios) if ratios else None,
        )


def popularity_vs_performance(
    chunks: Iterable[JoinedChunk], ranks: Mapping[str, int]
) -> PopularityResult:
    """Miss rate and mean hit-only server latency per logarithmic rank bucket.

    ``ranks`` maps session_id to the video's popularity rank; chunks of
    sessions without a rank are ignored.
    """
    acc = PopularityAcc()
    for sid, group in group_sessions(chunks).items():
        if sid in ranks:
            acc.add(ranks[sid], group)
    return acc.result()


# --------------------------------------------------------------------------- loss position


@dataclass(frozen=True)
class ChunkPosition:
    chunk_id: int
    chunks: int
    rebuf: int
    p_rebuf: float
    loss_chunks: int
    rebuf_given_loss: int
    p_rebuf_given_loss: float | None
    mean_retx_rate: float


@dataclass
class PositionAcc:
    # chunk id -> [chunks, rebuf, loss, rebuf and loss]
    counts: dict[int, list[int]] = field(default_factory=dict)
    retx: dict[int, list[float]] = field(default_factory=dict)

    def add(self, chunks: Sequence[JoinedChunk]) -> None:
        for c in chunks:
            v = self.counts.setdefault(c.chunk_id, [0, 0, 0, 0])
            reb = c.buf_count > 0
            loss = c.retx_delta > 0
            v[0] += 1
            v[1] += reb
            v[2] += loss
            v[3] += reb and loss
            self.retx.setdefault(c.chunk_id, []).append(c.retx_delta / c.segments if c.segments else 0.0)

    def merge(self, other: "PositionAcc") -> "PositionAcc":
        for k, v in other.counts.items():
            mine = self.counts.setdefault(k, [0, 0, 0, 0])
            for i in range(4):
                mine[i] += v[i]
        for k, vals in other.retx.items():
            self.retx.setdefault(k, []).extend(vals)
        return self

    def result(self) -> list[ChunkPosition]:
        out = []
        for k in sorted(self.counts):
            n, r, l, rl = self.counts[k]
            out.append(ChunkPosition(k, n, r, r / n, l, rl, rl / l if l else None,
                                     math.fsum(sorted(self.retx[k])) / n))
        return out


def rebuf_loss_position(sessions: Iterable[Sequence[JoinedChunk]]) -> list[ChunkPosition]:
    """Per chunk index: P(rebuffer), P(rebuffer | loss in that chunk) and the
    mean retransmission rate.  Loss means a positive retransmission delta."""
    acc = PositionAcc()
    for chunks in sessions:
        acc.add(chunks)
    return acc.result()


# --------------------------------------------------------------------------- shares


@dataclass(frozen=True)
class ShareSplit:
    group: str  # "good" (perf_score >= 1) or "bad"
    chunks: int
    latency_share_median: float | None
    throughput_share_median: float | None
    latency_share_quantiles: tuple[float, ...]


@dataclass
class ShareAcc:
    good: list[float] = field(default_factory=list)
    bad: list[float] = field(default_factory=list)

    def add(self, chunks: Iterable[JoinedChunk]) -> None:
        for c in chunks:
            (self.good if c.perf_score >= 1.0 else self.bad).append(c.latency_share)

    def merge(self, other: "ShareAcc") -> "ShareAcc":
        self.good.extend(other.good)
        self.bad.extend(other.bad)
        return self

    def result(self) -> list[ShareSplit]:
        out = []
        for name, vals in (("good", self.good), ("bad", self.bad)):
            vals = sorted(vals)
            if vals:
                med = median(vals)
                # Throughput share is 1 - latency share, so its median mirrors.
                mirror = sorted(1.0 - v for v in vals)
                out.append(ShareSplit(name, len(vals), med, median(mirror),
                                      tuple(quantile(vals, q) for q in QUANTILES)))
            else:
                out.append(ShareSplit(name, 0, None, None, ()))
        return out


def share_analysis(chunks: Iterable[JoinedChunk]) -> list[ShareSplit]:
    """Latency- and throughput-share distributions for chunks with
    perf_score >= 1 ("good") and < 1 ("bad")."""
    acc = ShareAcc()
    acc.add(chunks)
    return acc.result()


# --------------------------------------------------------------------------- first chunk


@dataclass(frozen=True)
class FirstChunkResult:
    n_first: int
    n_other: int
    median_first_ms: float | None
    median_other_ms: float | None
    median_diff_ms: float | None
    insufficient: bool
    first_quantiles_ms: tuple[float, ...]
    other_quantiles_ms: tuple[float, ...]


def performance_equivalent(
    c: JoinedChunk,
    srtt_band_ms: tuple[float, float] = SRTT_BAND_MS,
    iw: int = IW_SEGMENTS,
    d_cdn_max_ms: float = D_CDN_MAX_MS,
) -> bool:
    """No loss, a window past IW by the end of the chunk, every SRTT sample
    inside the band, a cache hit and a small CDN latency."""
    last = c.last_snapshot
    if last is None or c.retx_delta != 0 or last.cwnd <= iw:
        return False
    lo, hi = srtt_band_ms[0] * US_PER_MS, srtt_band_ms[1] * US_PER_MS
    if not all(lo < s.srtt < hi for s in c.snapshots):
        return False
    return c.cache_status.is_hit and c.d_cdn < d_cdn_max_ms * US_PER_MS


@dataclass
class FirstChunkAcc:
    first: list[int] = field(default_factory=list)  # d_fb us
    other: list[int] = field(default_factory=list)
    srtt_band_ms: tuple[float, float] = SRTT_BAND_MS

    def add(self, chunks: Iterable[JoinedChunk]) -> None:
        for c in chunks:
            if performance_equivalent(c, self.srtt_band_ms):
                (self.first if c.chunk_id == 1 else self.other).append(c.d_fb)

    def merge(self, other: "FirstChunkAcc") -> "FirstChunkAcc":
        self.first.extend(other.first)
        self.other.extend(other.other)
        return self

    def result(self, min_per_arm: int = MIN_PER_ARM) -> FirstChunkResult:
        f = sorted(v / US_PER_MS for v in self.first)
        o = sorted(v / US_PER_MS for v in self.other)
        mf = median(f) if f else None
        mo = median(o) if o else None
        return FirstChunkResult(
            len(f), len(o), mf, mo,
            mf - mo if mf is not None and mo is not None else None,
            len(f) < min_per_arm or len(o) < min_per_arm,
            tuple(quantile(f, q) for q in QUANTILES) if f else (),
            tuple(quantile(o, q) for q in QUANTILES) if o else (),
        )


def first_chunk_comparison(
    chunks: Iterable[JoinedChunk],
    srtt_band_ms: tuple[float, float] = SRTT_BAND_MS,
    min_per_arm: int = MIN_PER_ARM,
) -> FirstChunkResult:
    """D_FB of first chunks against later chunks over performance-equivalent
    chunks; ``insufficient`` is set when either arm has fewer than ``min_per_arm``."""
    acc = FirstChunkAcc(srtt_band_ms=srtt_band_ms)
    acc.add(chunks)
    return acc.result(min_per_arm)


# --------------------------------------------------------------------------- rendering


@dataclass(frozen=True)
class RenderingResult:
    visible_chunks: int
    confirm: int
    low_rate_good: int
    high_rate_bad: int
    confirm_fraction: float | None
    # (rate bin lower edge, chunks, mean drop fraction) for visible chunks
    drop_by_rate: tuple[tuple[float, int, float], ...]


@dataclass
class RenderingAcc:
    counts: Counter = field(default_factory=Counter)
    drops: dict[int, list[float]] = field(default_factory=dict)

    def add(self, chunks: Iterable[JoinedChunk]) -> None:
        for c in chunks:
            if not c.vis:
                continue
            rate = c.perf_score
            bad = c.drop_fraction > BAD_DROP
            if rate < RATE_GOOD:
                self.counts["confirm" if bad else "low_rate_good"] += 1
            else:
                self.counts["high_rate_bad" if bad else "confirm"] += 1
            b = min(int(rate / RATE_BIN), RATE_BINS - 1)
            self.drops.setdefault(b, []).append(c.drop_fraction)

    def merge(self, other: "RenderingAcc") -> "RenderingAcc":
        self.counts.update(other.counts)
        for b, vals in other.drops.items():
            self.drops.setdefault(b, []).extend(vals)
        return self

    def result(self) -> RenderingResult:
        n = sum(self.counts.values())
        table = tuple(
            (b * RATE_BIN, len(v), math.fsum(sorted(v)) / len(v))
            for b, v in sorted(self.drops.items())
        )
        return RenderingResult(
            n, self.counts["confirm"], self.counts["low_rate_good"], self.counts["high_rate_bad"],
            self.counts["confirm"] / n if n else None, table,
        )


def rendering_hypothesis(chunks: Iterable[JoinedChunk]) -> RenderingResult:
    """Split visible chunks by whether their frame drops agree with their
    download rate: rate < 1.5 should drop more than 30% of frames, and
    rate >= 1.5 should not."""
    acc = RenderingAcc()
    acc.add(chunks)
    return acc.result()


# --------------------------------------------------------------------------- driver


@dataclass
class AnalysisState:
    cdn: CdnAcc = field(default_factory=CdnAcc)
    prefixes: PrefixAcc = field(default_factory=PrefixAcc)
    orgs: OrgAcc = field(default_factory=OrgAcc)
    popularity: PopularityAcc = field(default_factory=PopularityAcc)
    position: PositionAcc = field(default_factory=PositionAcc)
    shares: ShareAcc = field(default_factory=ShareAcc)
    first_chunk: FirstChunkAcc = field(default_factory=FirstChunkAcc)
    rendering: RenderingAcc = field(default_factory=RenderingAcc)
    sessions: int = 0
    chunks: int = 0

    def add_session(self, meta: SessionMeta | None, chunks: Sequence[JoinedChunk]) -> None:
        if not chunks:
            return
        self.sessions += 1
        self.chunks += len(chunks)
        self.cdn.add(chunks)
        self.position.add(chunks)
        self.shares.add(chunks)
        self.first_chunk.add(chunks)
        self.rendering.add(chunks)
        if meta is None:
            return
        try:
            base = baseline_rtt_us(chunks)
        except ValueError:
            base = None
        self.prefixes.add(meta.client_ip, meta.day, base)
        srtts = [s.srtt for c in chunks for s in c.snapshots]
        self.orgs.add(meta.org_label, population_cv(srtts) if srtts else None)
        if meta.video_rank is not None:
            self.popularity.add(meta.video_rank, chunks)

    def merge(self, other: "AnalysisState") -> "AnalysisState":
        self.cdn.merge(other.cdn)
        self.prefixes.merge(other.prefixes)
        self.orgs.merge(other.orgs)
        self.popularity.merge(other.popularity)
        self.position.merge(other.position)
        self.shares.merge(other.shares)
        self.first_chunk.merge(other.first_chunk)
        self.rendering.merge(other.rendering)
        self.sessions += other.sessions
        self.chunks += other.chunks
        return self


@dataclass
class AnalysisResult:
    sessions: int
    chunks: int
    cdn: CdnBreakdown
    prefixes: list[PrefixPersistence]
    orgs: list[OrgCv]
    popularity: PopularityResult
    position: list[ChunkPosition]
    shares: list[ShareSplit]
    first_chunk: FirstChunkResult
    rendering: RenderingResult

    def summary(self) -> dict:
        pop = self.popularity
        pos = {p.chunk_id: p for p in self.position}
        fc = self.first_chunk
        r = self.rendering
        return {
            "sessions": self.sessions,
            "chunks": self.chunks,
            "cdn": {
                "median_hit_server_latency_ms": self.cdn.median_hit_server_latency_ms,
                "median_miss_server_latency_ms": self.cdn.median_miss_server_latency_ms,
                "chunks_by_status": {r.cache_status: r.chunks for r in self.cdn.rows},
            },
            "prefix_persistence": {
                "prefixes": len(self.prefixes),
                "persistent": [p.prefix for p in self.prefixes if p.persistent],
            },
            "org_cv": {
                "orgs_ranked": len(self.orgs),
                "ranking": [[o.org, o.fraction] for o in self.orgs],
            },
            "popularity": {
                "sessions": pop.sessions,
                "sessions_with_miss": pop.sessions_with_miss,
                "mean_session_miss_ratio": pop.mean_session_miss_ratio,
                "median_session_miss_ratio": pop.median_session_miss_ratio,
                "miss_rate": (sum(b.misses for b in pop.buckets) / sum(b.chunks for b in pop.buckets)
                              if pop.buckets else None),
            },
            "rebuf_by_chunk": {
                str(k): {"p_rebuf": pos[k].p_rebuf, "p_rebuf_given_loss": pos[k].p_rebuf_given_loss,
                         "mean_retx_rate": pos[k].mean_retx_rate}
                for k in (1, 5, 9) if k in pos
            },
            "shares": {s.group: {"chunks": s.chunks,
                                 "latency_share_median": s.latency_share_median,
                                 "throughput_share_median": s.throughput_share_median}
                       for s in self.shares},
            "first_chunk": {
                "n_first": fc.n_first, "n_other": fc.n_other,
                "median_first_ms": fc.median_first_ms, "median_other_ms": fc.median_other_ms,
                "median_diff_ms": fc.median_diff_ms, "insufficient": fc.insufficient,
            },
            "rendering": {
                "visible_chunks": r.visible_chunks, "confirm": r.confirm,
                "low_rate_good": r.low_rate_good, "high_rate_bad": r.high_rate_bad,
                "confirm_fraction": r.confirm_fraction,
            },
        }


SessionData = tuple  # (SessionMeta | None, list[JoinedChunk])


def _map(shard: Sequence[SessionData]) -> AnalysisState:
    state = AnalysisState()
    for meta, chunks in shard:
        state.add_session(meta, chunks)
    return state


def analyze(sessions: Sequence[SessionData], jobs: int = 1) -> AnalysisResult:
    """Run every analysis over ``(meta, chunks)`` pairs, split into ``jobs`` shards."""
    sessions = list(sessions)
    jobs = max(1, min(jobs, len(sessions) or 1))
    size = -(-len(sessions) // jobs) if sessions else 0
    shards = [sessions[i:i + size] for i in range(0, len(sessions), size)] if size else [[]]
    if jobs == 1 or len(shards) == 1:
        parts = [_map(s) for s in shards]
    else:
        with get_context("fork" if os.name == "posix" else "spawn").Pool(jobs) as pool:
            parts = pool.map(_map, shards)
    state = parts[0]
    for p in parts[1:]:
        state.merge(p)
    return AnalysisResult(
        state.sessions, state.chunks, state.cdn.result(),
        state.prefixes.result(), state.orgs.result(), state.popularity.result(),
        state.position.result(), state.shares.result(), state.first_chunk.result(),
        state.rendering.result(),
    )


def load_sessions(directory: str | Path) -> list[SessionData]:
    """Read ``joined.jsonl`` and (if present) ``sessions.jsonl`` from ``directory``."""
    d = Path(directory)
    chunks = read_jsonl(d / "joined.jsonl", JoinedChunk)
    meta: dict[str, SessionMeta] = {}
    if (d / "sessions.jsonl").exists():
        meta = {m.session_id: m for m in read_jsonl(d / "sessions.jsonl", SessionMeta)}
    return [(meta.get(sid), group) for sid, group in group_sessions(chunks).items()]


def summaries(sessions: Iterable[SessionData]) -> list[SessionSummary]:
    return [session_summary(chunks, meta) for meta, chunks in sessions if chunks]


# --------------------------------------------------------------------------- output


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


CSV_FILES = (
    "cdn_breakdown.csv", "d_read.csv", "prefix_persistence.csv", "org_cv.csv", "popularity.csv", "rebuf_by_chunk.csv",
    "shares.csv", "first_chunk.csv", "rendering.csv", "drop_by_rate.csv",
)


def write_analysis(result: AnalysisResult, out_dir: str | Path) -> list[Path]:
    """Write one CSV per analysis plus ``analysis_summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "cdn_breakdown.csv",
               ("cache_status", "chunks", "median_wait_ms", "median_open_ms", "median_read_ms",
                "median_be_ms", "median_server_latency_ms"),
               (_fields(r) for r in result.cdn.rows))
    _write_csv(out / "d_read.csv", ("quantile", "hit_d_read_ms"),
               zip(QUANTILES, result.cdn.hit_read_quantiles_ms))
    _write_csv(out / "prefix_persistence.csv",
               ("prefix", "days_in_tail", "total_days", "recurrence", "persistent"),
               (_fields(p) for p in result.prefixes))
    _write_csv(out / "org_cv.csv", ("org", "sessions", "high_cv", "fraction"),
               (_fields(o) for o in result.orgs))
    _write_csv(out / "popularity.csv",
               ("rank_lo", "rank_hi", "chunks", "misses", "miss_rate", "hit_chunks",
                "mean_hit_server_latency_ms"),
               (_fields(b) for b in result.popularity.buckets))
    _write_csv(out / "rebuf_by_chunk.csv",
               ("chunk_id", "chunks", "rebuf", "p_rebuf", "loss_chunks", "rebuf_given_loss",
                "p_rebuf_given_loss", "mean_retx_rate"),
               (_fields(p) for p in result.position))
    _write_csv(out / "shares.csv",
               ("group", "quantile", "latency_share", "throughput_share"),
               ((s.group, q, v, 1.0 - v)
                for s in result.shares for q, v in zip(QUANTILES, s.latency_share_quantiles)))
    fc = result.first_chunk
    _write_csv(out / "first_chunk.csv", ("quantile", "first_d_fb_ms", "other_d_fb_ms"),
               ((q, _at(fc.first_quantiles_ms, i), _at(fc.other_quantiles_ms, i))
                for i, q in enumerate(QUANTILES)))
    r = result.rendering
    _write_csv(out / "rendering.csv", ("partition", "chunks"),
               (("confirm", r.confirm), ("low_rate_good", r.low_rate_good),
                ("high_rate_bad", r.high_rate_bad)))
    _write_csv(out / "drop_by_rate.csv", ("rate_lo", "chunks", "mean_drop_fraction"),
               r.drop_by_rate)
    (out / "analysis_summary.json").write_text(
        json.dumps(result.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [out / f for f in CSV_FILES] + [out / "analysis_summary.json"]


def _at(seq: Sequence[float], i: int) -> float | None:
    return seq[i] if i < len(seq) else None


def _fields(obj) -> tuple:
    # dataclasses.astuple deep-copies; a shallow field tuple is all we need.
    return tuple(asdict(obj).values())
