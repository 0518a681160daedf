"""Chunk- and session-level bottleneck localization.

Units: public helpers that take or return plain numbers use milliseconds,
matching the log formats; record fields stay in integer microseconds.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .telemetry import (
    US_PER_MS,
    US_PER_S,
    CacheStatus,
    DiagnosisLabel,
    GroundTruth,
    JoinedChunk,
    Label,
    SessionMeta,
    TcpSnapshot,
    rto_us,
)

METRICS = ("d_fb", "tp_inst", "srtt", "server_latency", "cwnd")
MIN_CHUNKS_EQ4 = 4
DISK_WINDOW_MS = 5.0
BASELINE_TAIL_MS = 100.0
BAD_DROP_FRACTION = 0.30


def rto(srtt_ms: float, srttvar_ms: float) -> float:
    """Retransmission timeout in ms: ``200 + srtt + 4 * srttvar``."""
    if srtt_ms <= 0 or srttvar_ms < 0:
        raise ValueError("need srtt > 0 and srttvar >= 0")
    return 200.0 + srtt_ms + 4.0 * srttvar_ms


def conn_throughput(snapshot: TcpSnapshot) -> float:
    """Connection throughput ``mss * cwnd / srtt`` in bytes per second."""
    if snapshot.srtt <= 0:
        raise ValueError("srtt must be positive")
    return snapshot.mss * snapshot.cwnd * US_PER_S / snapshot.srtt


# --------------------------------------------------------------------------- Eq. 4


def chunk_metrics(c: JoinedChunk) -> tuple[float, float, float, float, float]:
    """(d_fb ms, tp_inst B/s, srtt ms, server latency ms, cwnd) for one chunk.

    SRTT and CWND come from the snapshot nearest the chunk start; they are NaN
    when the chunk has no snapshots.
    """
    s = c.first_snapshot
    srtt = s.srtt / US_PER_MS if s is not None else math.nan
    cwnd = float(s.cwnd) if s is not None else math.nan
    return (c.d_fb / US_PER_MS, c.tp_inst, srtt, c.server_latency / US_PER_MS, cwnd)


@dataclass(frozen=True)
class SessionStats:
    """Population mean and standard deviation of each Eq. 4 metric."""

    n: int
    mean: Mapping[str, float]
    std: Mapping[str, float]

    @classmethod
    def from_values(cls, values: np.ndarray) -> "SessionStats":
        if values.ndim != 2 or values.shape[1] != len(METRICS):
            raise ValueError("expected an (n, 5) array")
        mu = np.nanmean(values, axis=0) if len(values) else np.full(len(METRICS), np.nan)
        sd = np.nanstd(values, axis=0) if len(values) else np.full(len(METRICS), np.nan)
        return cls(len(values), dict(zip(METRICS, map(float, mu))), dict(zip(METRICS, map(float, sd))))

    @classmethod
    def from_chunks(cls, chunks: Sequence[JoinedChunk]) -> "SessionStats":
        return cls.from_values(_matrix(chunks))

    def z(self, metric: str, value: float) -> float:
        sd = self.std[metric]
        if sd > 0:
            return (value - self.mean[metric]) / sd
        return 0.0


def _matrix(chunks: Sequence[JoinedChunk]) -> np.ndarray:
    if not chunks:
        return np.empty((0, len(METRICS)))
    return np.array([chunk_metrics(c) for c in chunks], dtype=float)


class DsFlag(NamedTuple):
    chunk_id: int
    evidence: dict[str, float]


def _eq4_mask(x: np.ndarray, mu: np.ndarray, sd: np.ndarray) -> np.ndarray:
    # Spikes use strict inequalities, so sigma = 0 never flags.  The calm
    # guards are non-strict: a metric that is constant over the session
    # (sigma = 0, e.g. a cwnd pinned by the bandwidth cap) is not elevated.
    d_fb, tp, srtt, sl, cwnd = (x[..., i] for i in range(5))
    return (
        (d_fb > mu[..., 0] + 2 * sd[..., 0])
        & (tp > mu[..., 1] + 2 * sd[..., 1])
        & (srtt <= mu[..., 2] + sd[..., 2])
        & (sl <= mu[..., 3] + sd[..., 3])
        & (cwnd <= mu[..., 4] + sd[..., 4])
    )


def detect_ds_outliers(
    chunks: Sequence[JoinedChunk],
    *,
    leave_one_out: bool = False,
    min_chunks: int = MIN_CHUNKS_EQ4,
) -> list[DsFlag]:
    """Chunks whose first-byte delay and instantaneous throughput are both
    more than two standard deviations above the session mean while SRTT,
    server latency and CWND are within one standard deviation above it.

    Statistics use the population standard deviation over all chunks of the
    session, the candidate included, unless ``leave_one_out`` is set.
    Sessions shorter than ``min_chunks`` and chunks without snapshots are
    never flagged.
    """
    n = len(chunks)
    if n < max(min_chunks, 2):
        return []
    x = _matrix(chunks)
    if leave_one_out:
        # mean/std of the other n-1 chunks, vectorised.
        s1 = np.nansum(x, axis=0)
        s2 = np.nansum(x * x, axis=0)
        cnt = np.sum(~np.isnan(x), axis=0)
        xz = np.nan_to_num(x)
        has = ~np.isnan(x)
        k = cnt - has
        with np.errstate(invalid="ignore", divide="ignore"):
            mu = (s1 - xz) / k
            var = (s2 - xz * xz) / k - mu * mu
        sd = np.sqrt(np.maximum(var, 0.0))
        # Clean up round-off so constant columns have exactly zero spread.
        const = np.nanmax(x, axis=0) == np.nanmin(x, axis=0)
        sd[:, const] = 0.0
    else:
        mu = np.nanmean(x, axis=0)
        sd = np.nanstd(x, axis=0)
        mu = np.broadcast_to(mu, x.shape)
        sd = np.broadcast_to(sd, x.shape)
    with np.errstate(invalid="ignore"):
        mask = _eq4_mask(x, mu, sd) & ~np.isnan(x).any(axis=1)
    out = []
    for i in np.flatnonzero(mask):
        ev = {}
        for j, name in enumerate(METRICS):
            ev[f"z_{name}"] = float((x[i, j] - mu[i, j]) / sd[i, j]) if sd[i, j] > 0 else 0.0
        out.append(DsFlag(chunks[i].chunk_id, ev))
    return out


# --------------------------------------------------------------------------- Eq. 5


def estimate_persistent_ds_us(chunk: JoinedChunk) -> int | None:
    s = chunk.first_snapshot
    if s is None:
        return None
    return max(0, chunk.d_fb - chunk.server_latency - rto_us(s.srtt, s.srttvar))


def estimate_persistent_ds(chunk: JoinedChunk) -> float | None:
    """Lower bound on download-stack latency (ms), using the RTO computed from
    the snapshot nearest the chunk start as a conservative stand-in for rtt0.
    Returns None when the chunk has no snapshot.
    """
    v = estimate_persistent_ds_us(chunk)
    return None if v is None else v / US_PER_MS


def baseline_rtt_us(chunks: Iterable[JoinedChunk]) -> int:
    best = None
    for c in chunks:
        s = c.first_snapshot
        if s is None:
            continue
        v = min(s.srtt, c.rtt0_ub)
        if best is None or v < best:
            best = v
    if best is None:
        raise ValueError("baseline RTT needs at least one chunk with a snapshot")
    return best


def baseline_rtt(chunks: Iterable[JoinedChunk]) -> float:
    """Session baseline RTT (ms): minimum over chunks of min(SRTT, rtt0 bound)."""
    return baseline_rtt_us(chunks) / US_PER_MS


# --------------------------------------------------------------------------- labels


def classify_chunk(
    chunk: JoinedChunk,
    ds_flag: DsFlag | None = None,
    ds_bound_us: int | None = None,
    *,
    timer_ms: float = 10.0,
    disk_window_ms: float = DISK_WINDOW_MS,
    baseline_threshold_ms: float = BASELINE_TAIL_MS,
) -> DiagnosisLabel:
    """Assign a primary label (first matching rule) plus any other rules that
    also match as secondary labels."""
    matched: list[Label] = []
    ev: dict[str, float] = {}
    if ds_flag is not None:
        matched.append(Label.DOWNLOAD_STACK_BUFFERED)
        ev.update(ds_flag.evidence)
    sl = chunk.server_latency
    if chunk.cache_status is CacheStatus.MISS and chunk.d_be * 2 > sl:
        matched.append(Label.CACHE_MISS_LATENCY)
        ev["d_be_ms"] = chunk.d_be / US_PER_MS
        ev["server_latency_ms"] = sl / US_PER_MS
    timer = timer_ms * US_PER_MS
    if chunk.cache_status.is_hit and timer <= chunk.d_read < timer + disk_window_ms * US_PER_MS:
        matched.append(Label.DISK_TIMER_LATENCY)
        ev["d_read_ms"] = chunk.d_read / US_PER_MS
    retx = chunk.retx_delta
    if retx > 0 and chunk.perf_score < 1.0:
        matched.append(Label.NETWORK_LOSS)
        ev["retx_delta"] = float(retx)
        ev["perf_score"] = chunk.perf_score
    if chunk.perf_score < 1.0 and chunk.throughput_share > 0.5:
        matched.append(Label.THROUGHPUT_LIMITED)
        ev["perf_score"] = chunk.perf_score
        ev["throughput_share"] = chunk.throughput_share
    if chunk.rtt0_ub > baseline_threshold_ms * US_PER_MS:
        matched.append(Label.NETWORK_BASELINE_LATENCY)
        ev["rtt0_ub_ms"] = chunk.rtt0_ub / US_PER_MS
    if ds_bound_us is not None and ds_bound_us > 0:
        matched.append(Label.PERSISTENT_DOWNLOAD_STACK)
        ev["ds_lower_bound_ms"] = ds_bound_us / US_PER_MS
    if chunk.vis and chunk.drop_fraction > BAD_DROP_FRACTION:
        matched.append(Label.RENDERING_DROP)
        ev["drop_fraction"] = chunk.drop_fraction
    if not matched:
        return DiagnosisLabel(chunk.session_id, chunk.chunk_id, Label.NONE)
    return DiagnosisLabel(chunk.session_id, chunk.chunk_id, matched[0], tuple(matched[1:]), ev)


def diagnose_session(
    chunks: Sequence[JoinedChunk],
    *,
    leave_one_out: bool = False,
    timer_ms: float = 10.0,
) -> list[DiagnosisLabel]:
    """Run every detector over one session (chunks ordered by chunk_id)."""
    flags = {f.chunk_id: f for f in detect_ds_outliers(chunks, leave_one_out=leave_one_out)}
    return [
        classify_chunk(c, flags.get(c.chunk_id), estimate_persistent_ds_us(c), timer_ms=timer_ms)
        for c in chunks
    ]


# --------------------------------------------------------------------------- sessions


@dataclass
class SessionSummary:
    session_id: str
    n_chunks: int
    startup_delay_ms: float
    startup_delay_source: str
    rebuffer_ratio: float
    avg_bitrate: float
    dropped_fraction: float
    cv_srtt: float | None
    retx_rate: float
    baseline_rtt_ms: float | None
    label_histogram: dict[str, int] = field(default_factory=dict)
    client_ip: str = ""
    org_label: str = ""
    user_agent: str = ""
    day: int = 0
    video_rank: int | None = None
    distance_km: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def population_cv(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=float)
    mu = arr.mean()
    return float(arr.std() / mu) if mu > 0 else 0.0


def session_summary(
    chunks: Sequence[JoinedChunk],
    meta: SessionMeta | None = None,
    labels: Sequence[DiagnosisLabel] = (),
    *,
    startup_delay_ms: float | None = None,
) -> SessionSummary:
    """QoE and network summary for one session.

    Startup delay is the measured value when the caller has it (the simulator
    knows exactly when playback started); otherwise the first chunk's
    ``d_fb + d_lb`` stands in for it.
    """
    if not chunks:
        raise ValueError("empty session")
    chunks = sorted(chunks, key=lambda c: c.chunk_id)
    sid = chunks[0].session_id
    if startup_delay_ms is None:
        first = chunks[0]
        startup_delay_ms = (first.d_fb + first.d_lb) / US_PER_MS
        source = "first_chunk_download"
    else:
        source = "measured"
    stall = sum(c.buf_dur for c in chunks)
    played = sum(c.tau for c in chunks)
    srtts = [s.srtt for c in chunks for s in c.snapshots]
    frames = sum(c.total_frames for c in chunks)
    segs = sum(c.segments for c in chunks)
    try:
        base = baseline_rtt(chunks)
    except ValueError:
        base = None
    hist = Counter(lab.label.value for lab in labels)
    summary = SessionSummary(
        session_id=sid,
        n_chunks=len(chunks),
        startup_delay_ms=startup_delay_ms,
        startup_delay_source=source,
        rebuffer_ratio=stall / (stall + played),
        avg_bitrate=sum(c.bitrate for c in chunks) / len(chunks),
        dropped_fraction=sum(c.drop_fr for c in chunks) / frames if frames > 0 else 0.0,
        cv_srtt=population_cv(srtts) if srtts else None,
        retx_rate=sum(c.retx_delta for c in chunks) / segs,
        baseline_rtt_ms=base,
        label_histogram=dict(sorted(hist.items())),
    )
    if meta is not None:
        summary.client_ip = meta.client_ip
        summary.org_label = meta.org_label
        summary.user_agent = meta.user_agent
        summary.day = meta.day
        summary.video_rank = meta.video_rank
        summary.distance_km = meta.distance_km
    return summary


# --------------------------------------------------------------------------- scoring

# Which ground-truth injections each label is scored against.
TRUTH_FOR_LABEL: dict[Label, tuple[str, ...]] = {
    Label.DOWNLOAD_STACK_BUFFERED: (Label.DOWNLOAD_STACK_BUFFERED.value,),
    Label.PERSISTENT_DOWNLOAD_STACK: (Label.PERSISTENT_DOWNLOAD_STACK.value,
                                      "first_chunk_download_stack"),
    Label.NETWORK_LOSS: (Label.NETWORK_LOSS.value,),
    Label.CACHE_MISS_LATENCY: (Label.CACHE_MISS_LATENCY.value,),
    Label.DISK_TIMER_LATENCY: (Label.DISK_TIMER_LATENCY.value,),
}


@dataclass(frozen=True)
class Score:
    positives: int
    predicted: int
    true_positives: int

    @property
    def precision(self) -> float | None:
        return self.true_positives / self.predicted if self.predicted else None

    @property
    def recall(self) -> float | None:
        return self.true_positives / self.positives if self.positives else None

    def to_dict(self) -> dict:
        return {
            "positives": self.positives,
            "predicted": self.predicted,
            "true_positives": self.true_positives,
            "precision": self.precision,
            "recall": self.recall,
        }


def score_sets(predicted: set, truth: set) -> Score:
    return Score(len(truth), len(predicted), len(predicted & truth))


def score_labels(
    labels: Iterable[DiagnosisLabel],
    truth: Iterable[GroundTruth],
) -> dict[str, Score]:
    """Precision and recall per scorable label kind.

    The buffered download-stack detector is scored on the primary label, since
    it has the highest priority; the other kinds on primary or secondary.
    """
    labels = list(labels)
    truth = [t for t in truth if t.chunk_id > 0]
    out = {}
    for kind, injected in TRUTH_FOR_LABEL.items():
        want = set(injected)
        t_keys = {t.key for t in truth if want.intersection(t.injected)}
        if kind is Label.DOWNLOAD_STACK_BUFFERED:
            p_keys = {lab.key for lab in labels if lab.label is kind}
        else:
            p_keys = {lab.key for lab in labels if kind in lab.all_labels}
        out[kind.value] = score_sets(p_keys, t_keys)
    return out
