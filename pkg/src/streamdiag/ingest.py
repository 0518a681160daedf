"""Log parsing, per-chunk joining and proxy filtering."""
from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .telemetry import (
    CdnChunkRecord,
    JoinedChunk,
    PlayerChunkRecord,
    RecordError,
    SessionMeta,
    TcpSnapshot,
    derive,
    loads,
)

log = logging.getLogger(__name__)

MINUTES_PER_DAY = 1440.0

SOURCES: dict[str, type] = {
    "player": PlayerChunkRecord,
    "cdn": CdnChunkRecord,
    "tcp": TcpSnapshot,
    "meta": SessionMeta,
}

DEFAULT_FILES = {
    "player": "player.jsonl",
    "cdn": "cdn.jsonl",
    "tcp": "tcp.jsonl",
    "meta": "sessions.jsonl",
}


class IngestError(RuntimeError):
    """An input file could not be read at all."""


@dataclass
class ParseStats:
    lines: int = 0
    records: int = 0
    malformed: int = 0
    blank: int = 0


@dataclass
class ParsedLogs:
    player: list[PlayerChunkRecord] = field(default_factory=list)
    cdn: list[CdnChunkRecord] = field(default_factory=list)
    tcp: list[TcpSnapshot] = field(default_factory=list)
    meta: list[SessionMeta] = field(default_factory=list)
    stats: dict[str, ParseStats] = field(default_factory=dict)

    @property
    def malformed(self) -> int:
        return sum(s.malformed for s in self.stats.values())


def read_jsonl(path: str | Path, cls: type, stats: ParseStats | None = None) -> list:
    """Parse one JSON-Lines file into ``cls`` records.

    Malformed lines are logged and counted, then skipped.  Blank lines are
    counted separately and are not an error.
    """
    stats = stats if stats is not None else ParseStats()
    out = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            stats.lines += 1
            if not line.strip():
                stats.blank += 1
                continue
            try:
                out.append(loads(cls, line))
            except (ValueError, TypeError, KeyError, AttributeError) as exc:
                # JSONDecodeError and RecordError are both ValueErrors.
                stats.malformed += 1
                log.warning("%s:%d: skipping malformed %s record (%s: %s)",
                            path, lineno, cls.__name__, type(exc).__name__, exc)
    stats.records = len(out)
    return out


def parse_logs(paths: Mapping[str, str | Path | None]) -> ParsedLogs:
    """Read any of the ``player``, ``cdn``, ``tcp`` and ``meta`` sources.

    Missing keys (or None) give empty streams; unknown keys are rejected.
    """
    unknown = set(paths) - set(SOURCES)
    if unknown:
        raise ValueError(f"unknown log sources: {sorted(unknown)}")
    parsed = ParsedLogs()
    for name, cls in SOURCES.items():
        stats = ParseStats()
        parsed.stats[name] = stats
        path = paths.get(name)
        if path is not None:
            setattr(parsed, name, read_jsonl(path, cls, stats))
    return parsed


def parse_dir(directory: str | Path) -> ParsedLogs:
    """Read the standard file names from ``directory``; tcp and meta are optional."""
    d = Path(directory)
    paths = {}
    for k, name in DEFAULT_FILES.items():
        f = d / name
        paths[k] = f if f.exists() or k in ("player", "cdn") else None
    return parse_logs(paths)


@dataclass
class JoinReport:
    """Accounting for one join.

    For both the player and CDN sources ``total == joined + rejected +
    orphans + duplicates``; duplicates count every quarantined copy and
    ``rejected`` counts pairs that failed :func:`derive`.
    """

    total_player: int = 0
    total_cdn: int = 0
    total_tcp: int = 0
    total_meta: int = 0
    joined: int = 0
    orphan_player: int = 0
    orphan_cdn: int = 0
    duplicate_player: int = 0
    duplicate_cdn: int = 0
    duplicate_meta: int = 0
    duplicate_keys: int = 0
    tcp_attached: int = 0
    tcp_dropped: int = 0
    inconsistent: int = 0
    rejected: int = 0
    malformed: int = 0
    sessions: int = 0
    proxy_filtered_sessions: int = 0
    proxy_reasons: dict[str, int] = field(default_factory=dict)

    @property
    def kept_fraction(self) -> float:
        if self.sessions == 0:
            return 1.0
        return (self.sessions - self.proxy_filtered_sessions) / self.sessions

    def merge(self, other: "JoinReport") -> "JoinReport":
        a, b = asdict(self), asdict(other)
        out = {k: a[k] + b[k] for k in a if k != "proxy_reasons"}
        reasons = Counter(self.proxy_reasons)
        reasons.update(other.proxy_reasons)
        return JoinReport(**out, proxy_reasons=dict(sorted(reasons.items())))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kept_fraction"] = self.kept_fraction
        return d


def _index(records: Iterable, key=lambda r: r.key) -> tuple[dict, set]:
    seen: dict = {}
    dups: set = set()
    for r in records:
        k = key(r)
        if k in seen:
            dups.add(k)
        else:
            seen[k] = r
    return seen, dups


def join_records(
    player: Sequence[PlayerChunkRecord],
    cdn: Sequence[CdnChunkRecord],
    tcp: Sequence[TcpSnapshot] = (),
    meta: Sequence[SessionMeta] = (),
    default_chunk_duration: float = 6.0,
) -> tuple[list[JoinedChunk], JoinReport]:
    """Join player and CDN records on (session_id, chunk_id).

    The output is sorted by key, so it does not depend on input order.
    Keys that appear more than once in a source are quarantined in that source;
    the partner record of a quarantined key is reported as an orphan.
    """
    rep = JoinReport(total_player=len(player), total_cdn=len(cdn),
                     total_tcp=len(tcp), total_meta=len(meta))
    p_idx, p_dup = _index(player)
    c_idx, c_dup = _index(cdn)
    m_idx, m_dup = _index(meta, key=lambda m: m.session_id)
    pc = Counter(r.key for r in player)
    cc = Counter(r.key for r in cdn)
    rep.duplicate_player = sum(pc[k] for k in p_dup)
    rep.duplicate_cdn = sum(cc[k] for k in c_dup)
    rep.duplicate_meta = sum(1 for m in meta if m.session_id in m_dup)
    rep.duplicate_keys = len(p_dup | c_dup)
    for k in p_dup:
        del p_idx[k]
    for k in c_dup:
        del c_idx[k]
    for k in m_dup:
        del m_idx[k]

    snaps: dict[tuple[str, int], list[TcpSnapshot]] = defaultdict(list)
    for s in tcp:
        snaps[s.key].append(s)

    both = sorted(p_idx.keys() & c_idx.keys())
    rep.orphan_player = len(p_idx) - len(both)
    rep.orphan_cdn = len(c_idx) - len(both)
    out: list[JoinedChunk] = []
    attached = 0
    for k in both:
        m = m_idx.get(k[0])
        tau = m.chunk_duration if m is not None else default_chunk_duration
        group = sorted(snaps.get(k, ()), key=lambda s: (s.t_offset, s.retx, s.cwnd, s.srtt, s.srttvar, s.mss))
        try:
            j = derive(p_idx[k], c_idx[k], group, tau)
        except RecordError as exc:
            rep.rejected += 1
            log.warning("rejecting chunk %s: %s", k, exc)
            continue
        attached += len(group)
        rep.inconsistent += j.inconsistent
        out.append(j)
    rep.joined = len(out)
    rep.tcp_attached = attached
    rep.tcp_dropped = len(tcp) - attached
    rep.sessions = len({k[0] for k in both})
    return out, rep


def group_sessions(chunks: Iterable[JoinedChunk]) -> dict[str, list[JoinedChunk]]:
    """Group chunks by session, each list ordered by chunk_id; keys sorted."""
    groups: dict[str, list[JoinedChunk]] = defaultdict(list)
    for c in chunks:
        groups[c.session_id].append(c)
    return {sid: sorted(groups[sid], key=lambda c: c.chunk_id) for sid in sorted(groups)}


@dataclass
class ProxyFilterResult:
    kept: list[SessionMeta]
    dropped: dict[str, str]  # session_id -> reason

    @property
    def reasons(self) -> dict[str, int]:
        return dict(sorted(Counter(self.dropped.values()).items()))


def filter_proxies(
    sessions: Sequence[SessionMeta],
    volume_threshold_min: float = MINUTES_PER_DAY,
) -> ProxyFilterResult:
    """Drop sessions that look like they came through a proxy.

    Reasons, checked in this order: ``ip_mismatch`` (player and CDN saw
    different client IPs), ``ua_mismatch`` (different user agents) and
    ``volume`` (the client IP watched more than ``volume_threshold_min``
    minutes of video in a day).  Missing beacon fields are not a mismatch.
    """
    minutes: dict[tuple[str, int], float] = defaultdict(float)
    for m in sessions:
        minutes[(m.client_ip, m.day)] += m.video_length / 60.0
    kept: list[SessionMeta] = []
    dropped: dict[str, str] = {}
    for m in sessions:
        if m.beacon_ip is not None and m.beacon_ip != m.client_ip:
            dropped[m.session_id] = "ip_mismatch"
        elif m.beacon_user_agent is not None and m.beacon_user_agent != m.user_agent:
            dropped[m.session_id] = "ua_mismatch"
        elif minutes[(m.client_ip, m.day)] > volume_threshold_min:
            dropped[m.session_id] = "volume"
        else:
            kept.append(m)
    return ProxyFilterResult(kept, dropped)


def apply_proxy_filter(
    chunks: Sequence[JoinedChunk],
    meta: Sequence[SessionMeta],
    report: JoinReport | None = None,
    volume_threshold_min: float = MINUTES_PER_DAY,
) -> tuple[list[JoinedChunk], ProxyFilterResult]:
    """Filter joined chunks down to sessions that pass ``filter_proxies``.

    Chunks whose session has no metadata are kept.
    """
    res = filter_proxies(meta, volume_threshold_min)
    if report is not None:
        report.proxy_filtered_sessions = len(res.dropped)
        report.proxy_reasons = res.reasons
        report.sessions = max(report.sessions, len({m.session_id for m in meta}))
    drop = res.dropped
    return [c for c in chunks if c.session_id not in drop], res


def write_joined(chunks: Iterable[JoinedChunk], path: str | Path) -> int:
    from .telemetry import dumps

    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for c in chunks:
            fh.write(dumps(c))
            fh.write("\n")
            n += 1
    return n


def write_report(report: JoinReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
