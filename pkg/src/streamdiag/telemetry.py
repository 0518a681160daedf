"""Domain records shared by the simulator, the ingest stage and the diagnosis engine.

All durations are held as integer microseconds so that sums and differences are
exact.  The JSON-Lines wire format carries them as decimal milliseconds; because
every value is a whole number of microseconds the conversion is lossless.
"""
from __future__ import annotations

import enum
import json
from dataclasses import MISSING, dataclass, field, fields
from typing import Any, Mapping, Sequence

US_PER_MS = 1000
US_PER_S = 1_000_000

# Linux clamps the minimum RTO at 200 ms.
RTO_MIN_US = 200 * US_PER_MS


class RecordError(ValueError):
    """A record violates a schema invariant and cannot be used."""


def ms_to_us(value: float) -> int:
    return int(round(float(value) * US_PER_MS))


def us_to_ms(value: int) -> float:
    return value / US_PER_MS


def rto_us(srtt_us: int, srttvar_us: int) -> int:
    """Retransmission timeout as computed by the Linux sender, in microseconds."""
    return RTO_MIN_US + srtt_us + 4 * srttvar_us


class CacheStatus(str, enum.Enum):
    HIT_MEMORY = "hit_memory"
    HIT_DISK = "hit_disk"
    MISS = "miss"

    @property
    def is_hit(self) -> bool:
        return self is not CacheStatus.MISS


class Label(str, enum.Enum):
    CACHE_MISS_LATENCY = "cache_miss_latency"
    DISK_TIMER_LATENCY = "disk_timer_latency"
    NETWORK_BASELINE_LATENCY = "network_baseline_latency"
    NETWORK_LATENCY_VARIATION = "network_latency_variation"
    NETWORK_LOSS = "network_loss"
    THROUGHPUT_LIMITED = "throughput_limited"
    DOWNLOAD_STACK_BUFFERED = "download_stack_buffered"
    PERSISTENT_DOWNLOAD_STACK = "persistent_download_stack"
    RENDERING_DROP = "rendering_drop"
    NONE = "none"


def _us(**kw: Any) -> Any:
    return field(metadata={"unit": "us"}, **kw)


@dataclass(frozen=True, slots=True)
class PlayerChunkRecord:
    """Client-side milestones and playout counters for one chunk."""

    session_id: str
    chunk_id: int
    d_fb: int = _us()
    d_lb: int = _us()
    bitrate: int = 0  # kbps
    buf_count: int = 0
    buf_dur: int = _us(default=0)
    vis: bool = True
    avg_fr: float = 0.0
    drop_fr: int = 0

    def __post_init__(self) -> None:
        if self.chunk_id < 1:
            raise RecordError(f"chunk_id must be >= 1, got {self.chunk_id}")
        if self.d_fb < 0 or self.d_lb < 0:
            raise RecordError("negative first/last byte delay")
        if self.buf_count < 0 or self.buf_dur < 0:
            raise RecordError("negative rebuffering counters")
        if self.buf_count == 0 and self.buf_dur != 0:
            raise RecordError("buf_dur without a rebuffering event")
        if self.drop_fr < 0 or self.avg_fr < 0:
            raise RecordError("negative frame counters")

    @property
    def key(self) -> tuple[str, int]:
        return (self.session_id, self.chunk_id)


@dataclass(frozen=True, slots=True)
class CdnChunkRecord:
    """Server-side serving timings and cache outcome for one chunk."""

    session_id: str
    chunk_id: int
    d_wait: int = _us()
    d_open: int = _us()
    d_read: int = _us()
    d_be: int = _us()
    cache_status: CacheStatus = CacheStatus.HIT_MEMORY
    chunk_size: int = 0  # bytes

    def __post_init__(self) -> None:
        if self.chunk_id < 1:
            raise RecordError(f"chunk_id must be >= 1, got {self.chunk_id}")
        if min(self.d_wait, self.d_open, self.d_read, self.d_be) < 0:
            raise RecordError("negative CDN delay")
        if not isinstance(self.cache_status, CacheStatus):
            object.__setattr__(self, "cache_status", CacheStatus(self.cache_status))
        if self.cache_status.is_hit and self.d_be != 0:
            raise RecordError("backend latency on a cache hit")
        if self.chunk_size < 0:
            raise RecordError("negative chunk size")

    @property
    def key(self) -> tuple[str, int]:
        return (self.session_id, self.chunk_id)

    @property
    def d_cdn(self) -> int:
        return self.d_wait + self.d_open + self.d_read


@dataclass(frozen=True, slots=True)
class TcpSnapshot:
    session_id: str
    chunk_id: int
    t_offset: int = _us()
    cwnd: int = 1
    srtt: int = _us(default=1)
    srttvar: int = _us(default=0)
    retx: int = 0
    mss: int = 1460

    def __post_init__(self) -> None:
        if self.srtt <= 0:
            raise RecordError("srtt must be positive")
        if self.srttvar < 0:
            raise RecordError("srttvar must be non-negative")
        if self.cwnd < 1:
            raise RecordError("cwnd must be >= 1")

    @property
    def key(self) -> tuple[str, int]:
        return (self.session_id, self.chunk_id)


@dataclass(frozen=True, slots=True)
class SessionMeta:
    """Per-session metadata.  ``client_ip``/``user_agent`` are the values seen by
    the CDN; ``beacon_ip``/``beacon_user_agent`` those reported by the player."""

    session_id: str
    client_ip: str
    user_agent: str
    video_length: float  # seconds
    chunk_duration: float = 6.0  # seconds
    pop_id: str = ""
    server_id: str = ""
    org_label: str = ""
    distance_km: float = 0.0
    beacon_ip: str | None = None
    beacon_user_agent: str | None = None
    day: int = 0
    video_id: str = ""
    video_rank: int | None = None

    def __post_init__(self) -> None:
        if self.video_length <= 0:
            raise RecordError("video_length must be positive")
        if self.chunk_duration <= 0:
            raise RecordError("chunk_duration must be positive")
        if self.distance_km < 0:
            raise RecordError("distance_km must be non-negative")

    @property
    def tau_us(self) -> int:
        return int(round(self.chunk_duration * US_PER_S))

    @property
    def os_label(self) -> str:
        return self.user_agent.split("/", 1)[0]

    @property
    def browser_label(self) -> str:
        parts = self.user_agent.split("/", 1)
        return parts[1] if len(parts) > 1 else ""


@dataclass(frozen=True, slots=True)
class JoinedChunk:
    """Player and CDN view of one chunk with its TCP snapshots and derived fields."""

    session_id: str
    chunk_id: int
    d_fb: int = _us()
    d_lb: int = _us()
    bitrate: int = 0
    buf_count: int = 0
    buf_dur: int = _us(default=0)
    vis: bool = True
    avg_fr: float = 0.0
    drop_fr: int = 0
    d_wait: int = _us(default=0)
    d_open: int = _us(default=0)
    d_read: int = _us(default=0)
    d_be: int = _us(default=0)
    cache_status: CacheStatus = CacheStatus.HIT_MEMORY
    chunk_size: int = 0
    tau: int = _us(default=6 * US_PER_S)
    snapshots: tuple[TcpSnapshot, ...] = ()
    rtt0_ub: int = _us(default=0)
    tp_inst: float = 0.0  # bytes/s
    perf_score: float = 0.0
    server_latency: int = _us(default=0)
    inconsistent: bool = False

    @property
    def key(self) -> tuple[str, int]:
        return (self.session_id, self.chunk_id)

    @property
    def d_cdn(self) -> int:
        return self.d_wait + self.d_open + self.d_read

    @property
    def download_time(self) -> int:
        return self.d_fb + self.d_lb

    @property
    def latency_share(self) -> float:
        return self.d_fb / (self.d_fb + self.d_lb)

    @property
    def throughput_share(self) -> float:
        return self.d_lb / (self.d_fb + self.d_lb)

    @property
    def total_frames(self) -> float:
        return self.drop_fr + self.avg_fr * self.tau / US_PER_S

    @property
    def drop_fraction(self) -> float:
        total = self.total_frames
        return self.drop_fr / total if total > 0 else 0.0

    @property
    def segments(self) -> int:
        mss = self.snapshots[0].mss if self.snapshots else 1460
        return max(1, -(-self.chunk_size // mss))

    @property
    def first_snapshot(self) -> TcpSnapshot | None:
        return self.snapshots[0] if self.snapshots else None

    @property
    def last_snapshot(self) -> TcpSnapshot | None:
        return self.snapshots[-1] if self.snapshots else None

    @property
    def retx_delta(self) -> int:
        """Retransmissions observed between the chunk's first and last snapshot."""
        if len(self.snapshots) < 2:
            return 0
        return self.snapshots[-1].retx - self.snapshots[0].retx

    def implied_ds(self, rtt0_estimate_us: int) -> int:
        """Download-stack latency left over once server latency and an rtt0
        estimate are removed from the first-byte delay."""
        return self.d_fb - self.server_latency - rtt0_estimate_us

    def player_record(self) -> PlayerChunkRecord:
        return PlayerChunkRecord(
            self.session_id, self.chunk_id, self.d_fb, self.d_lb, self.bitrate,
            self.buf_count, self.buf_dur, self.vis, self.avg_fr, self.drop_fr,
        )

    def cdn_record(self) -> CdnChunkRecord:
        return CdnChunkRecord(
            self.session_id, self.chunk_id, self.d_wait, self.d_open, self.d_read,
            self.d_be, self.cache_status, self.chunk_size,
        )


def derive(
    player: PlayerChunkRecord,
    cdn: CdnChunkRecord,
    snapshots: Sequence[TcpSnapshot] = (),
    chunk_duration: float = 6.0,
) -> JoinedChunk:
    """Fuse a player and CDN record and fill in the derived quantities.

    ``rtt0_ub`` is left unclamped; a negative value marks the chunk
    ``inconsistent`` instead.
    """
    if player.key != cdn.key:
        raise RecordError(f"key mismatch {player.key} != {cdn.key}")
    if player.d_lb <= 0:
        raise RecordError(f"{player.key}: d_lb must be positive")
    tau = int(round(chunk_duration * US_PER_S))
    if tau <= 0:
        raise RecordError("chunk duration must be positive")
    server_latency = cdn.d_cdn + cdn.d_be
    rtt0_ub = player.d_fb - server_latency
    snaps = tuple(sorted(snapshots, key=lambda s: s.t_offset))
    return JoinedChunk(
        session_id=player.session_id,
        chunk_id=player.chunk_id,
        d_fb=player.d_fb,
        d_lb=player.d_lb,
        bitrate=player.bitrate,
        buf_count=player.buf_count,
        buf_dur=player.buf_dur,
        vis=player.vis,
        avg_fr=player.avg_fr,
        drop_fr=player.drop_fr,
        d_wait=cdn.d_wait,
        d_open=cdn.d_open,
        d_read=cdn.d_read,
        d_be=cdn.d_be,
        cache_status=cdn.cache_status,
        chunk_size=cdn.chunk_size,
        tau=tau,
        snapshots=snaps,
        rtt0_ub=rtt0_ub,
        tp_inst=cdn.chunk_size * US_PER_S / player.d_lb,
        perf_score=tau / (player.d_fb + player.d_lb),
        server_latency=server_latency,
        inconsistent=rtt0_ub < 0,
    )


@dataclass(frozen=True, slots=True)
class DiagnosisLabel:
    session_id: str
    chunk_id: int
    label: Label
    secondary: tuple[Label, ...] = ()
    evidence: Mapping[str, float] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, int]:
        return (self.session_id, self.chunk_id)

    @property
    def all_labels(self) -> tuple[Label, ...]:
        return (self.label, *self.secondary)


@dataclass(frozen=True, slots=True)
class GroundTruth:
    """What the simulator actually did to one chunk.

    ``chunk_id == 0`` is used for session-level events such as proxied sessions.
    Parameter values ending in ``_ms`` are decimal milliseconds.
    """

    session_id: str
    chunk_id: int
    injected: tuple[str, ...] = ()
    params: Mapping[str, Any] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, int]:
        return (self.session_id, self.chunk_id)


# --------------------------------------------------------------------------- wire

_ENUMS = {"cache_status": CacheStatus, "label": Label}


def _field_specs(cls: type) -> list[tuple[str, bool]]:
    return [(f.name, f.metadata.get("unit") == "us") for f in fields(cls)]


_SPECS: dict[type, list[tuple[str, bool]]] = {}


def _specs(cls: type) -> list[tuple[str, bool]]:
    spec = _SPECS.get(cls)
    if spec is None:
        spec = _SPECS[cls] = _field_specs(cls)
    return spec


def to_wire(record: Any) -> dict[str, Any]:
    """Plain-JSON dict for a record, durations in milliseconds."""
    out: dict[str, Any] = {}
    for name, is_us in _specs(type(record)):
        value = getattr(record, name)
        if is_us:
            value = us_to_ms(value)
        elif isinstance(value, enum.Enum):
            value = value.value
        elif name == "snapshots":
            value = [to_wire(s) for s in value]
        elif name == "secondary":
            value = [v.value for v in value]
        elif name == "injected":
            value = list(value)
        elif name in ("params", "evidence"):
            value = dict(value)
        out[name] = value
    return out


def from_wire(cls: type, data: Mapping[str, Any]) -> Any:
    """Inverse of :func:`to_wire`.  Missing required fields raise ``KeyError``."""
    kwargs: dict[str, Any] = {}
    for f in fields(cls):
        name = f.name
        if name not in data:
            if f.default is MISSING and f.default_factory is MISSING:
                raise KeyError(name)
            continue
        value = data[name]
        if f.metadata.get("unit") == "us":
            if value is None or isinstance(value, bool):
                raise RecordError(f"{name}: expected a number")
            value = ms_to_us(value)
        elif name in _ENUMS:
            value = _decode_enum(name, value, data)
        elif name == "snapshots":
            value = tuple(from_wire(TcpSnapshot, s) for s in value)
        elif name == "secondary":
            value = tuple(Label(v) for v in value)
        elif name == "injected":
            value = tuple(value)
        elif name in ("params", "evidence"):
            value = dict(value)
        kwargs[name] = value
    return cls(**kwargs)


def _decode_enum(name: str, value: Any, data: Mapping[str, Any]) -> enum.Enum:
    if name == "cache_status" and value == "hit":
        # Two-valued logs: infer the level from the async-read timer signature.
        d_read = ms_to_us(data.get("d_read", 0))
        return CacheStatus.HIT_DISK if d_read >= 10 * US_PER_MS else CacheStatus.HIT_MEMORY
    return _ENUMS[name](value)



def dumps(record: Any) -> str:
    return json.dumps(to_wire(record), separators=(",", ":"))


def loads(cls: type, line: str) -> Any:
    return from_wire(cls, json.loads(line))
