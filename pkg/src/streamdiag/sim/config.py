"""Simulator configuration.

Configs are TOML documents.  Top-level keys mirror :class:`SimConfig`; path and
client profiles are arrays of tables (``[[paths]]``, ``[[clients]]``) and every
random quantity is an inline distribution table, e.g.::

    seed = 7
    n_sessions = 500
    backend_ms = { kind = "lognormal", shift = 60, median = 18, sigma = 0.6 }

    [[paths]]
    name = "cable"
    weight = 0.6
    prefixes = ["24.10.0.0/24", "24.10.1.0/24"]
    base_rtt_ms = 28

Distribution kinds: ``const`` (value), ``uniform`` (low, high), ``lognormal``
(median, sigma, shift) and ``exponential`` (mean, shift).
"""
from __future__ import annotations

import hashlib
import ipaddress
import json
import math
import random
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid simulator configuration; ``where`` names the offending field."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass(frozen=True)
class Dist:
    kind: str = "const"
    value: float = 0.0
    low: float = 0.0
    high: float = 0.0
    median: float = 1.0
    sigma: float = 0.0
    mean: float = 0.0
    shift: float = 0.0

    def sample(self, rng: random.Random) -> float:
        kind = self.kind
        if kind == "const":
            return self.value
        if kind == "uniform":
            return self.low + (self.high - self.low) * rng.random()
        if kind == "lognormal":
            return self.shift + self.median * math.exp(self.sigma * rng.gauss(0.0, 1.0))
        if kind == "exponential":
            return self.shift + rng.expovariate(1.0 / self.mean) if self.mean > 0 else self.shift
        raise ConfigError("dist", f"unknown kind {kind!r}")

    @property
    def median_value(self) -> float:
        if self.kind == "const":
            return self.value
        if self.kind == "uniform":
            return (self.low + self.high) / 2
        if self.kind == "lognormal":
            return self.shift + self.median
        return self.shift + self.mean * math.log(2)

    def validate(self, where: str) -> None:
        if self.kind not in ("const", "uniform", "lognormal", "exponential"):
            raise ConfigError(where, f"unknown distribution kind {self.kind!r}")
        if self.kind == "uniform" and self.high < self.low:
            raise ConfigError(where, "high < low")
        if self.kind == "lognormal" and (self.median < 0 or self.sigma < 0):
            raise ConfigError(where, "lognormal needs median >= 0 and sigma >= 0")
        if self.kind == "exponential" and self.mean < 0:
            raise ConfigError(where, "exponential mean must be >= 0")
        lo = {"const": self.value, "uniform": self.low}.get(self.kind, self.shift)
        if lo < 0:
            raise ConfigError(where, "distribution may produce negative values")


def const(value: float) -> Dist:
    return Dist("const", value=value)


def uniform(low: float, high: float) -> Dist:
    return Dist("uniform", low=low, high=high)


def lognormal(median: float, sigma: float, shift: float = 0.0) -> Dist:
    return Dist("lognormal", median=median, sigma=sigma, shift=shift)


def exponential(mean: float, shift: float = 0.0) -> Dist:
    return Dist("exponential", mean=mean, shift=shift)


@dataclass(frozen=True)
class RenderProfile:
    """Dropped-frame curve: ``peak_drop`` at or below 1.0 s/s download rate,
    ``baseline_drop`` at or above 1.5 s/s, linear in between.

    Buffered media hides a slow download: the excess over the baseline shrinks
    linearly to zero as the playback buffer approaches ``mask_buffer_s``.  A
    session is CPU-overloaded with probability ``overload_prob``, which adds
    ``overload_drop`` to every visible chunk regardless of download rate.
    """

    baseline_drop: float = 0.02
    peak_drop: float = 0.6
    noise: float = 0.05
    cpu_bound: bool = False
    vis_prob: float = 0.95
    hidden_drop: float = 0.8
    mask_buffer_s: float = 60.0
    overload_prob: float = 0.0
    overload_drop: float = 0.35


@dataclass(frozen=True)
class PathProfile:
    name: str
    weight: float = 1.0
    prefixes: tuple[str, ...] = ("10.0.0.0/24",)
    org_label: str = "ISP"
    base_rtt_ms: float = 40.0
    # Per-round queueing noise, uniform in [0, rtt_jitter_ms).
    rtt_jitter_ms: float = 4.0
    # Per-chunk congestion episode: probability and maximum extra delay.
    spike_prob: float = 0.0
    spike_ms: float = 0.0
    # Some sessions fill a deep queue with their own data (bufferbloat): in
    # those, a chunk's data rounds (not the request round) see up to
    # ``bloat_ms`` of extra delay with probability ``bloat_chunk_prob``.
    bloat_prob: float = 0.0
    bloat_chunk_prob: float = 0.15
    bloat_ms: float = 0.0
    loss_rate: float = 0.0  # per-segment, median over lossy sessions
    lossless_prob: float = 0.0  # fraction of sessions without background loss
    loss_sigma: float = 0.0  # lognormal spread of the per-session loss rate
    first_chunk_loss_multiplier: float = 1.0
    bandwidth: float = 0.0  # bytes/s, 0 = unlimited
    dip_prob: float = 0.0  # chance a chunk sees reduced available bandwidth
    dip_min: float = 0.5  # the reduced bandwidth is U(dip_min, 1) of nominal
    distance_km: float = 100.0


@dataclass(frozen=True)
class ClientProfile:
    label: str  # "<os>/<browser>"
    weight: float = 1.0
    ds_fault_rate: float = 0.0032  # share of chunks held back by the download stack
    ds_delay_ms: Dist = field(default_factory=lambda: lognormal(900.0, 0.4))
    persistent_ds_ms: Dist = field(default_factory=lambda: const(0.0))
    render: RenderProfile = field(default_factory=RenderProfile)


BLOAT_RESIDENTIAL = 0.02
BLOAT_RTTS = 25.0


def default_paths() -> tuple[PathProfile, ...]:
    def path(name, weight, org, prefix, n_prefixes, rtt, jitter, spike_prob, spike,
             loss, bandwidth, dip_prob, dip_min, km):
        return PathProfile(
            name, weight=weight, org_label=org,
            prefixes=tuple(f"{prefix}.{i}.0/24" for i in range(n_prefixes)),
            base_rtt_ms=rtt, rtt_jitter_ms=jitter, spike_prob=spike_prob, spike_ms=spike,
            loss_rate=loss, lossless_prob=0.4, loss_sigma=0.8,
            first_chunk_loss_multiplier=20.0,
            bandwidth=bandwidth, dip_prob=dip_prob, dip_min=dip_min, distance_km=km,
        )

    def residential(p: PathProfile) -> PathProfile:
        return replace(p, bloat_prob=BLOAT_RESIDENTIAL, bloat_ms=BLOAT_RTTS * p.base_rtt_ms)

    return tuple(residential(p) if p.org_label.startswith("Residential") else p for p in (
        path("cable", 0.36, "ResidentialISP#1", "24.10", 6, 58.0, 3.0, 0.10, 35.0,
             2e-4, 2_500_000, 0.05, 0.5, 350.0),
        path("fiber", 0.20, "ResidentialISP#2", "73.20", 4, 18.0, 2.0, 0.08, 20.0,
             1e-4, 6_000_000, 0.05, 0.5, 60.0),
        path("dsl", 0.14, "ResidentialISP#3", "68.30", 4, 42.0, 4.0, 0.10, 40.0,
             5e-4, 320_000, 0.08, 0.5, 500.0),
        path("enterprise", 0.13, "Enterprise#1", "12.40", 3, 12.0, 3.0, 0.15, 125.0,
             3e-4, 1_500_000, 0.05, 0.5, 3.0),
        path("overseas", 0.09, "ForeignISP#1", "81.50", 2, 150.0, 6.0, 0.08, 40.0,
             6e-4, 900_000, 0.08, 0.5, 7000.0),
        path("congested", 0.08, "ResidentialISP#4", "99.60", 3, 95.0, 8.0, 0.10, 40.0,
             5e-3, 47_000, 0.15, 0.5, 900.0),
    ))


def default_clients() -> tuple[ClientProfile, ...]:
    good = RenderProfile(baseline_drop=0.03, peak_drop=0.65, noise=0.06, overload_prob=0.08)
    return (
        ClientProfile("Windows/Chrome", weight=0.38, render=good),
        ClientProfile("Windows/Firefox", weight=0.30,
                      render=replace(good, baseline_drop=0.06)),
        ClientProfile("Windows/IE", weight=0.13,
                      render=replace(good, baseline_drop=0.05)),
        ClientProfile("Macintosh/Safari", weight=0.08,
                      render=replace(good, baseline_drop=0.02)),
        ClientProfile("Macintosh/Firefox", weight=0.04,
                      render=replace(good, baseline_drop=0.06)),
        ClientProfile("Windows/Safari", weight=0.03,
                      persistent_ds_ms=lognormal(900.0, 0.3),
                      render=RenderProfile(baseline_drop=0.22, peak_drop=0.75, noise=0.08,
                                           cpu_bound=True)),
        ClientProfile("Windows/Other", weight=0.04,
                      persistent_ds_ms=lognormal(250.0, 0.3),
                      render=RenderProfile(baseline_drop=0.25, peak_drop=0.8, noise=0.08,
                                           cpu_bound=True)),
    )


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    n_sessions: int = 1000
    n_videos: int = 1000
    zipf_exponent: float = 0.9591
    chunks_min: int = 8
    chunks_max: int = 30
    chunk_duration_s: float = 6.0
    bitrate_ladder_kbps: tuple[int, ...] = (300, 700, 1500, 3000, 5000)
    n_servers: int = 4
    n_pops: int = 2
    n_days: int = 7
    memory_cache_entries: int = 2100
    disk_cache_entries: int = 18500
    warm_cache: bool = True  # start caches in their popularity steady state
    async_read_timer_ms: float = 10.0
    wait_ms: Dist = field(default_factory=lambda: exponential(0.12))
    open_ms: Dist = field(default_factory=lambda: exponential(0.15))
    memory_read_ms: Dist = field(default_factory=lambda: lognormal(1.4, 0.35))
    disk_read_extra_ms: Dist = field(default_factory=lambda: uniform(0.0, 2.0))
    backend_ms: Dist = field(default_factory=lambda: lognormal(18.0, 0.6, shift=60.0))
    first_chunk_ds_enabled: bool = True
    first_chunk_ds_ms: Dist = field(default_factory=lambda: lognormal(300.0, 0.45))
    ds_compress_fraction: float = 0.03
    startup_buffer_s: float = 1.0
    max_buffer_s: float = 60.0
    iw_segments: int = 10
    mss: int = 1460
    max_cwnd: int = 4000
    frame_rate: int = 30
    abr_safety: float = 0.8
    abr_window: int = 3
    proxy_rate: float = 0.0
    ds_fault_rate_scale: float = 1.0
    # (session index, chunk id, delay ms): download-stack holds placed exactly
    forced_ds: tuple[tuple[int, int, float], ...] = ()
    paths: tuple[PathProfile, ...] = field(default_factory=default_paths)
    clients: tuple[ClientProfile, ...] = field(default_factory=default_clients)

    def __post_init__(self) -> None:
        validate(self)

    @property
    def tau_us(self) -> int:
        return int(round(self.chunk_duration_s * 1_000_000))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **kw: Any) -> "SimConfig":
        return replace(self, **kw)

    def fault_free(self) -> "SimConfig":
        """Same workload with every download-stack fault switched off."""
        clients = tuple(
            replace(c, ds_fault_rate=0.0, persistent_ds_ms=const(0.0)) for c in self.clients
        )
        return replace(self, clients=clients, first_chunk_ds_enabled=False)


def _check_rate(where: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(where, f"rate {value} outside [0, 1]")


def validate(cfg: SimConfig) -> None:
    if cfg.n_sessions < 0:
        raise ConfigError("n_sessions", "must be >= 0")
    if cfg.n_videos < 10:
        raise ConfigError("n_videos", "must be >= 10")
    if cfg.zipf_exponent < 0:
        raise ConfigError("zipf_exponent", "must be >= 0")
    if not 1 <= cfg.chunks_min <= cfg.chunks_max:
        raise ConfigError("chunks_min", "need 1 <= chunks_min <= chunks_max")
    if cfg.chunk_duration_s <= 0:
        raise ConfigError("chunk_duration_s", "must be > 0")
    ladder = list(cfg.bitrate_ladder_kbps)
    if not ladder or ladder != sorted(ladder) or ladder[0] <= 0:
        raise ConfigError("bitrate_ladder_kbps", "must be non-empty, positive and ascending")
    for name in ("n_servers", "n_pops", "n_days", "iw_segments", "mss", "frame_rate",
                 "abr_window", "memory_cache_entries", "disk_cache_entries"):
        if getattr(cfg, name) < 1:
            raise ConfigError(name, "must be >= 1")
    if cfg.max_cwnd < cfg.iw_segments:
        raise ConfigError("max_cwnd", "must be >= iw_segments")
    if cfg.async_read_timer_ms < 0:
        raise ConfigError("async_read_timer_ms", "must be >= 0")
    if not 0 < cfg.abr_safety <= 1:
        raise ConfigError("abr_safety", "must be in (0, 1]")
    if cfg.startup_buffer_s <= 0 or cfg.max_buffer_s < cfg.chunk_duration_s:
        raise ConfigError("startup_buffer_s", "need startup > 0 and max_buffer >= chunk duration")
    if cfg.startup_buffer_s > cfg.max_buffer_s:
        raise ConfigError("startup_buffer_s", "exceeds max_buffer_s")
    _check_rate("proxy_rate", cfg.proxy_rate)
    _check_rate("ds_compress_fraction", cfg.ds_compress_fraction)
    if cfg.ds_fault_rate_scale < 0:
        raise ConfigError("ds_fault_rate_scale", "must be >= 0")
    for i, entry in enumerate(cfg.forced_ds):
        if len(entry) != 3 or entry[0] < 0 or entry[1] < 1 or entry[2] <= 0:
            raise ConfigError(f"forced_ds[{i}]", "need [session index >= 0, chunk id >= 1, delay ms > 0]")
    for name in ("wait_ms", "open_ms", "memory_read_ms", "disk_read_extra_ms",
                 "backend_ms", "first_chunk_ds_ms"):
        getattr(cfg, name).validate(name)
    if not cfg.paths:
        raise ConfigError("paths", "at least one path profile required")
    if not cfg.clients:
        raise ConfigError("clients", "at least one client profile required")
    for i, p in enumerate(cfg.paths):
        where = f"paths[{i}]"
        if p.weight < 0 or p.base_rtt_ms <= 0 or p.rtt_jitter_ms < 0 or p.spike_ms < 0:
            raise ConfigError(where, "weights, RTTs and jitter must be non-negative (base > 0)")
        # Keeps every first-byte RTT inside the sender's RTO.
        if p.rtt_jitter_ms + p.spike_ms >= 200.0:
            raise ConfigError(where, "rtt_jitter_ms + spike_ms must stay below 200")
        _check_rate(f"{where}.spike_prob", p.spike_prob)
        _check_rate(f"{where}.loss_rate", p.loss_rate)
        _check_rate(f"{where}.loss_rate*multiplier",
                    min(1.0, p.loss_rate * p.first_chunk_loss_multiplier))
        if p.first_chunk_loss_multiplier < 1:
            raise ConfigError(f"{where}.first_chunk_loss_multiplier", "must be >= 1")
        _check_rate(f"{where}.dip_prob", p.dip_prob)
        _check_rate(f"{where}.lossless_prob", p.lossless_prob)
        _check_rate(f"{where}.bloat_prob", p.bloat_prob)
        _check_rate(f"{where}.bloat_chunk_prob", p.bloat_chunk_prob)
        if p.bloat_ms < 0:
            raise ConfigError(f"{where}.bloat_ms", "must be non-negative")
        if p.loss_sigma < 0:
            raise ConfigError(f"{where}.loss_sigma", "must be non-negative")
        if not 0.0 < p.dip_min <= 1.0:
            raise ConfigError(f"{where}.dip_min", "must be in (0, 1]")
        if p.bandwidth < 0 or p.distance_km < 0:
            raise ConfigError(where, "bandwidth and distance must be non-negative")
        if not p.prefixes:
            raise ConfigError(f"{where}.prefixes", "at least one prefix required")
        for pref in p.prefixes:
            try:
                net = ipaddress.IPv4Network(pref)
            except ValueError as exc:
                raise ConfigError(f"{where}.prefixes", str(exc)) from None
            if net.prefixlen != 24:
                raise ConfigError(f"{where}.prefixes", f"{pref} is not a /24")
    if sum(p.weight for p in cfg.paths) <= 0:
        raise ConfigError("paths", "weights sum to zero")
    for i, c in enumerate(cfg.clients):
        where = f"clients[{i}]"
        if "/" not in c.label:
            raise ConfigError(f"{where}.label", "expected '<os>/<browser>'")
        if c.weight < 0:
            raise ConfigError(f"{where}.weight", "must be >= 0")
        _check_rate(f"{where}.ds_fault_rate", min(1.0, c.ds_fault_rate * cfg.ds_fault_rate_scale))
        _check_rate(f"{where}.ds_fault_rate", c.ds_fault_rate)
        c.ds_delay_ms.validate(f"{where}.ds_delay_ms")
        c.persistent_ds_ms.validate(f"{where}.persistent_ds_ms")
        r = c.render
        for name in ("baseline_drop", "peak_drop", "vis_prob", "hidden_drop",
                     "overload_prob", "overload_drop"):
            _check_rate(f"{where}.render.{name}", getattr(r, name))
        if r.noise < 0:
            raise ConfigError(f"{where}.render.noise", "must be >= 0")
        if r.mask_buffer_s <= 0:
            raise ConfigError(f"{where}.render.mask_buffer_s", "must be positive")
    if sum(c.weight for c in cfg.clients) <= 0:
        raise ConfigError("clients", "weights sum to zero")


# ------------------------------------------------------------------ loading

def _build(cls: type, data: Mapping[str, Any], where: str) -> Any:
    known = {f.name: f for f in fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{where}.{key}" if where else key, "unknown field")
        kwargs[key] = _coerce(known[key].type, value, f"{where}.{key}" if where else key)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(where or "config", str(exc)) from None


def _coerce(type_name: Any, value: Any, where: str) -> Any:
    t = str(type_name)
    if t == "Dist":
        if not isinstance(value, Mapping):
            raise ConfigError(where, "expected a distribution table")
        return _build(Dist, value, where)
    if t == "RenderProfile":
        return _build(RenderProfile, value, where)
    if t.startswith("tuple[PathProfile"):
        return tuple(_build(PathProfile, v, f"{where}[{i}]") for i, v in enumerate(value))
    if t.startswith("tuple[ClientProfile"):
        return tuple(_build(ClientProfile, v, f"{where}[{i}]") for i, v in enumerate(value))
    if t.startswith("tuple[tuple"):
        if not isinstance(value, list) or not all(isinstance(v, list) for v in value):
            raise ConfigError(where, "expected an array of arrays")
        return tuple(tuple(v) for v in value)
    if t.startswith("tuple"):
        if not isinstance(value, list):
            raise ConfigError(where, "expected an array")
        return tuple(value)
    if t == "bool":
        if not isinstance(value, bool):
            raise ConfigError(where, "expected true/false")
        return value
    if t == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(where, "expected an integer")
        return value
    if t == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, "expected a number")
        return float(value)
    if t == "str":
        if not isinstance(value, str):
            raise ConfigError(where, "expected a string")
        return value
    return value


def config_from_dict(data: Mapping[str, Any]) -> SimConfig:
    return _build(SimConfig, data, "")


def load_config(path: str | Path) -> SimConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), str(exc)) from None
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror or str(exc)) from None
    return config_from_dict(data)
