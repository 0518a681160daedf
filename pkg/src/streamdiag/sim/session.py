"""End-to-end session simulation and log emission."""
from __future__ import annotations

import hashlib
import ipaddress
import os
import random
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from ..telemetry import (
    US_PER_MS,
    US_PER_S,
    CacheStatus,
    CdnChunkRecord,
    GroundTruth,
    JoinedChunk,
    Label,
    PlayerChunkRecord,
    SessionMeta,
    TcpSnapshot,
    derive,
    dumps,
    us_to_ms,
)
from .abr import abr_select
from .cache import CacheKey, CacheState, cdn_serve
from .catalog import Catalog, build_catalog
from .config import SimConfig
from .network import PathState, network_transfer
from .playout import Player, render_chunk

FIRST_CHUNK_DS = "first_chunk_download_stack"
PROXY = "proxy"
STEADY_SHARE = 0.75
DEMAND_FLOOR = 5.0

OUTPUT_FILES = ("player.jsonl", "cdn.jsonl", "tcp.jsonl", "truth.jsonl", "sessions.jsonl")


def rng_for(seed: int, stream: str, index: int) -> random.Random:
    """Independent generator for one (seed, stream, index) triple."""
    digest = hashlib.blake2b(f"{seed}:{stream}:{index}".encode(), digest_size=16).digest()
    return random.Random(int.from_bytes(digest, "big"))


def _pick(weights: Sequence[float], rng: random.Random) -> int:
    u = rng.random() * sum(weights)
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if u < acc:
            return i
    return len(weights) - 1


class SessionPlan(NamedTuple):
    index: int
    video_rank: int
    path_index: int
    client_index: int
    server: int
    meta: SessionMeta
    proxied: bool


def plan_session(cfg: SimConfig, catalog: Catalog, index: int) -> SessionPlan:
    rng = rng_for(cfg.seed, "plan", index)
    rank = catalog.sample_rank(rng)
    pi = _pick([p.weight for p in cfg.paths], rng)
    ci = _pick([c.weight for c in cfg.clients], rng)
    path = cfg.paths[pi]
    client = cfg.clients[ci]
    net = ipaddress.IPv4Network(path.prefixes[rng.randrange(len(path.prefixes))])
    host = str(net.network_address + rng.randint(1, 254))
    day = rng.randrange(cfg.n_days)
    # Cache-focused mapping: a video is always served by the same server.
    server = (rank - 1) % cfg.n_servers
    proxied = rng.random() < cfg.proxy_rate
    beacon_ip, beacon_ua = host, client.label
    if proxied:
        if rng.random() < 0.5:
            beacon_ip = str(net.network_address + ((int(host.rsplit(".", 1)[1]) % 254) + 1))
        else:
            beacon_ua = client.label + "+proxy"
    n_chunks = catalog.length(rank)
    meta = SessionMeta(
        session_id=f"s{index:07d}",
        client_ip=host,
        user_agent=client.label,
        video_length=n_chunks * cfg.chunk_duration_s,
        chunk_duration=cfg.chunk_duration_s,
        pop_id=f"pop{server % cfg.n_pops}",
        server_id=f"srv{server}",
        org_label=path.org_label,
        distance_km=path.distance_km,
        beacon_ip=beacon_ip,
        beacon_user_agent=beacon_ua,
        day=day,
        video_id=catalog.video_id(rank),
        video_rank=rank,
    )
    return SessionPlan(index, rank, pi, ci, server, meta, proxied)


@dataclass
class SessionResult:
    meta: SessionMeta
    player: list[PlayerChunkRecord] = field(default_factory=list)
    cdn: list[CdnChunkRecord] = field(default_factory=list)
    tcp: list[TcpSnapshot] = field(default_factory=list)
    truth: list[GroundTruth] = field(default_factory=list)

    def joined(self) -> list[JoinedChunk]:
        by_chunk: dict[int, list[TcpSnapshot]] = {}
        for s in self.tcp:
            by_chunk.setdefault(s.chunk_id, []).append(s)
        tau = self.meta.chunk_duration
        return [derive(p, c, by_chunk.get(p.chunk_id, ()), tau) for p, c in zip(self.player, self.cdn)]

    def chunk_truth(self) -> list[GroundTruth]:
        return [t for t in self.truth if t.chunk_id > 0]


def _ms(us: int) -> float:
    return us_to_ms(us)


def simulate_session(
    cfg: SimConfig,
    plan: SessionPlan,
    cache: CacheState,
    rng: random.Random | None = None,
) -> SessionResult:
    if rng is None:
        rng = rng_for(cfg.seed, "session", plan.index)
    path_profile = cfg.paths[plan.path_index]
    client = cfg.clients[plan.client_index]
    meta = plan.meta
    sid = meta.session_id
    tau_s = cfg.chunk_duration_s
    tau = cfg.tau_us
    ladder = cfg.bitrate_ladder_kbps
    fault_rate = min(1.0, client.ds_fault_rate * cfg.ds_fault_rate_scale)
    persistent = client.persistent_ds_ms
    has_persistent = not (persistent.kind == "const" and persistent.value == 0.0)
    forced = {k: int(round(ms * US_PER_MS)) for i, k, ms in cfg.forced_ds if i == plan.index}

    path = PathState.open(path_profile, rng, cfg.iw_segments, cfg.mss, cfg.max_cwnd)
    overloaded = client.render.overload_prob > 0.0 and rng.random() < client.render.overload_prob
    player = Player.create(tau_s, cfg.startup_buffer_s, cfg.max_buffer_s)
    out = SessionResult(meta)
    history: list[float] = []
    previous: int | None = None
    stalled = False
    n_chunks = int(round(meta.video_length / tau_s))
    for k in range(1, n_chunks + 1):
        level_s = 0.0 if stalled else player.buffered / US_PER_S
        bitrate = abr_select(history, level_s, ladder, previous=previous,
                             playing=player.started, safety=cfg.abr_safety,
                             window=cfg.abr_window)
        size = int(bitrate * 125 * tau_s * (0.9 + 0.2 * rng.random()))
        serve = cdn_serve(CacheKey(plan.video_rank, k, bitrate), cache, rng, cfg)
        xfer = network_transfer(size, path, rng, first_chunk=(k == 1))

        injected: list[str] = []
        params: dict[str, object] = {}
        ds = 0
        if has_persistent:
            p_ds = int(round(persistent.sample(rng) * US_PER_MS))
            if p_ds > 0:
                ds += p_ds
                injected.append(Label.PERSISTENT_DOWNLOAD_STACK.value)
                params["persistent_ds_ms"] = _ms(p_ds)
        if k == 1 and cfg.first_chunk_ds_enabled:
            f_ds = int(round(cfg.first_chunk_ds_ms.sample(rng) * US_PER_MS))
            if f_ds > 0:
                ds += f_ds
                injected.append(FIRST_CHUNK_DS)
                params["first_chunk_ds_ms"] = _ms(f_ds)
        d_lb = xfer.duration
        curve = [(t, tau * n // xfer.segments) for t, n in xfer.arrivals]
        hold = forced.get(k, 0)
        if fault_rate > 0.0 and rng.random() < fault_rate:
            hold += max(1, int(round(client.ds_delay_ms.sample(rng) * US_PER_MS)))
        if hold:
            ds += hold
            d_lb = max(US_PER_MS, int(xfer.duration * cfg.ds_compress_fraction))
            curve = None
            injected.append(Label.DOWNLOAD_STACK_BUFFERED.value)
            params["injected_ds_delay_ms"] = _ms(hold)
        if xfer.retx_added:
            injected.append(Label.NETWORK_LOSS.value)
            params["injected_loss_segments"] = xfer.retx_added
            params["loss_rounds"] = list(xfer.loss_rounds)
            params["timeouts"] = xfer.timeouts
        if serve.cache_status is CacheStatus.MISS:
            injected.append(Label.CACHE_MISS_LATENCY.value)
        elif serve.cache_status is CacheStatus.HIT_DISK:
            injected.append(Label.DISK_TIMER_LATENCY.value)

        d_fb = serve.server_latency + xfer.first_byte_rtt + ds
        pb = player.fetch(d_fb, d_lb, curve)
        rate = tau / (d_fb + d_lb)
        frames = render_chunk(rate, client.render, rng, cfg.frame_rate, tau_s,
                              pb.buffer_at_request / US_PER_S, overloaded)

        out.player.append(PlayerChunkRecord(
            sid, k, d_fb, d_lb, bitrate, pb.buf_count, pb.buf_dur,
            frames.vis, frames.avg_fr, frames.drop_fr,
        ))
        out.cdn.append(CdnChunkRecord(
            sid, k, serve.d_wait, serve.d_open, serve.d_read, serve.d_be,
            serve.cache_status, size,
        ))
        for s in xfer.samples:
            out.tcp.append(TcpSnapshot(sid, k, s.t_offset, s.cwnd, s.srtt, s.srttvar, s.retx, cfg.mss))
        params.update(
            first_byte_rtt_ms=_ms(xfer.first_byte_rtt),
            injected_ds_ms=_ms(ds),
            transfer_ms=_ms(xfer.duration),
            t_request_ms=_ms(pb.t_request),
            idle_before_ms=_ms(pb.idle_before),
            buffer_at_request_ms=_ms(pb.buffer_at_request),
            buffer_at_completion_ms=_ms(pb.buffer_at_completion),
            playing_at_request=pb.playing_at_request,
            rounds=xfer.rounds,
        )
        out.truth.append(GroundTruth(sid, k, tuple(injected), params))

        history.append(size * 8 / 1000 / ((d_fb + d_lb) / US_PER_S))
        previous = bitrate
        stalled = pb.buf_count > 0

    session_params: dict[str, object] = {
        "path": path_profile.name,
        "client": client.label,
        "video_rank": plan.video_rank,
        "startup_delay_ms": _ms(player.start_time) if player.start_time is not None else None,
        "cpu_overloaded": overloaded,
    }
    out.truth.insert(0, GroundTruth(sid, 0, (PROXY,) if plan.proxied else (), session_params))
    return out


def steady_bitrate(cfg: SimConfig, path_index: int) -> int:
    """Highest rung the rate rule settles on over a path's nominal bandwidth."""
    bw = cfg.paths[path_index].bandwidth
    ladder = cfg.bitrate_ladder_kbps
    if bw <= 0:
        return ladder[-1]
    budget = cfg.abr_safety * bw * 8 / 1000
    return max([r for r in ladder if r <= budget], default=ladder[0])


def rung_demand(cfg: SimConfig) -> dict[int, float]:
    """Rough share of requests after the first chunk that go to each rung.

    Most requests sit on the path's steady rung; the rest spread evenly over
    the rungs below it while the rate adapts.
    """
    ladder = cfg.bitrate_ladder_kbps
    demand = dict.fromkeys(ladder, 0.0)
    total = sum(p.weight for p in cfg.paths)
    for i, p in enumerate(cfg.paths):
        steady = steady_bitrate(cfg, i)
        below = [r for r in ladder if r <= steady]
        demand[steady] += STEADY_SHARE * p.weight / total
        for r in below:
            demand[r] += (1 - STEADY_SHARE) * p.weight / total / len(below)
    floor = DEMAND_FLOOR * max(demand.values())
    norm = 1.0 + floor * len(demand)
    return {r: (q + floor) / norm for r, q in demand.items()}


def warm_cache(cfg: SimConfig, catalog: Catalog, cache: CacheState, server: int) -> int:
    """Fill ``server``'s cache as it would look after long uptime.

    Keys are ranked by expected request rate (video popularity times rung
    demand; every first chunk goes out at the lowest rung) and inserted from
    the coldest to the hottest, so each LRU level holds the top of that order
    with the hottest key most recently used.  Returns the number of keys inserted.
    """
    demand = rung_demand(cfg)
    low = cfg.bitrate_ladder_kbps[0]
    scored = []
    for rank in range(server + 1, catalog.n_videos + 1, cfg.n_servers):
        w = catalog.weights[rank - 1]
        scored.append((w, CacheKey(rank, 1, low)))
        for k in range(2, catalog.length(rank) + 1):
            scored.extend((w * q, CacheKey(rank, k, r)) for r, q in demand.items())
    scored.sort(key=lambda x: (-x[0], x[1]))
    keys = [key for _, key in scored[:max(cache.memory.capacity, cache.disk.capacity)]]
    for key in reversed(keys):
        cache.disk.put(key)
        cache.memory.put(key)
    return len(keys)


def _run_server(args: tuple[SimConfig, Catalog, list[SessionPlan]]) -> list[SessionResult]:
    cfg, catalog, plans = args
    cache = CacheState.from_config(cfg)
    if plans and cfg.warm_cache:
        warm_cache(cfg, catalog, cache, plans[0].server)
    return [simulate_session(cfg, plan, cache) for plan in plans]


def simulate(cfg: SimConfig, jobs: int = 1) -> list[SessionResult]:
    """Simulate every session; output order is by session index regardless of ``jobs``.

    Each CDN server owns its cache, so servers are the unit of parallelism.
    """
    catalog = build_catalog(cfg.n_videos, cfg.zipf_exponent, cfg.seed, cfg.chunks_min, cfg.chunks_max)
    plans = [plan_session(cfg, catalog, i) for i in range(cfg.n_sessions)]
    shards: dict[int, list[SessionPlan]] = {}
    for p in plans:
        shards.setdefault(p.server, []).append(p)
    work = [(cfg, catalog, shards[s]) for s in sorted(shards)]
    jobs = max(1, min(jobs, len(work) or 1))
    if jobs == 1:
        parts = [_run_server(w) for w in work]
    else:
        with get_context("fork" if os.name == "posix" else "spawn").Pool(jobs) as pool:
            parts = pool.map(_run_server, work)
    results = [r for part in parts for r in part]
    results.sort(key=lambda r: r.meta.session_id)
    return results


def write_outputs(results: Iterable[SessionResult], out_dir: str | Path) -> dict[str, int]:
    """Write the five JSON-Lines files; returns line counts per file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    handles = {name: open(out / name, "w", encoding="utf-8") for name in OUTPUT_FILES}
    counts = dict.fromkeys(OUTPUT_FILES, 0)
    try:
        for r in results:
            streams = (
                ("player.jsonl", r.player),
                ("cdn.jsonl", r.cdn),
                ("tcp.jsonl", r.tcp),
                ("truth.jsonl", r.truth),
                ("sessions.jsonl", [r.meta]),
            )
            for name, records in streams:
                fh = handles[name]
                for rec in records:
                    fh.write(dumps(rec))
                    fh.write("\n")
                counts[name] += len(records)
    finally:
        for fh in handles.values():
            fh.close()
    return counts
