import random

from hypothesis import given, settings
from hypothesis import strategies as st

from streamdiag.ingest import (
    JoinReport,
    apply_proxy_filter,
    filter_proxies,
    group_sessions,
    join_records,
    parse_dir,
    read_jsonl,
)
from streamdiag.sim import SimConfig, simulate, write_outputs
from streamdiag.telemetry import (
    CacheStatus,
    CdnChunkRecord,
    PlayerChunkRecord,
    SessionMeta,
    TcpSnapshot,
)


def player(sid, k, d_fb=100_000):
    return PlayerChunkRecord(sid, k, d_fb, 1_000_000, 700)


def cdn(sid, k):
    return CdnChunkRecord(sid, k, 100, 100, 1_000, 0, CacheStatus.HIT_MEMORY, 500_000)


def meta(sid, ip="10.0.0.1", ua="Windows/Chrome", minutes=10.0, day=0, **kw):
    return SessionMeta(sid, ip, ua, minutes * 60.0, day=day, **kw)


def check_identity(rep: JoinReport):
    assert rep.total_player == rep.joined + rep.rejected + rep.orphan_player + rep.duplicate_player
    assert rep.total_cdn == rep.joined + rep.rejected + rep.orphan_cdn + rep.duplicate_cdn


def test_simple_join_and_orphans():
    ps = [player("a", 1), player("a", 2), player("b", 1)]
    cs = [cdn("a", 1), cdn("a", 2), cdn("c", 1)]
    tcp = [TcpSnapshot("a", 1, 0, 10, 50_000, 5_000), TcpSnapshot("z", 9, 0, 10, 50_000, 5_000)]
    out, rep = join_records(ps, cs, tcp)
    assert [c.key for c in out] == [("a", 1), ("a", 2)]
    assert rep.orphan_player == 1 and rep.orphan_cdn == 1
    assert rep.tcp_attached == 1 and rep.tcp_dropped == 1
    check_identity(rep)


def test_duplicates_are_quarantined():
    ps = [player("a", 1), player("a", 1, d_fb=5), player("a", 2)]
    cs = [cdn("a", 1), cdn("a", 2)]
    out, rep = join_records(ps, cs)
    assert [c.key for c in out] == [("a", 2)]
    assert rep.duplicate_player == 2 and rep.duplicate_keys == 1
    assert rep.orphan_cdn == 1
    check_identity(rep)


def test_rejected_pairs_counted():
    from streamdiag.telemetry import PlayerChunkRecord as P
    ps = [P("a", 1, 100, 0, 700)]  # d_lb = 0 cannot be derived
    out, rep = join_records(ps, [cdn("a", 1)])
    assert out == [] and rep.rejected == 1
    check_identity(rep)


keys = st.lists(st.tuples(st.sampled_from("abcd"), st.integers(1, 6)), max_size=30)


@given(keys, keys, st.integers(0, 1000))
@settings(max_examples=60)
def test_join_is_order_independent(pkeys, ckeys, seed):
    ps = [player(s, k, d_fb=1000 * i) for i, (s, k) in enumerate(pkeys)]
    cs = [cdn(s, k) for s, k in ckeys]
    a, ra = join_records(ps, cs)
    rng = random.Random(seed)
    rng.shuffle(ps)
    rng.shuffle(cs)
    b, rb = join_records(ps, cs)
    assert a == b and ra == rb
    check_identity(ra)


def test_report_merge_is_commutative():
    _, r1 = join_records([player("a", 1)], [cdn("a", 1)])
    _, r2 = join_records([player("b", 1)], [])
    assert r1.merge(r2) == r2.merge(r1)
    assert r1.merge(r2).joined == 1


def test_malformed_lines_skipped(tmp_path):
    f = tmp_path / "player.jsonl"
    f.write_text('{"session_id": "a", "chunk_id": 1, "d_fb": 1.0, "d_lb": 2.0}\n'
                 'not json\n\n'
                 '{"session_id": "a", "chunk_id": 0, "d_fb": 1.0, "d_lb": 2.0}\n')
    from streamdiag.ingest import ParseStats
    stats = ParseStats()
    recs = read_jsonl(f, PlayerChunkRecord, stats)
    assert len(recs) == 1
    assert stats.malformed == 2 and stats.blank == 1


def test_simulated_logs_join_completely(tmp_path):
    write_outputs(simulate(SimConfig(n_sessions=20, seed=3)), tmp_path)
    logs = parse_dir(tmp_path)
    out, rep = join_records(logs.player, logs.cdn, logs.tcp, logs.meta)
    assert rep.joined == len(logs.player) == len(logs.cdn)
    assert rep.tcp_dropped == 0 and rep.inconsistent == 0
    assert len(group_sessions(out)) == 20


# --------------------------------------------------------------------------- proxies


def test_proxy_reasons_in_order():
    sessions = [
        meta("ok", beacon_ip="10.0.0.1", beacon_user_agent="Windows/Chrome"),
        meta("ip", beacon_ip="10.0.0.9", beacon_user_agent="Other"),
        meta("ua", beacon_user_agent="Other"),
        meta("nobeacon"),
    ]
    res = filter_proxies(sessions)
    assert res.dropped == {"ip": "ip_mismatch", "ua": "ua_mismatch"}
    assert [m.session_id for m in res.kept] == ["ok", "nobeacon"]


def test_volume_is_per_ip_and_day():
    heavy = [meta(f"h{i}", ip="10.0.0.7", minutes=100.0, day=1) for i in range(15)]
    other_day = [meta("d2", ip="10.0.0.7", minutes=100.0, day=2)]
    res = filter_proxies(heavy + other_day)
    assert set(res.dropped) == {m.session_id for m in heavy}
    assert set(res.dropped.values()) == {"volume"}


sessions_strategy = st.lists(
    st.builds(meta, st.uuids().map(str), ip=st.sampled_from(["10.0.0.1", "10.0.0.2"]),
              ua=st.sampled_from(["A", "B"]), minutes=st.floats(1, 900), day=st.integers(0, 1),
              beacon_ip=st.sampled_from([None, "10.0.0.1", "10.0.0.2"]),
              beacon_user_agent=st.sampled_from([None, "A", "B"])),
    max_size=20, unique_by=lambda m: m.session_id)


@given(sessions_strategy)
def test_filter_is_idempotent(sessions):
    once = filter_proxies(sessions)
    twice = filter_proxies(once.kept)
    assert twice.kept == once.kept and not twice.dropped


def test_proxy_filter_updates_report():
    chunks, rep = join_records([player("a", 1), player("b", 1)], [cdn("a", 1), cdn("b", 1)])
    kept, res = apply_proxy_filter(chunks, [meta("a"), meta("b", beacon_ip="1.2.3.4")], rep)
    assert [c.session_id for c in kept] == ["a"]
    assert rep.proxy_filtered_sessions == 1 and rep.proxy_reasons == {"ip_mismatch": 1}
    assert rep.kept_fraction == 0.5
