"""One test per acceptance criterion, each printing a PASS/FAIL line.

The lines are collected in ``RESULTS`` and repeated in the terminal summary
(see conftest.py) so they show up even when output is captured.
"""
import random
import statistics
import time

import test_analysis as ta
from conftest import joined
from streamdiag.analysis import (
    analyze,
    load_sessions,
    rebuf_loss_position,
    rendering_hypothesis,
    write_analysis,
)
from streamdiag.diagnosis import detect_ds_outliers, estimate_persistent_ds, rto
from streamdiag.ingest import filter_proxies
from streamdiag.sim import SimConfig, simulate
from streamdiag.sim.catalog import build_catalog
from streamdiag.telemetry import CacheStatus, SessionMeta
from test_analysis import fixture_dir, frames, result  # noqa: F401  (fixtures)

RESULTS: list[str] = []
DS = "download_stack_buffered"


def verdict(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def us(ms):
    return int(round(ms * 1000))


# --------------------------------------------------------------------------- 1


def test_c01_first_byte_closure():
    t0 = time.perf_counter()
    clean = simulate(SimConfig(n_sessions=1000, seed=3).fault_free())
    elapsed = time.perf_counter() - t0
    bad = n = 0
    for r in clean:
        for p, c, t in zip(r.player, r.cdn, r.truth[1:]):
            n += 1
            bad += p.d_fb - (c.d_cdn + c.d_be + us(t.params["first_byte_rtt_ms"])) != 0
    faulty = simulate(SimConfig(n_sessions=1000, seed=3))
    held = bad_held = 0
    for r in faulty:
        for p, c, t in zip(r.player, r.cdn, r.truth[1:]):
            resid = p.d_fb - (c.d_cdn + c.d_be + us(t.params["first_byte_rtt_ms"]))
            held += DS in t.injected
            bad_held += resid != us(t.params["injected_ds_ms"])
    ok = bad == 0 and bad_held == 0 and held > 0 and elapsed < 10.0
    verdict(1, ok, f"{n} clean chunks, {bad} nonzero residuals; {bad_held} residual "
                   f"mismatches with injection ({held} held chunks); {elapsed:.1f} s")


# --------------------------------------------------------------------------- 2


def test_c02_detector_quality(default_10k, fault_free_2k):
    pos = pred = tp = total = 0
    for _, chunks, truth in default_10k:
        truth_ds = {t.chunk_id for t in truth[1:] if DS in t.injected}
        flagged = {f.chunk_id for f in detect_ds_outliers(chunks)}
        total += len(chunks)
        pos += len(truth_ds)
        pred += len(flagged)
        tp += len(truth_ds & flagged)
    precision, recall = tp / pred, tp / pos
    fp_sessions = sum(bool(detect_ds_outliers(cs)) for _, cs, _ in fault_free_2k)
    fp_rate = fp_sessions / len(fault_free_2k)
    ok = precision >= 0.90 and recall >= 0.80 and fp_rate <= 0.01
    verdict(2, ok, f"positives {pos / total:.2%} of chunks, precision {precision:.3f}, "
                   f"recall {recall:.3f}, fault-free sessions flagged {fp_rate:.2%}")


# --------------------------------------------------------------------------- 3


def test_c03_bound_is_conservative(default_10k, fault_free_2k):
    over = n = 0
    for _, chunks, truth in default_10k:
        for c, t in zip(chunks, truth[1:]):
            n += 1
            over += estimate_persistent_ds(c) > t.params["injected_ds_ms"] + 1e-9
    nonzero = sum(estimate_persistent_ds(c) != 0.0
                  for _, chunks, _ in fault_free_2k for c in chunks)
    verdict(3, over == 0 and nonzero == 0,
            f"{over}/{n} bounds above injected delay; {nonzero} nonzero fault-free bounds")


# --------------------------------------------------------------------------- 4


def test_c04_rto_formula():
    a, b = rto(60, 5), rto(100, 0)
    verdict(4, a == 280 and b == 300, f"rto(60,5)={a}, rto(100,0)={b}")


# --------------------------------------------------------------------------- 5


def test_c05_cache_constants(default_10k):
    hit, miss, disk = [], [], []
    for _, chunks, _ in default_10k:
        for c in chunks:
            sl = c.server_latency / 1000
            if c.cache_status is CacheStatus.MISS:
                miss.append(sl)
            else:
                hit.append(sl)
                if c.cache_status is CacheStatus.HIT_DISK:
                    disk.append(c.d_read / 1000)
    n = len(hit) + len(miss)
    mh, mm = statistics.median(hit), statistics.median(miss)
    ok = n >= 100_000 and 1 <= mh <= 3 and 70 <= mm <= 90 and min(disk) >= 10
    verdict(5, ok, f"{n} requests: hit median {mh:.2f} ms, miss median {mm:.1f} ms, "
                   f"min disk read {min(disk):.2f} ms")


# --------------------------------------------------------------------------- 6


def test_c06_popularity_skew():
    cfg = SimConfig()
    cat = build_catalog(cfg.n_videos, cfg.zipf_exponent, cfg.seed)
    rng = random.Random(6)
    top = cfg.n_videos // 10
    share = sum(cat.sample_rank(rng) <= top for _ in range(100_000)) / 100_000
    verdict(6, abs(share - 0.66) <= 0.02, f"top-10% share {share:.4f} over 100000 plays")


# --------------------------------------------------------------------------- 7


def test_c07_loss_position(uniform_loss_10k, default_10k):
    pos = {p.chunk_id: p for p in rebuf_loss_position(cs for _, cs, _ in uniform_loss_10k)}
    p1, p5, p9 = (pos[k].p_rebuf_given_loss for k in (1, 5, 9))
    retx = {p.chunk_id: p.mean_retx_rate
            for p in rebuf_loss_position(cs for _, cs, _ in default_10k)}
    peak = max(retx, key=retx.get)
    ok = p1 > p5 > p9 and peak == 1
    verdict(7, ok, f"P(rebuf|loss) chunk1 {p1:.4f} > chunk5 {p5:.4f} > chunk9 {p9:.4f}; "
                   f"retx rate peaks at chunk {peak} ({retx[peak]:.4f})")


# --------------------------------------------------------------------------- 8


def test_c08_perf_score_semantics():
    runs = joined(simulate(SimConfig(n_sessions=1000, seed=8)))
    n = wrong = 0
    for _, chunks, truth in runs:
        for c, t in zip(chunks, truth[1:]):
            p = t.params
            if not p["playing_at_request"] or c.buf_count > 0:
                continue
            n += 1
            drained = p["buffer_at_completion_ms"] < p["buffer_at_request_ms"]
            wrong += drained != (c.perf_score < 1)
    verdict(8, n > 0 and wrong == 0, f"{wrong} disagreements over {n} steady chunks")


# --------------------------------------------------------------------------- 9


def test_c09_oracle_equivalence(fixture_dir, frames, result, tmp_path):  # noqa: F811
    sessions = load_sessions(fixture_dir)
    a = write_analysis(analyze(sessions, jobs=1), tmp_path / "j1")
    b = write_analysis(analyze(sessions, jobs=8), tmp_path / "j8")
    same = all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))
    checks = [ta.test_position_matches_oracle, ta.test_rendering_matches_oracle,
              ta.test_popularity_matches_oracle, ta.test_first_chunk_matches_oracle,
              ta.test_prefixes_match_oracle, ta.test_shares_match_oracle,
              ta.test_cdn_breakdown_matches_oracle, ta.test_org_cv_matches_oracle]
    failed = []
    for check in checks:
        try:
            check(result, frames)
        except AssertionError:
            failed.append(check.__name__[5:])
    verdict(9, same and not failed,
            f"{len(a)} outputs byte-identical across jobs: {same}; oracle mismatches: {failed or 'none'}")


# --------------------------------------------------------------------------- 10


def test_c10_rendering_rule(default_10k):
    allc = [c for _, cs, _ in default_10k for c in cs]
    frac = rendering_hypothesis(allc).confirm_fraction
    cfg = SimConfig()
    lines, ok = [], 0.80 <= frac <= 0.92
    for client in cfg.clients:
        if not client.render.cpu_bound:
            continue
        cs = [c for m, chunks, _ in default_10k if m.user_agent == client.label for c in chunks]
        table = {lo: mean for lo, _, mean in rendering_hypothesis(cs).drop_by_rate}
        d1, d2 = table.get(1.0), table.get(2.0)
        fine = d1 is not None and d2 is not None and d2 < d1
        ok &= fine
        lines.append(f"{client.label} drop@2.0 {d2:.3f} < drop@1.0 {d1:.3f}" if fine
                     else f"{client.label} {d2} vs {d1}")
    verdict(10, ok and bool(lines), f"confirm fraction {frac:.3f}; " + "; ".join(lines))


# --------------------------------------------------------------------------- 11


def test_c11_proxy_filter():
    sessions, want = [], {}
    for i in range(100):
        ip = f"10.0.{i}.1"
        if i % 5 == 0:
            sessions.append(SessionMeta(f"m{i}", ip, "Windows/Chrome", 600.0,
                                        beacon_ip=f"192.168.{i}.1"))
            want[f"m{i}"] = "ip_mismatch"
        else:
            sessions.append(SessionMeta(f"n{i}", ip, "Windows/Chrome", 600.0, beacon_ip=ip))
    for j in range(20):  # 20 sessions of 100 minutes from one IP on one day
        sessions.append(SessionMeta(f"h{j}", "10.9.9.9", "Windows/Chrome", 6000.0, day=3,
                                    beacon_ip="10.9.9.9"))
        want[f"h{j}"] = "volume"
    res = filter_proxies(sessions)
    kept = len(res.kept)
    verdict(11, res.dropped == want and kept == len(sessions) - len(want),
            f"dropped {len(res.dropped)} ({res.reasons}), expected {len(want)}; kept {kept}")
