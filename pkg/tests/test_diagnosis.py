import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from streamdiag.diagnosis import (
    SessionStats,
    baseline_rtt,
    classify_chunk,
    conn_throughput,
    detect_ds_outliers,
    diagnose_session,
    estimate_persistent_ds,
    population_cv,
    rto,
    score_labels,
    session_summary,
)
from streamdiag.telemetry import (
    CacheStatus,
    CdnChunkRecord,
    GroundTruth,
    Label,
    PlayerChunkRecord,
    TcpSnapshot,
    derive,
)

MS = 1000


def chunk(k, d_fb_ms=100.0, d_lb_ms=2000.0, srtt_ms=60.0, srttvar_ms=5.0, cwnd=40,
          status=CacheStatus.HIT_MEMORY, d_read_ms=1.0, d_be_ms=0.0, size=1_500_000,
          retx=(0, 0), drop_fr=0, avg_fr=30.0, vis=True, sid="s", tau=6.0):
    p = PlayerChunkRecord(sid, k, round(d_fb_ms * MS), round(d_lb_ms * MS), 1500,
                          vis=vis, avg_fr=avg_fr, drop_fr=drop_fr)
    c = CdnChunkRecord(sid, k, 100, 100, round(d_read_ms * MS), round(d_be_ms * MS), status, size)
    snaps = [TcpSnapshot(sid, k, 0, cwnd, round(srtt_ms * MS), round(srttvar_ms * MS), retx[0]),
             TcpSnapshot(sid, k, round(d_lb_ms * MS), cwnd, round(srtt_ms * MS),
                         round(srttvar_ms * MS), retx[1])]
    return derive(p, c, snaps, tau)


def spike_session(srtt_spike=False):
    d_fb = [100, 102, 98, 101, 99, 400]
    d_lb = [2000, 2010, 1990, 2005, 1995, 50]
    return [chunk(i + 1, f, lb, srtt_ms=100.0 if srtt_spike and i == 5 else 60.0)
            for i, (f, lb) in enumerate(zip(d_fb, d_lb))]


# --------------------------------------------------------------------------- closed forms


@pytest.mark.parametrize("srtt,var,want", [(60, 5, 280), (100, 0, 300), (55, 11.25, 300)])
def test_rto(srtt, var, want):
    assert rto(srtt, var) == want


def test_conn_throughput():
    assert conn_throughput(TcpSnapshot("s", 1, 0, 10, 100 * MS, 0)) == pytest.approx(146_000)
    assert conn_throughput(TcpSnapshot("s", 1, 0, 1, 1000 * MS, 0)) == pytest.approx(1_460)
    a = conn_throughput(TcpSnapshot("s", 1, 0, 7, 80 * MS, 0))
    assert conn_throughput(TcpSnapshot("s", 1, 0, 14, 80 * MS, 0)) == pytest.approx(2 * a)


# --------------------------------------------------------------------------- Eq. 4


def test_spike_example_flags_chunk_six():
    chunks = spike_session()
    stats = SessionStats.from_chunks(chunks)
    assert stats.mean["d_fb"] == pytest.approx(150.0)
    assert stats.std["d_fb"] == pytest.approx(111.8, abs=0.05)
    assert [f.chunk_id for f in detect_ds_outliers(chunks)] == [6]


def test_identical_chunks_flag_nothing():
    assert detect_ds_outliers([chunk(k) for k in range(1, 9)]) == []


def test_srtt_spike_vetoes_flag():
    assert detect_ds_outliers(spike_session(srtt_spike=True)) == []


def test_short_sessions_skipped():
    assert detect_ds_outliers(spike_session()[-3:]) == []


def test_leave_one_out_also_flags_example():
    assert [f.chunk_id for f in detect_ds_outliers(spike_session(), leave_one_out=True)] == [6]


@given(st.floats(0.1, 50.0))
def test_scaling_d_fb_keeps_flags(factor):
    base = spike_session()
    scaled = [chunk(c.chunk_id, c.d_fb / MS * factor, c.d_lb / MS) for c in base]
    assert [f.chunk_id for f in detect_ds_outliers(scaled)] == [
        f.chunk_id for f in detect_ds_outliers(base)]


# --------------------------------------------------------------------------- Eq. 5


def test_persistent_bound():
    c = chunk(1, d_fb_ms=900.0, d_read_ms=4.8)  # server latency 5 ms
    assert estimate_persistent_ds(c) == pytest.approx(615.0)
    c = chunk(1, d_fb_ms=250.0, d_read_ms=4.8)
    assert estimate_persistent_ds(c) == 0.0


def test_bound_unavailable_without_snapshot():
    p = PlayerChunkRecord("s", 1, 900 * MS, 100 * MS)
    c = CdnChunkRecord("s", 1, 0, 0, 1000, 0, CacheStatus.HIT_MEMORY, 1000)
    assert estimate_persistent_ds(derive(p, c)) is None


def test_bound_below_injected_hold():
    # rtt0 = 60 ms and a 500 ms hold: bound = 60 + 500 - 280
    c = chunk(1, d_fb_ms=1.2 + 60 + 500, d_read_ms=1.0)
    assert 0 < estimate_persistent_ds(c) <= 500
    assert estimate_persistent_ds(c) == pytest.approx(280.0)


def test_baseline_rtt_min_composition():
    # (srtt, rtt0_ub) pairs (60, 80), (55, 50), (70, 90); server latency 1.2 ms
    cs = [chunk(1, 81.2, srtt_ms=60), chunk(2, 51.2, srtt_ms=55), chunk(3, 91.2, srtt_ms=70)]
    assert baseline_rtt(cs) == pytest.approx(50.0)
    assert baseline_rtt([chunk(1, 121.2, srtt_ms=100)]) == pytest.approx(100.0)


# --------------------------------------------------------------------------- labels


def test_label_cache_miss():
    c = chunk(1, d_fb_ms=200, status=CacheStatus.MISS, d_be_ms=75.0)
    assert classify_chunk(c).label is Label.CACHE_MISS_LATENCY


def test_label_disk_timer():
    c = chunk(1, status=CacheStatus.HIT_DISK, d_read_ms=11.0)
    assert classify_chunk(c).label is Label.DISK_TIMER_LATENCY


def test_label_throughput_limited():
    # perf 0.8 with 90% of the time in the last byte and no loss
    c = chunk(1, d_fb_ms=750, d_lb_ms=6750)
    assert c.perf_score == pytest.approx(0.8)
    assert classify_chunk(c).label is Label.THROUGHPUT_LIMITED


def test_label_precedence_loss_before_throughput():
    c = chunk(1, d_fb_ms=750, d_lb_ms=6750, retx=(3, 8))
    lab = classify_chunk(c)
    assert lab.label is Label.NETWORK_LOSS
    assert Label.THROUGHPUT_LIMITED in lab.secondary


def test_label_rendering_and_none():
    bad = chunk(1, drop_fr=90, avg_fr=15.0)
    assert classify_chunk(bad).label is Label.RENDERING_DROP
    assert classify_chunk(chunk(1)).label is Label.NONE


def test_every_chunk_gets_one_label(small_run):
    for _, chunks, _ in small_run[:50]:
        labels = diagnose_session(chunks)
        assert [lab.chunk_id for lab in labels] == [c.chunk_id for c in chunks]
        assert all(isinstance(lab.label, Label) for lab in labels)


# --------------------------------------------------------------------------- summaries


def test_population_cv():
    assert population_cv([50, 50, 50]) == 0.0
    assert population_cv([100, 300]) == pytest.approx(0.5)


def test_summary_fields():
    cs = [chunk(k) for k in range(1, 5)]
    s = session_summary(cs)
    assert s.rebuffer_ratio == 0.0
    assert s.cv_srtt == 0.0
    assert s.startup_delay_source == "first_chunk_download"
    assert s.startup_delay_ms == pytest.approx(2100.0)
    assert session_summary(cs, startup_delay_ms=900.0).startup_delay_source == "measured"
    with pytest.raises(ValueError):
        session_summary([])


# --------------------------------------------------------------------------- scoring


def test_scores_undefined_without_positives():
    labels = diagnose_session([chunk(k) for k in range(1, 6)])
    truth = [GroundTruth("s", k) for k in range(1, 6)]
    s = score_labels(labels, truth)["download_stack_buffered"]
    assert s.positives == 0 and s.recall is None and s.precision is None


def test_scores_count_hits():
    chunks = spike_session()
    labels = diagnose_session(chunks)
    truth = [GroundTruth("s", 6, ("download_stack_buffered",)), GroundTruth("s", 2, ())]
    s = score_labels(labels, truth)["download_stack_buffered"]
    assert (s.positives, s.predicted, s.true_positives) == (1, 1, 1)
    assert math.isclose(s.precision, 1.0) and math.isclose(s.recall, 1.0)
