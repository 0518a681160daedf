import hashlib
import json
import re

import pytest

from streamdiag.cli import EXIT_CONFIG, EXIT_DATA, MANIFEST, main
from streamdiag.report import Chart, Series, render_svg, write_report


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------------------- report


def test_empty_csv_gives_axes_only(tmp_path):
    (tmp_path / "first_chunk.csv").write_text("quantile,first_d_fb_ms,other_d_fb_ms\n")
    written = write_report(tmp_path)
    assert [p.name for p in written] == ["first_chunk.svg"]
    svg = written[0].read_text()
    assert 'class="axes"' in svg and "<polyline" not in svg


def test_cdf_polyline_has_one_vertex_per_point(tmp_path):
    lines = ["quantile,first_d_fb_ms,other_d_fb_ms"]
    lines += [f"{q / 10},{100 + q},{50 + q}" for q in range(11)]
    (tmp_path / "first_chunk.csv").write_text("\n".join(lines) + "\n")
    svg = write_report(tmp_path)[0].read_text()
    polys = re.findall(r'points="([^"]*)"', svg)
    assert [len(p.split()) for p in polys] == [11, 11]


def test_render_is_deterministic():
    chart = Chart("t", "x", "y", lines=[Series("a", [(0.0, 1.0), (2.0, 3.0)])])
    assert render_svg(chart) == render_svg(chart)


def test_missing_csvs_skipped(tmp_path, caplog):
    assert write_report(tmp_path) == []
    assert "not found" in caplog.text


# --------------------------------------------------------------------------- CLI


def run_sim(out, *extra):
    return main(["simulate", "--sessions", "100", "--seed", "3", "--out", str(out), *extra])


def test_simulate_writes_five_files_and_manifest(tmp_path):
    assert run_sim(tmp_path / "a") == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(["player.jsonl", "cdn.jsonl", "tcp.jsonl", "truth.jsonl",
                            "sessions.jsonl", MANIFEST])
    m = json.loads((tmp_path / "a" / MANIFEST).read_text())
    assert m["counters"]["sessions"] == 100
    lines = sum(1 for _ in open(tmp_path / "a" / "player.jsonl"))
    assert m["counters"]["player.jsonl"] == lines
    assert m["seed"] == 3 and len(m["config_hash"]) == 64


def test_simulate_is_reproducible(tmp_path):
    run_sim(tmp_path / "a")
    run_sim(tmp_path / "b", "--jobs", "2")
    for name in ("player.jsonl", "cdn.jsonl", "tcp.jsonl", "truth.jsonl", "sessions.jsonl"):
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name)


def test_zero_sessions(tmp_path):
    assert main(["simulate", "--sessions", "0", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "player.jsonl").read_text() == ""
    assert json.loads((tmp_path / MANIFEST).read_text())["counters"]["sessions"] == 0


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("n_videos = 3\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "n_videos" in capsys.readouterr().err


def test_missing_input_exit_code(tmp_path):
    assert main(["analyze", "--in", str(tmp_path / "none"), "--out", str(tmp_path)]) == EXIT_DATA
    assert main(["report", "--out", str(tmp_path)]) == EXIT_DATA


def test_global_flags_before_subcommand(tmp_path):
    assert main(["--seed", "3", "--out", str(tmp_path), "simulate", "--sessions", "5"]) == 0
    assert json.loads((tmp_path / MANIFEST).read_text())["seed"] == 3


def test_stagewise_commands(tmp_path):
    logs, joined, diag, rep = (tmp_path / d for d in ("logs", "joined", "diag", "rep"))
    assert run_sim(logs) == 0
    assert main(["ingest", "--player", str(logs / "player.jsonl"), "--cdn", str(logs / "cdn.jsonl"),
                 "--tcp", str(logs / "tcp.jsonl"), "--meta", str(logs / "sessions.jsonl"),
                 "--out", str(joined)]) == 0
    report = json.loads((joined / "join_report.json").read_text())
    assert report["joined"] == report["total_player"]
    assert main(["diagnose", "--in", str(joined), "--out", str(diag),
                 "--truth", str(logs / "truth.jsonl")]) == 0
    assert (diag / "labels.jsonl").exists() and (diag / "scorecard.json").exists()
    assert main(["analyze", "--in", str(joined), "--out", str(rep)]) == 0
    assert main(["report", "--out", str(rep)]) == 0
    assert len(list(rep.glob("*.svg"))) == 11
    for d in (logs, joined, diag, rep):
        assert len(list(d.glob(MANIFEST))) == 1


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    assert main(["pipeline", "--sessions", "150", "--seed", "8", "--out", str(out)]) == 0
    return out


def test_pipeline_scorecard_schema(pipeline_dir):
    card = json.loads((pipeline_dir / "diagnosis" / "scorecard.json").read_text())
    ds = card["download_stack_buffered"]
    assert set(ds) == {"positives", "predicted", "true_positives", "precision", "recall"}


def test_pipeline_svgs_byte_identical_on_rerun(pipeline_dir, tmp_path):
    assert main(["pipeline", "--sessions", "150", "--seed", "8", "--out", str(tmp_path)]) == 0
    for svg in (pipeline_dir / "reports").glob("*.svg"):
        assert svg.read_bytes() == (tmp_path / "reports" / svg.name).read_bytes()


def test_no_faults_reports_na(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("ds_fault_rate_scale = 0.0\n")
    assert main(["pipeline", "--config", str(cfg), "--sessions", "30",
                 "--out", str(tmp_path / "o")]) == 0
    card = json.loads((tmp_path / "o" / "diagnosis" / "scorecard.json").read_text())
    assert card["download_stack_buffered"]["recall"] is None
    row = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("download_stack_buffered")]
    assert row and row[0].split()[-1] == "n/a"
