"""Command-line entry point: simulate, ingest, diagnose, analyze, report, pipeline."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Sequence

from . import __version__
from .analysis import analyze, load_sessions, write_analysis
from .diagnosis import diagnose_session, score_labels, session_summary
from .ingest import (
    IngestError,
    apply_proxy_filter,
    join_records,
    parse_logs,
    read_jsonl,
    write_joined,
)
from .ingest import write_report as write_join_report
from .report import write_report
from .sim import ConfigError, SimConfig, load_config, simulate, write_outputs
from .telemetry import GroundTruth, RecordError, dumps

log = logging.getLogger("streamdiag")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

MANIFEST = "manifest.json"


class DataError(RuntimeError):
    """Input data missing or unusable."""


class Manifest:
    """Run manifest; one per output directory."""

    def __init__(self, command: str, out_dir: Path, cfg: SimConfig | None = None) -> None:
        self.out_dir = out_dir
        self.data: dict[str, Any] = {
            "tool": "streamdiag",
            "version": __version__,
            "command": command,
            "config_hash": cfg.config_hash() if cfg is not None else None,
            "seed": cfg.seed if cfg is not None else None,
            "inputs": {},
            "outputs": [],
            "stages": {},
            "counters": {},
        }

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.data["stages"][name] = round(time.perf_counter() - t0, 6)

    def write(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.data["outputs"] = sorted(self.data["outputs"])
        path = self.out_dir / MANIFEST
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def build_config(args: argparse.Namespace) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "sessions", None) is not None:
        overrides["n_sessions"] = args.sessions
    return cfg.with_overrides(**overrides) if overrides else cfg


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"{path} not found")
    return path


# --------------------------------------------------------------------------- stages


def run_simulate(cfg: SimConfig, out: Path, jobs: int) -> dict[str, int]:
    m = Manifest("simulate", out, cfg)
    with m.stage("simulate"):
        results = simulate(cfg, jobs=jobs)
    with m.stage("write"):
        counts = write_outputs(results, out)
    m.data["outputs"] = list(counts)
    m.data["counters"] = {"sessions": len(results), **counts}
    m.write()
    return counts


def run_ingest(paths: dict[str, Path | None], out: Path) -> dict[str, Any]:
    m = Manifest("ingest", out)
    m.data["inputs"] = {k: str(v) for k, v in sorted(paths.items()) if v is not None}
    for name in ("player", "cdn"):
        if paths.get(name) is None:
            raise DataError(f"--{name} is required")
    with m.stage("parse"):
        try:
            logs = parse_logs(paths)
        except IngestError as exc:
            raise DataError(str(exc)) from exc
    with m.stage("join"):
        chunks, rep = join_records(logs.player, logs.cdn, logs.tcp, logs.meta)
        rep.malformed = logs.malformed
    with m.stage("proxy_filter"):
        chunks, res = apply_proxy_filter(chunks, logs.meta, rep)
    out.mkdir(parents=True, exist_ok=True)
    with m.stage("write"):
        write_joined(chunks, out / "joined.jsonl")
        write_join_report(rep, out / "join_report.json")
        with open(out / "sessions.jsonl", "w", encoding="utf-8") as fh:
            for meta in sorted(res.kept, key=lambda s: s.session_id):
                fh.write(dumps(meta) + "\n")
    m.data["outputs"] = ["joined.jsonl", "join_report.json", "sessions.jsonl"]
    m.data["counters"] = {"joined": rep.joined, "kept_chunks": len(chunks),
                          "sessions": rep.sessions, "proxy_filtered": rep.proxy_filtered_sessions,
                          "malformed": rep.malformed}
    m.write()
    return rep.to_dict()


def _truth(path: Path | None) -> list[GroundTruth] | None:
    if path is None or not path.exists():
        return None
    return read_jsonl(path, GroundTruth)


def format_scorecard(scores: dict) -> str:
    lines = [f"{'label':<28}{'positives':>10}{'predicted':>10}{'precision':>11}{'recall':>9}"]
    for kind, s in scores.items():
        p = "n/a" if s["precision"] is None else f"{s['precision']:.3f}"
        r = "n/a" if s["recall"] is None else f"{s['recall']:.3f}"
        lines.append(f"{kind:<28}{s['positives']:>10}{s['predicted']:>10}{p:>11}{r:>9}")
    return "\n".join(lines)


def run_diagnose(in_dir: Path, out: Path, truth_path: Path | None = None,
                 labels_name: str = "labels.jsonl", summary_name: str = "summaries.jsonl") -> dict | None:
    m = Manifest("diagnose", out)
    m.data["inputs"] = {"in": str(in_dir), "truth": str(truth_path) if truth_path else None}
    _require(in_dir / "joined.jsonl")
    with m.stage("load"):
        sessions = load_sessions(in_dir)
        truth = _truth(truth_path)
    startup = {}
    if truth is not None:
        startup = {t.session_id: t.params.get("startup_delay_ms")
                   for t in truth if t.chunk_id == 0}
    out.mkdir(parents=True, exist_ok=True)
    labels = []
    with m.stage("diagnose"), open(out / labels_name, "w", encoding="utf-8") as lf, \
            open(out / summary_name, "w", encoding="utf-8") as sf:
        for meta, chunks in sessions:
            got = diagnose_session(chunks)
            labels.extend(got)
            for lab in got:
                lf.write(dumps(lab) + "\n")
            s = session_summary(chunks, meta, got, startup_delay_ms=startup.get(chunks[0].session_id))
            sf.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")
    m.data["outputs"] = [labels_name, summary_name]
    m.data["counters"] = {"sessions": len(sessions), "labels": len(labels),
                          "flagged": sum(1 for lab in labels if lab.label.value != "none")}
    scores = None
    if truth is not None:
        scores = {k: v.to_dict() for k, v in score_labels(labels, truth).items()}
        (out / "scorecard.json").write_text(json.dumps(scores, indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8")
        m.data["outputs"].append("scorecard.json")
    m.write()
    return scores


def run_analyze(in_dir: Path, out: Path, jobs: int) -> dict:
    m = Manifest("analyze", out)
    m.data["inputs"] = {"in": str(in_dir)}
    _require(in_dir / "joined.jsonl")
    with m.stage("load"):
        sessions = load_sessions(in_dir)
    with m.stage("analyze"):
        result = analyze(sessions, jobs=jobs)
    with m.stage("write"):
        files = write_analysis(result, out)
    m.data["outputs"] = [f.name for f in files]
    m.data["counters"] = {"sessions": result.sessions, "chunks": result.chunks}
    m.write()
    return result.summary()


def run_report(reports: Path, out: Path) -> list[Path]:
    m = Manifest("report", out)
    m.data["inputs"] = {"in": str(reports)}
    with m.stage("plot"):
        written = write_report(reports, out)
    if not written:
        raise DataError(f"no analysis CSVs found in {reports}")
    m.data["outputs"] = [p.name for p in written]
    m.data["counters"] = {"plots": len(written)}
    if out.resolve() != reports.resolve() or not (out / MANIFEST).exists():
        m.write()
    else:
        # the analysis manifest already owns this directory; extend it
        data = json.loads((out / MANIFEST).read_text(encoding="utf-8"))
        data["outputs"] = sorted(set(data["outputs"]) | set(m.data["outputs"]))
        data["stages"]["plot"] = m.data["stages"]["plot"]
        data["counters"]["plots"] = len(written)
        (out / MANIFEST).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return written


# --------------------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = build_config(args)
    counts = run_simulate(cfg, Path(args.out), args.jobs)
    print(json.dumps(counts, sort_keys=True))
    return EXIT_OK


def cmd_ingest(args) -> int:
    paths = {"player": args.player, "cdn": args.cdn, "tcp": args.tcp, "meta": args.meta}
    paths = {k: Path(v) if v else None for k, v in paths.items()}
    rep = run_ingest(paths, Path(args.out))
    print(json.dumps({k: rep[k] for k in ("joined", "sessions", "proxy_filtered_sessions")},
                     sort_keys=True))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    in_dir = Path(getattr(args, "in"))
    truth = Path(args.truth) if args.truth else None
    scores = run_diagnose(in_dir, Path(args.out), truth, args.labels, args.summary)
    if scores is not None:
        print(format_scorecard(scores))
    return EXIT_OK


def cmd_analyze(args) -> int:
    summary = run_analyze(Path(getattr(args, "in")), Path(args.out), args.jobs)
    print(json.dumps({"sessions": summary["sessions"], "chunks": summary["chunks"]}))
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(getattr(args, "in") or args.out)
    written = run_report(src, Path(args.out))
    for p in written:
        print(p)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = build_config(args)
    out = Path(args.out)
    m = Manifest("pipeline", out, cfg)
    with m.stage("simulate"):
        run_simulate(cfg, out / "logs", args.jobs)
    logs = out / "logs"
    with m.stage("ingest"):
        rep = run_ingest({"player": logs / "player.jsonl", "cdn": logs / "cdn.jsonl",
                          "tcp": logs / "tcp.jsonl", "meta": logs / "sessions.jsonl"}, out / "joined")
    with m.stage("diagnose"):
        scores = run_diagnose(out / "joined", out / "diagnosis", logs / "truth.jsonl")
    with m.stage("analyze"):
        run_analyze(out / "joined", out / "reports", args.jobs)
    with m.stage("report"):
        run_report(out / "reports", out / "reports")
    m.data["outputs"] = ["logs", "joined", "diagnosis", "reports"]
    m.data["counters"] = {"sessions": cfg.n_sessions, "joined": rep["joined"],
                          "proxy_filtered_sessions": rep["proxy_filtered_sessions"]}
    m.data["scorecard"] = scores
    m.write()
    print(format_scorecard(scores))
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _global_flags(parser: argparse.ArgumentParser, top: bool) -> None:
    # Flags live on both the top-level parser and each subcommand; the
    # subcommand copies default to SUPPRESS so they only override when given.
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    parser.add_argument("--config", default=d(None), help="TOML config file")
    parser.add_argument("--seed", type=int, default=d(None), help="override the config seed")
    parser.add_argument("--jobs", type=int, default=d(1), help="worker processes")
    parser.add_argument("--out", default=d(None), help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamdiag", description=__doc__)
    p.add_argument("--version", action="version", version=f"streamdiag {__version__}")
    _global_flags(p, True)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name: str, func, help: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help)
        _global_flags(sp, False)
        sp.set_defaults(func=func)
        return sp

    sp = add("simulate", cmd_simulate, "simulate sessions and write logs plus ground truth")
    sp.add_argument("--sessions", type=int, help="override n_sessions")
    sp = add("ingest", cmd_ingest, "join player/CDN/TCP logs and filter proxies")
    sp.add_argument("--player", required=True)
    sp.add_argument("--cdn", required=True)
    sp.add_argument("--tcp")
    sp.add_argument("--meta")
    sp = add("diagnose", cmd_diagnose, "label every chunk and summarise sessions")
    sp.add_argument("--in", required=True, help="directory with joined.jsonl")
    sp.add_argument("--labels", default="labels.jsonl")
    sp.add_argument("--summary", default="summaries.jsonl")
    sp.add_argument("--truth", help="truth.jsonl, enables the scorecard")
    sp = add("analyze", cmd_analyze, "run the aggregate analyses")
    sp.add_argument("--in", required=True, help="directory with joined.jsonl")
    sp = add("report", cmd_report, "plot the analysis CSVs as SVG")
    sp.add_argument("--in", help="reports directory (default: --out)")
    sp = add("pipeline", cmd_pipeline, "simulate, ingest, diagnose, analyze and report")
    sp.add_argument("--sessions", type=int, help="override n_sessions")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.out is None:
        parser.error("--out is required")
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IngestError, RecordError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
