"""Batch driver: ``dualorch translate | report | compare-traces | init-fixtures``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Run ``k`` of a batch uses seed ``seed_base + k``; only the mode differs
between the configs of the two engines.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any

from .core import Category, ConfigError, Mode, ProgramUnit, RunConfig, load_suite
from .gateway import build_backend
from .harness import build_harness_report
from .metrics import MetricsConfig, load_price_table, summarize
from .orchestrators import run_program
from .records import RunlogError, RunRecord, read_runlog, write_runlog
from .suite import bundled_manifest, load_hints, materialize_suite
from .trace import divergence_point, trace_hash

log = logging.getLogger("dualorch")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def default_parallelism() -> int:
    return max(1, min(os.cpu_count() or 1, 8))


@dataclass(frozen=True)
class BatchSpec:
    suite: Path
    config: Path | None
    modes: tuple[Mode, ...]
    repeats: int
    seed_base: int
    parallelism: int
    out: Path

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if not self.modes:
            raise ConfigError("at least one mode is required")
        if self.seed_base < 0:
            raise ConfigError("seed base must be non-negative")


def _modes(value: str) -> tuple[Mode, ...]:
    if value.lower() == "both":
        return (Mode.DETERMINISTIC, Mode.AGENTIC)
    return tuple(Mode(v.strip().upper()) for v in value.split(","))


def run_batch(batch: BatchSpec, *, progress: bool = False) -> dict[Mode, list[RunRecord]]:
    """Execute repeats x programs x modes runs and return records per mode,
    sorted by (program_id, run_index)."""
    programs = load_suite(batch.suite)
    base = RunConfig.load(batch.config) if batch.config else RunConfig()
    suite_dir = batch.suite.parent
    hints = load_hints(suite_dir, programs) if base.backend.get("kind") == "stub" else None
    backend = build_backend(base.backend, scripts_dir=suite_dir / "scripts", hints=hints)

    jobs = [
        (p, mode, k)
        for mode in batch.modes for p in programs for k in range(batch.repeats)
    ]
    transcripts: dict[tuple[str, str, int], list] = {}

    def one(job: tuple[ProgramUnit, Mode, int]) -> RunRecord:
        program, mode, k = job
        config = base.replace(mode=mode, seed=batch.seed_base + k)
        transcript: list = []
        record = run_program(program, config, backend, run_index=k, fixtures_dir=suite_dir,
                             transcript=transcript)
        transcripts[(program.id, mode.value, k)] = transcript
        if progress:
            log.info("%s ca=%s error=%s", record.run_id, record.ca,
                     record.error.value if record.error else None)
        return record

    with ThreadPoolExecutor(max_workers=batch.parallelism) as pool:
        records = list(pool.map(one, jobs))

    by_mode: dict[Mode, list[RunRecord]] = {m: [] for m in batch.modes}
    for r in sorted(records, key=lambda r: (r.program_id, r.mode.value, r.run_index)):
        by_mode[r.mode].append(r)
    batch.out.mkdir(parents=True, exist_ok=True)
    for mode, recs in by_mode.items():
        write_runlog(recs, batch.out / f"runs_{mode.value.lower()}.jsonl")
        with open(batch.out / f"transcripts_{mode.value.lower()}.jsonl", "w") as fh:
            for r in recs:
                fh.write(json.dumps({"run_id": r.run_id,
                                     "turns": transcripts[(r.program_id, mode.value, r.run_index)]},
                                    sort_keys=True) + "\n")
    return by_mode


def cmd_translate(args: argparse.Namespace) -> int:
    if args.config is not None and not Path(args.config).is_file():
        print(f"error: config file {args.config} not found", file=sys.stderr)
        return EXIT_USAGE
    try:
        batch = BatchSpec(
            suite=Path(args.suite), config=Path(args.config) if args.config else None,
            modes=_modes(args.mode), repeats=args.repeats, seed_base=args.seed_base,
            parallelism=args.parallel, out=Path(args.out),
        )
        # validate manifest and config before producing any output
        load_suite(batch.suite)
        if batch.config:
            RunConfig.load(batch.config)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        by_mode = run_batch(batch, progress=args.verbose)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for mode, recs in by_mode.items():
        ok = sum(r.successful for r in recs)
        tokens = sum(r.token_ledger.totals.total for r in recs)
        print(f"{mode.value}: {len(recs)} runs, {ok} successful, {tokens} tokens")
    return EXIT_OK


def best_runs(records: list[RunRecord]) -> list[RunRecord]:
    """One record per (program, mode): highest CA, earliest run on ties."""
    best: dict[tuple[str, str], RunRecord] = {}
    for r in records:
        key = (r.program_id, r.mode.value)
        ca = r.ca if r.ca is not None else Fraction(-1)
        cur = best.get(key)
        if cur is None or ca > (cur.ca if cur.ca is not None else Fraction(-1)) or (
            ca == cur.ca and r.run_index < cur.run_index
        ):
            best[key] = r
    return [best[k] for k in sorted(best)]


def cmd_report(args: argparse.Namespace) -> int:
    records: list[RunRecord] = []
    try:
        for path in args.runlogs:
            records.extend(read_runlog(path))
        prices = load_price_table(args.prices) if args.prices else None
        suite = load_suite(args.suite) if args.suite else []
        config = MetricsConfig(alpha=Fraction(args.alpha), percentile_q=Fraction(args.q))
        summary = summarize(records, config, prices)
    except RunlogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(summary.to_csv())
    (out / "metrics.json").write_text(summary.to_json() + "\n")

    modes = sorted({r.mode.value for r in records})
    for mode in modes:
        chosen = best_runs([r for r in records if r.mode.value == mode])
        grouped: dict[Category, list[RunRecord]] = defaultdict(list)
        for r in chosen:
            grouped[r.category].append(r)
        report = build_harness_report(grouped, suite)
        (out / f"harness_{mode.lower()}.csv").write_text(report.to_csv())
        (out / f"harness_{mode.lower()}.json").write_text(report.to_json() + "\n")
    for row in summary.rows:
        if row.level == "suite":
            v = row.values
            print(f"{row.mode}: N={row.n} CA={float(v['CA']):.4f} SR={float(v['SR']):.4f} "
                  f"TOTAL_TOKENS={v['TOTAL_TOKENS']}")
    return EXIT_OK


def compare_traces(records: list[RunRecord]) -> list[dict[str, Any]]:
    groups: dict[tuple[str, str], list[RunRecord]] = defaultdict(list)
    for r in records:
        groups[(r.program_id, r.mode.value)].append(r)
    report = []
    for (pid, mode), runs in sorted(groups.items()):
        runs.sort(key=lambda r: r.run_index)
        entry: dict[str, Any] = {"program_id": pid, "mode": mode, "runs": len(runs)}
        if len(runs) < 2:
            entry["status"] = "insufficient repeats"
            report.append(entry)
            continue
        hashes = [trace_hash(r.trace) for r in runs]
        entry["distinct_hashes"] = len(set(hashes))
        entry["divergences"] = [
            {"a": a.run_index, "b": b.run_index, "point": point}
            for a, b in itertools.combinations(runs, 2)
            if (point := divergence_point(a.trace, b.trace)) is not None
        ]
        entry["status"] = "ok"
        report.append(entry)
    return report


def cmd_compare_traces(args: argparse.Namespace) -> int:
    records: list[RunRecord] = []
    try:
        for path in args.runlogs:
            records.extend(read_runlog(path))
    except (RunlogError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = compare_traces(records)
    for g in report:
        if g["status"] != "ok":
            print(f"{g['program_id']} {g['mode']}: {g['status']}")
            continue
        points = sorted({d["point"] for d in g["divergences"]})
        print(f"{g['program_id']} {g['mode']}: runs={g['runs']} "
              f"distinct_hashes={g['distinct_hashes']} divergence_points={points}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def cmd_init_fixtures(args: argparse.Namespace) -> int:
    try:
        manifest = materialize_suite(args.out, args.suite)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(manifest)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualorch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("translate", help="run a suite under one or both engines")
    t.add_argument("--suite", default=str(bundled_manifest()))
    t.add_argument("--config", default=None, help="RunConfig JSON; defaults apply when omitted")
    t.add_argument("--mode", default="both", help="DETERMINISTIC, AGENTIC or both")
    t.add_argument("--repeats", type=int, default=1)
    t.add_argument("--seed-base", type=int, default=0)
    t.add_argument("--parallel", type=int, default=default_parallelism())
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_translate)

    r = sub.add_parser("report", help="metric and harness reports from runlogs")
    r.add_argument("runlogs", nargs="+")
    r.add_argument("--out", required=True)
    r.add_argument("--prices", default=None, help="price table JSON")
    r.add_argument("--suite", default=None, help="manifest for Deleted/Inspect annotations")
    r.add_argument("--alpha", default="1/10")
    r.add_argument("--q", default="5")
    r.set_defaults(func=cmd_report)

    c = sub.add_parser("compare-traces", help="trace hash and divergence report")
    c.add_argument("runlogs", nargs="+")
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_compare_traces)

    i = sub.add_parser("init-fixtures", help="materialize the bundled suite with goldens")
    i.add_argument("--out", required=True)
    i.add_argument("--suite", default=None, help="source suite directory")
    i.set_defaults(func=cmd_init_fixtures)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
