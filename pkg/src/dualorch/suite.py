"""Bundled fixture suite: ten small COBOL programs with Python references.

Layout of a suite directory::

    manifest.json                 program descriptors and test cases
    programs/<ID>/source.cbl      legacy source handed to the model
    programs/<ID>/reference.py    executable stand-in for the compiled original
    programs/<ID>/translations/   candidate translations (correct, near_miss, broken)
    scripts/<ID>.json             scripted backend responses
    web.json                      url -> body map served by WEB_SCRAPE
    web/                          registered web fixtures (see tools.register_fixture)
"""

from __future__ import annotations

import json
import shutil
from dataclasses import replace
from importlib import resources
from pathlib import Path

from .core import ConfigError, ProgramUnit, dump_suite, load_suite
from .gateway import ProgramHints
from .harness import reference_outcome
from .orchestrators import source_path, target_path
from .tools import register_fixture


def bundled_suite_dir() -> Path:
    return Path(str(resources.files("dualorch") / "fixtures" / "suite"))


def bundled_manifest() -> Path:
    return bundled_suite_dir() / "manifest.json"


def compute_goldens(programs: list[ProgramUnit], timeout: float = 10.0) -> list[ProgramUnit]:
    """Run each reference once per test and freeze stdout, exit code and files."""
    out = []
    for p in programs:
        tests = []
        for t in p.tests:
            o = reference_outcome(p, t, timeout, prefer_golden=False)
            tests.append(replace(
                t, golden=o.to_golden(),
                expected_artifacts=tuple(sorted(o.produced_files.items())),
            ))
        out.append(replace(p, tests=tuple(tests)))
    return out


def register_web_fixtures(suite_dir: Path) -> int:
    web_map = suite_dir / "web.json"
    if not web_map.is_file():
        return 0
    pages = json.loads(web_map.read_text())
    for url, body in sorted(pages.items()):
        register_fixture(suite_dir, url, body.encode("utf-8"))
    return len(pages)


def materialize_suite(out_dir: str | Path, source: str | Path | None = None,
                      timeout: float = 10.0) -> Path:
    """Copy a suite to ``out_dir``, recompute goldens and register web fixtures.

    Returns the path of the written manifest.
    """
    src = Path(source) if source is not None else bundled_suite_dir()
    dest = Path(out_dir)
    if dest.exists() and any(dest.iterdir()):
        raise ConfigError(f"{dest} exists and is not empty")
    shutil.copytree(src, dest, dirs_exist_ok=True,
                    ignore=shutil.ignore_patterns("__pycache__"))
    manifest = dest / "manifest.json"
    programs = compute_goldens(load_suite(manifest), timeout)
    dump_suite(programs, manifest)
    register_web_fixtures(dest)
    return manifest


def web_urls(suite_dir: Path) -> tuple[str, ...]:
    web_map = suite_dir / "web.json"
    if not web_map.is_file():
        return ()
    return tuple(sorted(json.loads(web_map.read_text())))


def load_hints(suite_dir: Path, programs: list[ProgramUnit]) -> dict[str, ProgramHints]:
    """Stub hints: candidate translations, stdin samples and scrapeable urls."""
    urls = web_urls(suite_dir)
    hints = {}
    for p in programs:
        tdir = p.resolve(p.reference_path).parent / "translations"
        candidates = {f.stem: f.read_text() for f in sorted(tdir.glob("*.py"))}
        if "correct" not in candidates:
            candidates["correct"] = p.resolve(p.reference_path).read_text()
        hints[p.id] = ProgramHints(
            source_path=source_path(p),
            target_path=target_path(p),
            candidates=candidates,
            stdin_samples=tuple(t.stdin_payload.decode("latin-1") for t in p.active_tests),
            urls=urls,
        )
    return hints

