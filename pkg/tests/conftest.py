from __future__ import annotations

import functools
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from snipcheck.solc import (  # noqa: E402
    CATALOG_ENV, Catalog, CompileOutput, compile_source, list_versions, parse_version,
)

FIXTURES = Path(__file__).parent / "fixtures"


@functools.lru_cache(maxsize=1)
def installed_catalog() -> Catalog | None:
    path = os.environ.get(CATALOG_ENV)
    if not path or not Path(path).is_file():
        return None
    cat = Catalog.load(path)
    return cat if list_versions(cat) else None


def version_for(series: tuple[int, int]) -> str | None:
    """Newest installed compiler of a minor series."""
    cat = installed_catalog()
    if cat is None:
        return None
    hits = [v for v in list_versions(cat) if parse_version(v)[:2] == series]
    return max(hits, key=parse_version) if hits else None


@functools.lru_cache(maxsize=None)
def compiled(source: str, version: str) -> CompileOutput:
    return compile_source(source, version, installed_catalog())


def need_series(*series: tuple[int, int]) -> str:
    """Skip unless every listed series is installed; returns the first."""
    found = [version_for(s) for s in series]
    missing = [f"{a}.{b}" for (a, b), v in zip(series, found) if v is None]
    if missing:
        pytest.skip(f"no {', '.join(missing)} compiler in ${CATALOG_ENV}")
    return found[0]


def pytest_collection_modifyitems(config, items):
    if installed_catalog() is not None:
        return
    skip = pytest.mark.skip(reason=f"${CATALOG_ENV} names no installed compiler")
    for item in items:
        if "solc" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def catalog() -> Catalog:
    cat = installed_catalog()
    if cat is None:
        pytest.skip(f"${CATALOG_ENV} names no installed compiler")
    return cat


DETECTOR_CORPUS = FIXTURES / "detectors"


@dataclass(frozen=True)
class CorpusRun:
    name: str
    kind: str
    vulnerable: bool
    found: frozenset[str]
    seconds: float
    stages: dict


def corpus_files() -> list[Path]:
    return sorted(DETECTOR_CORPUS.glob("*.sol"))


@functools.lru_cache(maxsize=None)
def corpus_run(path: Path) -> CorpusRun:
    """Full pipeline over one corpus contract, cached for the session."""
    from snipcheck.pipeline import RunConfig, analyze_source

    kind, label, _ = path.stem.split("_")
    start = time.monotonic()
    report = analyze_source(path.read_text(), RunConfig(), id=path.name)
    return CorpusRun(path.name, kind, label == "vuln", frozenset(f.kind.value for f in report.findings),
                     time.monotonic() - start, dict(report.stages))


# ------------------------------------------------------------------ acceptance

ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


class Criterion:
    """Records one acceptance criterion's outcome for the summary."""

    def __init__(self, number: int, title: str) -> None:
        self.number, self.title = number, title
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self) -> Criterion:
        ACCEPTANCE[self.number] = ("RUN", self.title, "")
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        detail = "; ".join(self.details)
        if exc_type is None:
            ACCEPTANCE[self.number] = ("PASS", self.title, detail)
        elif issubclass(exc_type, pytest.skip.Exception):
            ACCEPTANCE[self.number] = ("SKIP", self.title, str(exc))
        else:
            ACCEPTANCE[self.number] = ("FAIL", self.title, f"{detail}; {exc}".lstrip("; "))
        return False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[number]
        line = f"{status} criterion {number}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
