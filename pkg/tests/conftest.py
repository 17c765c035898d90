"""Shared fixtures.

The heavy artifacts (toy denoiser weights, oracle label sweep, controller
models) are built once under .cache/run at the repo root and reused across
pytest runs; delete that directory to force a full rebuild. Everything in it
is deterministic given the seeds baked into the session config.
"""

from __future__ import annotations

from pathlib import Path

import pytest

from sgic import corpus, harness

CACHE_DIR = Path(__file__).resolve().parent.parent / ".cache" / "run"

_acceptance_lines: list[str] = []


def _record(name: str, passed: bool, detail: str = "") -> None:
    line = f"ACCEPTANCE {name}: {'PASS' if passed else 'FAIL'}"
    if detail:
        line += f" [{detail}]"
    _acceptance_lines.append(line)


@pytest.fixture
def acceptance():
    """Recorder for one-line acceptance verdicts, printed after the run."""
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def run_cfg() -> harness.RunConfig:
    return harness.RunConfig(out_dir=str(CACHE_DIR), denoiser_epochs=150)


@pytest.fixture(scope="session")
def trained(run_cfg):
    """Controller models trained on the toy corpus (oracle sweep cached)."""
    return harness.run_training(run_cfg)


@pytest.fixture(scope="session")
def pipeline(run_cfg, trained):
    return harness.build_pipeline(run_cfg)


@pytest.fixture(scope="session")
def toy_corpus():
    return corpus.build_corpus()


@pytest.fixture(scope="session")
def toy_embedder(toy_corpus):
    return corpus.corpus_embedder(toy_corpus)
