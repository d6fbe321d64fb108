from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from advisum.config import RunConfig

MOCK_ASSETS = [
    {"id": "a1", "source_uri": "synthetic:alpha?seed=1", "domain": "Finance",
     "tone": "Informative", "duration_s": 24},
    {"id": "a2", "source_uri": "synthetic:beta?seed=2", "domain": "Business",
     "tone": "Neutral", "duration_s": 18},
    {"id": "a3", "source_uri": "synthetic:gamma?seed=3", "domain": "Marketing",
     "tone": "Cautious", "duration_s": 15},
]


def write_manifest(path: Path, records=MOCK_ASSETS) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def manifest(tmp_path) -> Path:
    return write_manifest(tmp_path / "manifest.jsonl")


def small_config(seed: int = 7, **hyper) -> RunConfig:
    """Full pipeline config with a narrow ranker so tests stay fast."""
    return RunConfig.from_dict({
        "seed": seed,
        "hyper": {"m": 6, "k": 3, **hyper},
        "ranker": {"width": 16, "layers": 1, "heads": 2, "ffn": 32, "epochs": 5, "lr": 1e-3},
        "backends": {"image-embedder": "mock?dim=64&side=8", "text-embedder": "mock?dim=32"},
    })


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
