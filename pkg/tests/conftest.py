import datetime as dt
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

D0 = dt.date(2020, 2, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def day(i: int) -> dt.date:
    return D0 + dt.timedelta(days=int(i))


CONFIGS = Path(__file__).resolve().parents[1] / "configs"

FULL_PIPELINE = [
    ["simulate", "--scenario", str(CONFIGS / "ensemble.toml")],
    ["rt"],
    ["fda", "smooth"],
    ["fda", "fcc"],
    ["fda", "register"],
    ["fof"],
    ["delay"],
    ["report"],
]


def run_full_pipeline(out: Path) -> Path:
    """Every stage of the synthetic ensemble run, through the command line."""
    from epimob.cli import main

    for argv in FULL_PIPELINE:
        code = main([*argv, "--config", str(CONFIGS / "ensemble.toml"), "--out", str(out)])
        assert code == 0, f"stage {argv} exited with {code}"
    return out


@pytest.fixture(scope="session")
def pipeline_runs(tmp_path_factory):
    """Two independent runs of the full pipeline with the same seed."""
    base = tmp_path_factory.mktemp("pipeline")
    return run_full_pipeline(base / "a"), run_full_pipeline(base / "b")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
