from __future__ import annotations

import re
import subprocess
import sys
import time

import pytest

from toytask.candidates import (
    crashing_candidate,
    good_candidate,
    silent_candidate,
    slow_candidate,
)
from toytask.data import ToyTaskSpec, generate_toy_data

METRIC_RE = re.compile(r"^SEPDD_METRIC ([A-Za-z0-9_.-]+)=([0-9.eE+-]+)$", re.MULTILINE)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("toydata")
    generate_toy_data(ToyTaskSpec(seed=5, n_train=400, n_val=200, difficulty=0.1), directory)
    return directory


def run_candidate(source: str, data_dir, *, debug: bool, timeout: float = 30.0):
    env = {"SEPDD_DATA_DIR": str(data_dir), "PATH": "/usr/bin:/bin"}
    if debug:
        env["SEPDD_DEBUG"] = "1"
    return subprocess.run(
        [sys.executable, "-c", source],
        capture_output=True,
        text=True,
        timeout=timeout,
        env=env,
    )


def metrics_of(stdout: str) -> dict[str, float]:
    return {name: float(value) for name, value in METRIC_RE.findall(stdout)}


class TestGoodCandidate:
    def test_debug_mode_fast_and_metric_complete(self, data_dir):
        started = time.monotonic()
        proc = run_candidate(good_candidate("v2"), data_dir, debug=True)
        elapsed = time.monotonic() - started
        assert proc.returncode == 0
        found = metrics_of(proc.stdout)
        assert set(found) == {"mAP50", "mAP50-95"}
        assert elapsed < 5.0

    def test_full_mode_metrics(self, data_dir):
        proc = run_candidate(good_candidate("v2"), data_dir, debug=False)
        found = metrics_of(proc.stdout)
        assert 0.9 <= found["mAP50"] <= 1.0
        assert 0.0 < found["mAP50-95"] <= found["mAP50"]

    def test_deterministic_to_six_places(self, data_dir):
        first = run_candidate(good_candidate("v1"), data_dir, debug=False)
        second = run_candidate(good_candidate("v1"), data_dir, debug=False)
        assert first.stdout == second.stdout

    def test_learned_variants_beat_the_weak_baseline(self, data_dir):
        # The generating rule needs both features; the one-feature draft
        # cannot reach the two-feature learners.
        scores = {}
        for variant in ("v0", "v1", "v2"):
            proc = run_candidate(good_candidate(variant), data_dir, debug=False)
            scores[variant] = metrics_of(proc.stdout)["mAP50"]
        assert scores["v0"] + 0.05 < scores["v1"]
        assert scores["v0"] + 0.05 < scores["v2"]

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            good_candidate("v9")


class TestFaultyCandidates:
    def test_crashing_exits_nonzero(self, data_dir):
        proc = run_candidate(crashing_candidate(), data_dir, debug=True)
        assert proc.returncode == 2
        assert "RuntimeError" in proc.stderr
        assert metrics_of(proc.stdout) == {}

    def test_silent_exits_zero_without_metrics(self, data_dir):
        proc = run_candidate(silent_candidate(), data_dir, debug=True)
        assert proc.returncode == 0
        assert metrics_of(proc.stdout) == {}

    def test_slow_exceeds_debug_budget(self, data_dir):
        with pytest.raises(subprocess.TimeoutExpired):
            run_candidate(slow_candidate(60.0), data_dir, debug=True, timeout=2.0)
