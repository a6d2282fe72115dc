"""Shared fixtures plus the acceptance-criteria summary printed after a run."""

import numpy as np
import pytest

# number -> (passed, note); filled in by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}

CRITERIA = {
    1: "cost model reproduces the reference totals at 192x256/256x256/96x96 within 1%",
    2: "headline ratios: params >4x, FLOPs >2x, GPU-Net/U-Net FLOP share within 3% of 0.3576",
    3: "analytic parameter counts equal instantiated weight counts exactly",
    4: "exact compression ratio within 5% of s for c >= 64, s in 2..8, k=d=3",
    5: "gradient checks: primitives+blocks < 1e-3 (f32) / 1e-6 (f64), model < 1e-2, under 5 min",
    6: "metrics equal set-based oracle on 200 random pairs; worked 4x4 gives 0.75/0.5/0.3333",
    7: "all three models reach val JS >= 0.85 within 15 epochs on synthetic shapes, < 30 min",
    8: "seeded training runs produce bitwise-identical checkpoints; round-trip is bitwise",
    9: "degenerate cases: ghost s=1 == conv, GP with unit bank == ghost, identity slots exact",
}


def record_criterion(number: int, passed: bool, note: str = "") -> None:
    ACCEPTANCE_RESULTS[number] = (bool(passed), note)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        if number in ACCEPTANCE_RESULTS:
            passed, note = ACCEPTANCE_RESULTS[number]
            verdict = "pass" if passed else "FAIL"
        else:
            verdict, note = "FAIL", "criterion test errored before recording a result"
        line = f"criterion {number}: {verdict} — {CRITERIA[number]}"
        if note:
            line += f" [{note}]"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
