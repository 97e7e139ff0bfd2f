"""Acceptance criteria AC-1 .. AC-10, one PASS/FAIL line each.

The lines are printed as the checks run (visible with ``-s``) and repeated in
the terminal summary by ``conftest.py``.  Run this file directly for the lines
alone: ``python tests/test_acceptance.py``.
"""
import sys

import pytest

from moderate import acceptance as A

# tolerances and budgets (seconds) pinned from the acceptance table
PINNED = {
    "AC1_TARGETS": {0.0: (-0.5, 0.05), 1.0: (-1.0, 0.1)},
    "AC1_BUDGET": 30,
    "AC2_RECON_TOL": 1e-10,
    "AC2_EQUIV_FACTOR": 3.0,
    "AC2_STABILITY": 0.2,
    "AC2_BUDGET": 60,
    "AC3_TOL": 1e-8,
    "AC3_BUDGET": 5,
    "AC4_BAND": 0.3,
    "AC4_AGREE": 1e-6,
    "AC4_BUDGET": 60,
    "AC5_BUDGET": 600,
    "AC6_TARGET": -0.375,
    "AC6_TOL": 0.1,
    "AC6_BUDGET": 300,
    "AC7_TIMES": (0.1, 0.5, 1.0, 2.0, 5.0),
    "AC7_BUDGET": 1,
    "AC8_TOL": 1e-5,
    "AC8_PATHS": 10_000,
    "AC8_BUDGET": 180,
    "AC9_BUDGET": 600,
}

LINES: list[str] = []
_CACHE: dict = {}


def test_pinned_tolerances():
    for name, value in PINNED.items():
        assert getattr(A, name) == value, name


def test_pinned_plans():
    p5, p9 = A.ac5_plan(), A.ac9_plan()
    assert p5.N_list == [2**k for k in range(9, 16)] and p5.replicas == 4
    assert (p5.beta, p5.q, p5.lam, p5.delta, p5.d) == (0.4, 2, 0.75, 0.01, 1)
    assert p5.rho() == pytest.approx(0.09)
    assert p9.N_list == [2**k for k in range(10, 16)] and p9.replicas == 4
    assert (p9.beta, p9.q, p9.lam, p9.eta) == (0.3, 2, 0.6, 0.5)
    assert p9.rho() == pytest.approx(0.02)


@pytest.mark.parametrize("name", list(A.CRITERIA))
def test_criterion(name):
    # criteria run in order and share one cache: AC-9 reuses the AC-8 game, AC-10 the AC-5 report
    res = A.CRITERIA[name](_CACHE)
    LINES.append(res.line())
    print(res.line())
    assert res.passed, res.line()


if __name__ == "__main__":
    results = A.run_suite()
    sys.exit(0 if all(r.passed for r in results) else 1)
