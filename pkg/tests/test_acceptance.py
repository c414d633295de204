"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
from __future__ import annotations

import pytest

from sparse_game.acceptance import CRITERIA, run_criterion


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda c: f"c{c.number:02d}")
def test_criterion(criterion, capsys):
    outcome = run_criterion(criterion)
    with capsys.disabled():
        print("\n" + outcome.line() + f" ({outcome.seconds:.2f}s, limit {outcome.time_limit:g}s)")
    assert outcome.passed, outcome.detail


def test_injected_theta_is_flagged():
    from sparse_game.acceptance import run_all
    (outcome,) = run_all(inject_theta=0.9, only={4})
    assert not outcome.passed
    assert "theta*" in outcome.detail
