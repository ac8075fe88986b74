"""Acceptance criteria 1-11 at full scale; one PASS/FAIL line is printed per criterion."""
import pytest

from levyld.acceptance import CRITERIA, default_model


@pytest.fixture(scope="module")
def model():
    return default_model()


@pytest.mark.parametrize("number", range(1, len(CRITERIA) + 1))
def test_criterion(number, model, capsys):
    res = CRITERIA[number - 1](model)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.details
    assert res.runtime < res.budget, f"over time budget: {res.runtime:.1f}s > {res.budget:.0f}s"
