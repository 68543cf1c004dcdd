"""Verification battery, one test per criterion.

The full battery takes a few minutes; set KF_ACCEPTANCE_SUITE=fast to
run the reduced-scale variant of every criterion instead.
"""

import os

import pytest

from kinetic_flow.acceptance import _CRITERIA, run_criterion
from kinetic_flow.errors import ValidationError

FAST = os.environ.get("KF_ACCEPTANCE_SUITE", "full").strip().lower() == "fast"

NAMES = {idx: name for idx, name, _ in _CRITERIA}


@pytest.mark.parametrize("index", sorted(NAMES))
def test_criterion(index):
    result = run_criterion(index, fast=FAST)
    assert result.name == NAMES[index]
    assert result.passed, (
        f"criterion {index} ({result.name}): measured {result.measured:.6g} "
        f"vs threshold {result.threshold:.6g}; {result.detail}"
    )


def test_criterion_index_validation():
    with pytest.raises(ValidationError):
        run_criterion(0)
    with pytest.raises(ValidationError):
        run_criterion(18)
