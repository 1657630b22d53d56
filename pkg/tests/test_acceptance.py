"""Acceptance criteria at their stated tolerances, one line printed per criterion.

Criterion 5 is expected to fail: the stated interpolation width
sqrt(eps t (1 - t) / 4) disagrees with the optimal eta_t, whose width is
sqrt(eps t (1 - t) / 2).  The test is left as stated; see the decisions ledger.
"""

import pytest

from debiasable.experiments import CRITERIA, run_criterion

SEED = 0


@pytest.mark.parametrize("crit", CRITERIA, ids=[f"{c.number:02d}-{c.name}" for c in CRITERIA])
def test_criterion(crit, capsys):
    result = run_criterion(crit, SEED)
    with capsys.disabled():
        print("\n" + result.summary_line())
    assert result.passed, "; ".join(result.failures)
