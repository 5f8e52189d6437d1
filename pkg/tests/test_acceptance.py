"""The thirteen acceptance criteria, each at its stated tolerance and runtime limit.

One pass/fail line per criterion is printed and repeated in the terminal summary.
"""

import pytest

from mechlab.acceptance import CRITERIA

SEED = 42
LINES: dict[int, str] = {}


@pytest.mark.slow
@pytest.mark.parametrize("cid", sorted(CRITERIA), ids=lambda c: f"criterion_{c:02d}")
def test_criterion(cid):
    row = CRITERIA[cid](SEED)
    LINES[cid] = row.line()
    print(row.line())
    assert row.criterion == cid
    assert row.passed, row.line()
