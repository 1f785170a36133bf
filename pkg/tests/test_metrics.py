"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

import numpy as np
import pytest

from atomnav.metrics import majority_probability, success_rate


def test_success_rate():
    assert success_rate([True, False, True, True]) == 0.75
    assert success_rate(np.ones((2, 3), dtype=bool)) == 1.0
    with pytest.raises(RuntimeError):
        success_rate([])


@pytest.mark.parametrize("p,n,expected", [(0.7, 7, 0.873964), (0.5, 1, 0.5), (1.0, 5, 1.0), (0.0, 3, 0.0)])
def test_majority_probability(p, n, expected):
    assert np.isclose(majority_probability(p, n), expected, atol=1e-6)


def test_majority_probability_rejects():
    with pytest.raises(ValueError):
        majority_probability(1.2, 3)
    with pytest.raises(ValueError):
        majority_probability(0.5, 0)
