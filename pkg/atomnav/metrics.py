"""
This file is part of atomnav, a toolkit for building sign-centric abstract top-view maps
and grounding navigational signs in them.

You should have received a copy of the Apache-2.0 license along with the code. If not,
see <https://opensource.org/licenses/Apache-2.0>
"""

from typing import Sequence

import numpy as np
from scipy.stats import binom


def success_rate(correct: Sequence[bool]) -> float:
    """Fraction of successful trials.

    Parameters
    ----------
    correct : Sequence[bool]
        One flag per trial.

    Returns
    -------
    float
        Success rate in [0, 1].

    Raises
    ------
    RuntimeError
        If there are no trials.
    """
    correct = np.asarray(correct, dtype=bool).flatten()
    if correct.size == 0:
        raise RuntimeError("The success rate of zero trials is not defined.")
    return float(correct.mean())


def majority_probability(p_correct: float, n: int) -> float:
    """Probability that more than half of `n` independent votes are correct.

    Lower bound of the accuracy of a plurality vote whose wrong votes scatter over
    several alternatives.
    """
    if not 0.0 <= p_correct <= 1.0:
        raise ValueError(f"p_correct must lie in [0, 1], got {p_correct}")
    if n < 1:
        raise ValueError(f"Need at least one vote, got n={n}")
    return float(binom.sf(n // 2, n, p_correct))
