"""Exhaustive search over cleaning plans."""

import logging
import math
from itertools import combinations
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from ..models.plan import CleaningPlan, build_plan
from ..utils.errors import InstanceTooLargeError

log = logging.getLogger(__name__)

MAX_OBJECTS = 25
TIE_TOLERANCE = 1e-12


def bruteforce_opt(
    objective: Callable[[Sequence[int]], float],
    costs: Sequence[float],
    budget: float,
    maximize: bool = False,
    ids: Optional[Sequence[str]] = None,
    max_objects: int = MAX_OBJECTS,
) -> CleaningPlan:
    """Best feasible plan by evaluating every subset within budget.

    Ties within a relative 1e-12 go to the cheaper plan, then to the lexicographically
    smaller id list.

    Args:
        objective: Maps sorted object positions to the objective value
        costs: Cleaning cost per object
        budget: Total budget
        maximize: Maximize instead of minimize
        ids: Object ids for the plan
        max_objects: Largest instance accepted

    Returns:
        Optimal CleaningPlan

    Raises:
        InstanceTooLargeError: If there are more than ``max_objects`` objects
    """
    costs = np.asarray(costs, dtype=float)
    n = len(costs)
    if n > max_objects:
        raise InstanceTooLargeError(
            f"exhaustive search over {n} objects exceeds the limit of {max_objects}"
        )
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    ids = list(ids) if ids is not None else [str(i) for i in range(n)]
    sign = -1.0 if maximize else 1.0

    best: Optional[Tuple[int, ...]] = None
    best_key: Tuple[float, float, list] = (math.inf, math.inf, [])
    evaluated = 0
    for size in range(n + 1):
        for subset in combinations(range(n), size):
            cost = math.fsum(costs[list(subset)])
            if cost > budget:
                continue
            value = sign * objective(list(subset))
            evaluated += 1
            names = sorted(ids[i] for i in subset)
            if best is not None:
                if abs(value - best_key[0]) <= TIE_TOLERANCE * max(1.0, abs(best_key[0])):
                    if (cost, names) >= (best_key[1], best_key[2]):
                        continue
                elif value > best_key[0]:
                    continue
            best, best_key = subset, (value, cost, names)

    assert best is not None
    log.debug(f"opt: evaluated {evaluated} feasible plans over {n} objects")
    return build_plan(
        list(best), [0.0] * len(best), costs, ids, sign * best_key[0], "opt"
    )
