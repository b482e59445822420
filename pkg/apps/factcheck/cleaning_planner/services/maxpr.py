"""Deviation probability after cleaning.

This module provides the MaxPr objective: the probability that, once the cleaned objects are
revealed and every other object stays at its current value, the query falls more than tau
below its current value. The inequality is strict; atoms within a relative 1e-12 of the
threshold count as ties and are excluded.
"""

import logging
import math
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from ..models.distributions import (
    DEFAULT_ENUMERATION_CAP,
    Dataset,
    NormalSpec,
    ObjectRef,
    draw,
    realization_grid,
    require_discrete,
)
from ..models.query import QueryFunction
from ..utils.errors import DependencyNotSupportedError, IllPosedError, NonDiscreteError
from ..utils.streams import philox, stream_key

log = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12
MEANINGFUL_PROBABILITY = 0.05
MC_BLOCK = 8192
_MAXPR_STREAM = stream_key("maxpr")


def _threshold(query: QueryFunction, current: np.ndarray, tau: float) -> float:
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    threshold = query.evaluate(current) - tau
    return threshold - TIE_TOLERANCE * max(1.0, abs(threshold))


def _current(dataset: Dataset, u: Optional[Sequence[float]]) -> np.ndarray:
    return dataset.current_values if u is None else np.asarray(u, dtype=float)


def maxpr_exact(
    query: QueryFunction,
    dataset: Dataset,
    u: Optional[Sequence[float]] = None,
    subset: Iterable[ObjectRef] = (),
    tau: float = 0.0,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """Exact Pr[f(X) < f(u) - tau] with uncleaned objects pinned at u.

    Args:
        query: Query function
        dataset: Independent dataset
        u: Current values; the dataset's current values when omitted
        subset: Cleaned objects; those the query reads must be discrete
        tau: Deviation margin, >= 0
        cap: Enumeration cap

    Returns:
        Probability in [0, 1]; 0 for an empty subset
    """
    if not dataset.is_independent:
        raise DependencyNotSupportedError("exact MaxPr requires independent objects")
    current = _current(dataset, u)
    threshold = _threshold(query, current, tau)
    cleaned = [i for i in dataset.resolve(subset) if i in query.scope]

    grid, probs = realization_grid(require_discrete(dataset, cleaned), cap)
    full = np.tile(current, (grid.shape[0], 1))
    full[:, cleaned] = grid
    hits = query.evaluate_many(full) < threshold
    return float(min(max(math.fsum(probs[hits]), 0.0), 1.0))


def maxpr_normal_closed_form(
    weights: Sequence[float],
    sigmas: Sequence[float],
    subset: Iterable[int],
    tau: float,
    shift: Optional[Sequence[float]] = None,
    covariance: Optional[np.ndarray] = None,
) -> float:
    """Phi((-tau - m) / sqrt(S)) for a linear query over normal objects.

    S is sum_{i in T} a_i^2 sigma_i^2, or a_T' Cov_TT a_T when a covariance matrix is given.
    ``shift`` holds a_i (mu_i - u_i); it is zero for errors centered at the current values.

    Raises:
        IllPosedError: If S = 0 and the deviation sits exactly on the threshold
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    cleaned = sorted(set(int(i) for i in subset))
    a = np.asarray(weights, dtype=float)[cleaned]
    if covariance is not None:
        spread = float(a @ np.asarray(covariance)[np.ix_(cleaned, cleaned)] @ a)
    else:
        s = np.asarray(sigmas, dtype=float)[cleaned]
        spread = float(np.sum(a * a * s * s))
    offset = float(np.sum(np.asarray(shift, dtype=float)[cleaned])) if shift is not None else 0.0

    if spread <= 0.0:
        if offset == 0.0 and tau == 0.0:
            raise IllPosedError("zero spread with tau = 0 puts all mass on the threshold")
        return 1.0 if offset < -tau else 0.0
    return float(norm.cdf((-tau - offset) / math.sqrt(spread)))


def maxpr_value(
    query: QueryFunction,
    dataset: Dataset,
    subset: Iterable[ObjectRef],
    tau: float,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """MaxPr objective by closed form for normal objects, by enumeration otherwise."""
    cleaned = [i for i in dataset.resolve(subset) if i in query.scope]
    normals = [i for i in cleaned if isinstance(dataset.objects[i].dist, NormalSpec)]
    if not normals:
        return maxpr_exact(query, dataset.without_covariance(), None, cleaned, tau, cap)

    weights = query.linear_form()
    if weights is None or len(normals) != len(cleaned):
        raise NonDiscreteError(
            "normal objects need a linear query and an all-normal cleaned set; discretize first"
        )
    means = np.array([obj.dist.mean for obj in dataset.objects])
    return maxpr_normal_closed_form(
        weights,
        np.sqrt(dataset.variances),
        cleaned,
        tau,
        shift=weights * (means - dataset.current_values),
        covariance=dataset.covariance,
    )


def maxpr_montecarlo(
    query: QueryFunction,
    dataset: Dataset,
    u: Optional[Sequence[float]] = None,
    subset: Iterable[ObjectRef] = (),
    tau: float = 0.0,
    samples: int = 100000,
    seed: int = 0,
) -> Tuple[float, float]:
    """Sampled Pr[f(X) < f(u) - tau] with its binomial standard error.

    Draws are produced in blocks of ``MC_BLOCK``; each block has its own Philox key, so
    evaluating the blocks in parallel gives the same estimate as the serial loop.
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    current = _current(dataset, u)
    threshold = _threshold(query, current, tau)
    cleaned = [i for i in dataset.resolve(subset) if i in query.scope]

    hits = 0
    for block in range(math.ceil(samples / MC_BLOCK)):
        size = min(MC_BLOCK, samples - block * MC_BLOCK)
        rng = philox(seed, _MAXPR_STREAM, block)
        full = np.tile(current, (size, 1))
        if cleaned and dataset.covariance is not None:
            means = np.array([dataset.objects[i].dist.mean for i in cleaned])
            full[:, cleaned] = rng.multivariate_normal(
                means, dataset.covariance[np.ix_(cleaned, cleaned)], size=size
            )
        else:
            for i in cleaned:
                full[:, i] = draw(dataset.objects[i].dist, rng, size)
        hits += int(np.count_nonzero(query.evaluate_many(full) < threshold))

    estimate = hits / samples
    return estimate, math.sqrt(estimate * (1.0 - estimate) / samples)


def approximation_floor(x: float) -> float:
    """Phi(2x) / Phi(x).

    When the optimal deviation probability is Phi(x), a plan whose spread is at least a quarter
    of the optimum keeps at least this fraction of it.
    """
    return float(norm.cdf(2.0 * x) / norm.cdf(x))
