"""Expected residual variance after cleaning.

This module provides EVar(T), the expected variance of a query once the objects in T are
revealed: by brute-force enumeration, by per-claim decomposition, in closed form for linear
queries, and by Monte Carlo estimation above the enumeration cap.
"""

import logging
import math
import threading
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..models.distributions import (
    DEFAULT_ENUMERATION_CAP,
    Dataset,
    DiscreteDist,
    ObjectRef,
    Realization,
    condition,
    draw,
    realization_grid,
    require_discrete,
)
from ..models.query import QueryFunction, QueryTerm
from ..utils.errors import (
    CurvatureUndefinedError,
    DependencyNotSupportedError,
    EnumerationCapError,
)
from ..utils.streams import philox, stream_key
from .instrumentation import SolverMetrics

log = logging.getLogger(__name__)

DEFAULT_MC_SAMPLES = 20000
CURVATURE_TOLERANCE = 1e-9
_EVAR_STREAM = stream_key("evar")


@dataclass(frozen=True)
class CurvatureReport:
    """Total curvature of EVar and whether it sits in the weak-guarantee regime."""

    kappa: float
    weak_guarantee: bool


def _whole_query(query: QueryFunction, dataset: Dataset) -> QueryTerm:
    scope = query.scope
    columns = list(scope)

    def fn(block: np.ndarray) -> np.ndarray:
        full = np.tile(dataset.current_values, (block.shape[0], 1))
        full[:, columns] = block
        return query.evaluate_many(full)

    return QueryTerm(scope, fn)


def expected_conditional_covariance(
    dataset: Dataset,
    cleaned: FrozenSet[int],
    first: QueryTerm,
    second: QueryTerm,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """E over cleaned values t of Cov(g, h | X_T = t) for two terms.

    Only the objects the two terms read are enumerated; the others cannot change either
    term.
    """
    union = sorted(set(first.scope) | set(second.scope))
    revealed = [i for i in union if i in cleaned]
    hidden = [i for i in union if i not in cleaned]
    revealed_dists = require_discrete(dataset, revealed)
    hidden_dists = require_discrete(dataset, hidden)

    grid, _ = realization_grid(revealed_dists + hidden_dists, cap)
    _, p_revealed = realization_grid(revealed_dists)
    _, p_hidden = realization_grid(hidden_dists)
    column = {position: k for k, position in enumerate(revealed + hidden)}
    shape = (p_revealed.shape[0], p_hidden.shape[0])

    g = first.fn(grid[:, [column[i] for i in first.scope]]).reshape(shape)
    g_centered = g - (g @ p_hidden)[:, None]
    if second is first:
        h_centered = g_centered
    else:
        h = second.fn(grid[:, [column[i] for i in second.scope]]).reshape(shape)
        h_centered = h - (h @ p_hidden)[:, None]
    return float(p_revealed @ ((g_centered * h_centered) @ p_hidden))


def conditional_variance(
    query: QueryFunction,
    dataset: Dataset,
    assignment: Realization,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """Variance of the query given the assigned values.

    Args:
        query: Query function
        dataset: Independent dataset
        assignment: Revealed values keyed by object position
        cap: Enumeration cap

    Returns:
        Var[f(X) | X_T = v]
    """
    conditioned = condition(dataset, assignment)
    whole = _whole_query(query, conditioned)
    return max(expected_conditional_covariance(conditioned, frozenset(), whole, whole, cap), 0.0)


def evar_bruteforce(
    query: QueryFunction,
    dataset: Dataset,
    subset: Iterable[ObjectRef],
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """EVar(T) by enumerating the query as a whole."""
    if not dataset.is_independent:
        raise DependencyNotSupportedError("enumeration requires independent objects")
    cleaned = frozenset(dataset.resolve(subset))
    whole = _whole_query(query, dataset)
    return max(expected_conditional_covariance(dataset, cleaned, whole, whole, cap), 0.0)


def evar_linear(weights: np.ndarray, dataset: Dataset, subset: Iterable[ObjectRef]) -> float:
    """Closed-form EVar of a linear query.

    Under independence this is sum_{i not in T} w_i^2 Var(X_i); with a covariance matrix it
    is sum_{i,j not in T} w_i w_j Cov(X_i, X_j).
    """
    cleaned = set(dataset.resolve(subset))
    hidden = [i for i in range(len(dataset)) if i not in cleaned]
    w = np.asarray(weights, dtype=float)[hidden]
    if dataset.covariance is not None:
        block = dataset.covariance[np.ix_(hidden, hidden)]
        return float(max(w @ block @ w, 0.0))
    return float(np.sum(w * w * dataset.variances[hidden]))


class EVarEvaluator:
    """Memoizing EVar oracle for one query and dataset.

    The cache is keyed by the sorted cleaned positions and is safe to share between
    threads; concurrent misses on the same key compute the same value. Each cached value
    remembers whether it is a Monte Carlo estimate, so callers sharing one evaluator learn
    about estimates only for the subsets they asked about.
    """

    def __init__(
        self,
        query: QueryFunction,
        dataset: Dataset,
        cap: int = DEFAULT_ENUMERATION_CAP,
        mc_samples: int = DEFAULT_MC_SAMPLES,
        mc_fallback: bool = True,
        seed: int = 0,
        metrics: Optional[SolverMetrics] = None,
    ) -> None:
        self.query = query
        self.dataset = dataset
        self.cap = cap
        self.mc_samples = mc_samples
        self.mc_fallback = mc_fallback
        self.seed = seed
        self.metrics = metrics
        self._warned = False
        self._weights = query.linear_form()
        self._terms = [term for term in query.terms if term.scope]
        self._pairs = [
            (a, b)
            for a in range(len(self._terms))
            for b in range(a + 1, len(self._terms))
            if set(self._terms[a].scope) & set(self._terms[b].scope)
        ]
        self._cache: Dict[Tuple[int, ...], Tuple[float, bool]] = {}
        self._term_cache: Dict[Tuple[int, int, Tuple[int, ...]], float] = {}
        self._lock = threading.Lock()

    def clear(self) -> None:
        with self._lock:
            self._cache.clear()
            self._term_cache.clear()

    def tracked(self) -> "TrackedEvaluator":
        """A view that records whether any of its own answers was estimated."""
        return TrackedEvaluator(self)

    def evaluate(self, subset: Iterable[ObjectRef]) -> float:
        """EVar of the cleaned set."""
        return self.evaluate_flagged(subset)[0]

    __call__ = evaluate

    def evaluate_flagged(self, subset: Iterable[ObjectRef]) -> Tuple[float, bool]:
        """EVar of the cleaned set and whether it is a Monte Carlo estimate."""
        key = self.dataset.resolve(subset)
        with self._lock:
            if key in self._cache:
                if self.metrics:
                    self.metrics.record_cache_hit()
                return self._cache[key]
        result = self._compute(frozenset(key))
        with self._lock:
            self._cache[key] = result
        return result

    def _compute(self, cleaned: FrozenSet[int]) -> Tuple[float, bool]:
        if self._weights is not None:
            self._record("linear")
            return evar_linear(self._weights, self.dataset, cleaned), False
        if not self.dataset.is_independent:
            raise DependencyNotSupportedError(
                "covariance-aware EVar is only available for linear queries"
            )
        try:
            value = self.decomposed(cleaned)
            self._record("decomposed")
            return value, False
        except EnumerationCapError as e:
            if not self.mc_fallback or self.mc_samples <= 0:
                raise
            self._engage_fallback(e)
            self._record("montecarlo")
            estimate = evar_montecarlo(
                self.query, self.dataset, cleaned, self.mc_samples, self.seed
            )
            return estimate, True

    def decomposed(self, cleaned: FrozenSet[int]) -> float:
        """Sum of per-term conditional variances and pairwise conditional covariances."""
        total = math.fsum(self._term_value(k, k, cleaned) for k in range(len(self._terms)))
        total += 2.0 * math.fsum(self._term_value(a, b, cleaned) for a, b in self._pairs)
        return max(total, 0.0)

    def _term_value(self, a: int, b: int, cleaned: FrozenSet[int]) -> float:
        first, second = self._terms[a], self._terms[b]
        union = set(first.scope) | set(second.scope)
        key = (a, b, tuple(sorted(union & cleaned)))
        with self._lock:
            if key in self._term_cache:
                return self._term_cache[key]
        value = expected_conditional_covariance(
            self.dataset, cleaned, first, second if b != a else first, self.cap
        )
        with self._lock:
            self._term_cache[key] = value
        return value

    def marginal_gain(self, subset: Sequence[ObjectRef], candidate: ObjectRef) -> float:
        """EVar(T) - EVar(T + candidate)."""
        return self.marginal_gain_flagged(subset, candidate)[0]

    def marginal_gain_flagged(
        self, subset: Sequence[ObjectRef], candidate: ObjectRef
    ) -> Tuple[float, bool]:
        """EVar(T) - EVar(T + candidate) and whether either side was estimated."""
        cleaned = set(self.dataset.resolve(subset))
        index = self.dataset.index_of(candidate)
        if index in cleaned:
            raise ValueError(f"candidate '{self.dataset.ids[index]}' is already cleaned")
        try:
            before, before_estimated = self.evaluate_flagged(cleaned)
            after, after_estimated = self.evaluate_flagged(cleaned | {index})
            return before - after, before_estimated or after_estimated
        except EnumerationCapError as e:
            if not self.mc_fallback or self.mc_samples <= 0:
                raise
            self._engage_fallback(e)
            self._record("montecarlo")
            gain = marginal_gain_montecarlo(
                self.query, self.dataset, cleaned, index, self.mc_samples, self.seed
            )
            return gain, True

    def _engage_fallback(self, error: EnumerationCapError) -> None:
        if not self._warned:
            log.warning(f"Falling back to Monte Carlo EVar estimates: {error}")
        self._warned = True

    def _record(self, mode: str) -> None:
        if self.metrics:
            self.metrics.record_evaluation(mode)


class TrackedEvaluator:
    """Per-caller view of a shared EVarEvaluator.

    ``approximate`` turns true once any value answered through this view was estimated,
    independently of what other callers of the shared evaluator asked for.
    """

    def __init__(self, evaluator: EVarEvaluator) -> None:
        self.evaluator = evaluator
        self.approximate = False

    def evaluate(self, subset: Iterable[ObjectRef]) -> float:
        value, estimated = self.evaluator.evaluate_flagged(subset)
        self.approximate = self.approximate or estimated
        return value

    __call__ = evaluate

    def marginal_gain(self, subset: Sequence[ObjectRef], candidate: ObjectRef) -> float:
        gain, estimated = self.evaluator.marginal_gain_flagged(subset, candidate)
        self.approximate = self.approximate or estimated
        return gain


def evar_decomposed(
    query: QueryFunction,
    dataset: Dataset,
    subset: Iterable[ObjectRef],
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """EVar(T) as a sum over claim terms and overlapping claim pairs."""
    if not dataset.is_independent:
        raise DependencyNotSupportedError("decomposition requires independent objects")
    evaluator = EVarEvaluator(query, dataset, cap=cap, mc_fallback=False)
    return evaluator.decomposed(frozenset(dataset.resolve(subset)))


def evar(
    query: QueryFunction,
    dataset: Dataset,
    subset: Iterable[ObjectRef],
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """EVar(T) by the cheapest exact method available."""
    return EVarEvaluator(query, dataset, cap=cap, mc_fallback=False).evaluate(subset)


def evar_complement(
    query: QueryFunction,
    dataset: Dataset,
    complement: Iterable[ObjectRef],
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """EVar of cleaning every object outside ``complement``."""
    left_out = set(dataset.resolve(complement))
    return evar(query, dataset, [i for i in range(len(dataset)) if i not in left_out], cap)


def marginal_gain(
    query: QueryFunction,
    dataset: Dataset,
    subset: Sequence[ObjectRef],
    candidate: ObjectRef,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """Decrease of EVar from additionally cleaning ``candidate``."""
    return EVarEvaluator(query, dataset, cap=cap, mc_fallback=False).marginal_gain(
        subset, candidate
    )


def curvature(
    query: QueryFunction,
    dataset: Dataset,
    evaluator: Optional[Callable[[Iterable[int]], float]] = None,
) -> CurvatureReport:
    """Total curvature 1 - min_i (EVar(empty) - EVar({i})) / EVar(O - {i}).

    Objects whose denominator is zero are skipped.

    Raises:
        CurvatureUndefinedError: If every denominator is zero
    """
    evaluate = evaluator or EVarEvaluator(query, dataset, mc_fallback=False).evaluate
    everything = set(range(len(dataset)))
    empty = evaluate([])
    ratios = []
    for i in sorted(everything):
        denominator = evaluate(everything - {i})
        if denominator <= 1e-12 * empty:
            continue
        ratios.append((empty - evaluate([i])) / denominator)
    if not ratios:
        raise CurvatureUndefinedError("EVar(O - {i}) is zero for every object")
    kappa = 1.0 - min(ratios)
    return CurvatureReport(kappa=kappa, weak_guarantee=kappa >= 1.0 - CURVATURE_TOLERANCE)


def moments(
    query: QueryFunction, dataset: Dataset, cap: int = DEFAULT_ENUMERATION_CAP
) -> Tuple[float, float]:
    """Mean and variance of the query under the dataset's uncertainty.

    Args:
        query: Query function
        dataset: Dataset, possibly conditioned on revealed values
        cap: Enumeration cap per term

    Returns:
        Tuple of (mean, variance)
    """
    weights = query.linear_form()
    if weights is not None:
        means = np.array([obj.dist.mean for obj in dataset.objects])
        return query.evaluate(means), evar_linear(weights, dataset, [])

    mean = query.offset
    for term in query.terms:
        grid, probs = realization_grid(require_discrete(dataset, term.scope), cap)
        mean += float(probs @ term.fn(grid))
    return mean, EVarEvaluator(query, dataset, cap=cap, mc_fallback=False).evaluate([])


def _draw_columns(
    dataset: Dataset, positions: Sequence[int], rng: np.random.Generator, samples: int
) -> np.ndarray:
    if not positions:
        return np.zeros((samples, 0))
    return np.stack([draw(dataset.objects[i].dist, rng, samples) for i in positions], axis=1)


def evar_montecarlo(
    query: QueryFunction,
    dataset: Dataset,
    subset: Iterable[ObjectRef],
    samples: int,
    seed: int,
) -> float:
    """Unbiased EVar estimate from paired draws sharing the cleaned values.

    Uses E[Var(f | t)] = E[(f(t, R) - f(t, R'))^2 / 2] with R, R' independent.
    """
    if not dataset.is_independent:
        raise DependencyNotSupportedError("Monte Carlo EVar requires independent objects")
    cleaned = set(dataset.resolve(subset))
    scope = list(query.scope)
    revealed = [i for i in scope if i in cleaned]
    hidden = [i for i in scope if i not in cleaned]
    rng = philox(seed, _EVAR_STREAM, stream_key(",".join(map(str, sorted(cleaned)))))

    base = np.tile(dataset.current_values, (samples, 1))
    base[:, revealed] = _draw_columns(dataset, revealed, rng, samples)
    first, second = base.copy(), base.copy()
    first[:, hidden] = _draw_columns(dataset, hidden, rng, samples)
    second[:, hidden] = _draw_columns(dataset, hidden, rng, samples)
    diff = query.evaluate_many(first) - query.evaluate_many(second)
    return float(np.mean(0.5 * diff * diff))


def marginal_gain_montecarlo(
    query: QueryFunction,
    dataset: Dataset,
    subset: Iterable[ObjectRef],
    candidate: ObjectRef,
    samples: int,
    seed: int,
) -> float:
    """Estimate of EVar(T) - EVar(T + candidate) with common random numbers.

    Draws are stratified over the candidate's support and come from a stream keyed by the
    run seed and the candidate id.
    """
    cleaned = set(dataset.resolve(subset))
    index = dataset.index_of(candidate)
    dist = dataset.objects[index].dist
    scope = [i for i in query.scope if i != index]
    revealed = [i for i in scope if i in cleaned]
    hidden = [i for i in scope if i not in cleaned]
    rng = philox(seed, stream_key(dataset.ids[index]))

    if isinstance(dist, DiscreteDist):
        strata: List[Tuple[Optional[float], float, int]] = [
            (value, prob, max(1, int(round(samples * prob)))) for value, prob in dist.support
        ]
    else:
        strata = [(None, 1.0, samples)]

    estimate = 0.0
    for value, weight, count in strata:
        base = np.tile(dataset.current_values, (count, 1))
        base[:, revealed] = _draw_columns(dataset, revealed, rng, count)
        fixed = np.full(count, value) if value is not None else draw(dist, rng, count)
        rest_a = _draw_columns(dataset, hidden, rng, count)
        rest_b = _draw_columns(dataset, hidden, rng, count)
        independent = draw(dist, rng, count)

        a, b, c = base.copy(), base.copy(), base.copy()
        a[:, index], a[:, hidden] = fixed, rest_a
        b[:, index], b[:, hidden] = independent, rest_b
        c[:, index], c[:, hidden] = fixed, rest_b
        fa, fb, fc = (query.evaluate_many(m) for m in (a, b, c))
        estimate += weight * float(np.mean(0.5 * (fa - fb) ** 2 - 0.5 * (fa - fc) ** 2))
    return estimate
