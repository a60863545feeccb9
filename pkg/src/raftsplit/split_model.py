"""Absorbing Markov chain model of follower candidacy and network split.

A follower's election counter is a chain on ``{stage, steps left}``. Each
heartbeat step the follower either misses the heartbeat (probability ``p``)
and its counter drops by one, or receives it and resets to the full count of
a uniformly chosen stage. Reaching zero is absorbing (the follower becomes a
candidate). All model quantities are in heartbeat steps.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field
from itertools import islice
from typing import Iterator, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import xlog1py, xlogy

from raftsplit import numerics

DEFAULT_EPSILON = 1e-9
DEFAULT_STEP_CAP = 5_000_000


class NonAbsorbingChainError(ValueError):
    """The chain never absorbs (loss rate 0), so absorption times are infinite."""


@dataclass(frozen=True)
class ModelParams:
    n_nodes: int
    loss_rate: float
    timeout_steps: Tuple[int, ...]
    heartbeat_interval_ms: float = 50.0

    def __post_init__(self):
        ks = self.timeout_steps
        if isinstance(ks, int):
            ks = (ks,)
        ks = tuple(int(k) for k in ks)
        if not ks:
            raise ValueError("timeout set must be nonempty")
        if len(set(ks)) != len(ks):
            raise ValueError(f"timeout set has duplicates: {ks}")
        if min(ks) < 1:
            raise ValueError(f"timeout steps must be >= 1: {ks}")
        object.__setattr__(self, "timeout_steps", tuple(sorted(ks)))
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 3:
            raise ValueError(f"n_nodes must be an integer >= 3, got {self.n_nodes}")
        object.__setattr__(self, "n_nodes", int(self.n_nodes))
        _check_probability(self.loss_rate)
        if not self.heartbeat_interval_ms > 0:
            raise ValueError("heartbeat interval must be positive")

    @classmethod
    def from_timeout_range(cls, n_nodes, loss_rate, a_ms, b_ms, heartbeat_interval_ms=50.0):
        """Map a raw timeout range [a, b] in ms to the step set floor(a/h)..floor(b/h)."""
        if a_ms > b_ms:
            raise ValueError("timeout range must satisfy a <= b")
        lo = math.floor(a_ms / heartbeat_interval_ms)
        hi = math.floor(b_ms / heartbeat_interval_ms)
        return cls(n_nodes, loss_rate, tuple(range(lo, hi + 1)), heartbeat_interval_ms)

    @property
    def n_followers(self) -> int:
        return self.n_nodes - 1

    @property
    def split_threshold(self) -> int:
        """Candidates among the followers needed for a split."""
        return self.n_nodes // 2 + 1


def _check_probability(p):
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"probability must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class TransitionMatrix:
    full: np.ndarray
    q_block: np.ndarray
    r_block: np.ndarray
    transient_count: int
    absorbing_count: int
    initial_distribution: np.ndarray
    loss_rate: float
    timeouts: Tuple[int, ...]
    reset_states: Tuple[int, ...]


def build_multi_timeout_chain(timeouts: Sequence[int], loss_rate: float) -> TransitionMatrix:
    """Canonical-form chain for a set of timeout values.

    Transient states are ordered stage by stage; within stage ``i`` the first
    state is the freshly reset counter ``K_i`` and the last is counter 1.
    The ``r`` absorbing states follow, one per stage.
    """
    if isinstance(timeouts, int):
        timeouts = (timeouts,)
    ks = tuple(int(k) for k in timeouts)
    if not ks or min(ks) < 1 or len(set(ks)) != len(ks) or list(ks) != sorted(ks):
        raise ValueError(f"timeouts must be a nonempty ascending set of counts >= 1, got {timeouts}")
    _check_probability(loss_rate)
    p = float(loss_rate)
    r = len(ks)
    t = sum(ks)
    offsets = np.concatenate([[0], np.cumsum(ks)[:-1]]).astype(int)
    full = np.zeros((t + r, t + r))
    for stage, (k, off) in enumerate(zip(ks, offsets)):
        for pos in range(k):
            row = off + pos
            full[row, offsets] += (1.0 - p) / r
            if pos == k - 1:
                full[row, t + stage] += p
            else:
                full[row, row + 1] += p
    full[t:, t:] = np.eye(r)
    init = np.zeros(t + r)
    init[offsets] = 1.0 / r
    return TransitionMatrix(
        full=full,
        q_block=full[:t, :t].copy(),
        r_block=full[:t, t:].copy(),
        transient_count=t,
        absorbing_count=r,
        initial_distribution=init,
        loss_rate=p,
        timeouts=ks,
        reset_states=tuple(int(o) for o in offsets),
    )


def build_single_timeout_chain(k: int, loss_rate: float) -> TransitionMatrix:
    """(K+1)x(K+1) chain: row i has 1-p in column 1 and p in column i+1."""
    if int(k) != k or k < 1:
        raise ValueError(f"timeout must be an integer >= 1, got {k}")
    return build_multi_timeout_chain((int(k),), loss_rate)


def build_chain(params: ModelParams) -> TransitionMatrix:
    return build_multi_timeout_chain(params.timeout_steps, params.loss_rate)


@dataclass(frozen=True)
class AbsorptionCurve:
    """Probability that a follower has become candidate by step n, for n = 0, 1, ..."""

    values: np.ndarray

    def __len__(self):
        return len(self.values)

    def __getitem__(self, n):
        return self.values[n]

    @property
    def max_step(self) -> int:
        return len(self.values) - 1


def _iter_recurrence(k: int, p: float) -> Iterator[float]:
    pk = p**k
    inc = (1.0 - p) * pk
    vals = array("d")
    n = 0
    while True:
        if n < k:
            v = 0.0
        elif n == k:
            v = pk
        else:
            lag = n - k - 1
            v = vals[n - 1] + (1.0 - (vals[lag] if lag >= 0 else 0.0)) * inc
        vals.append(v)
        yield v
        n += 1


def absorption_curve_recurrence(
    k: Union[int, Sequence[int]], loss_rate: float, max_step: int
) -> AbsorptionCurve:
    """Absorption curve of the single-timeout chain by the lagged recurrence.

    ``a[n] = a[n-1] + (1 - a[n-K-1]) (1-p) p^K`` for n > K, with ``a[K] = p^K``
    and zeros before. Only defined for one timeout value.
    """
    if not isinstance(k, (int, np.integer)):
        ks = tuple(k)
        if len(ks) != 1:
            raise ValueError(
                "the recurrence only covers a single timeout value; "
                "use absorption_curve_matrix for timeout sets"
            )
        k = ks[0]
    if k < 1:
        raise ValueError("timeout must be >= 1")
    _check_probability(loss_rate)
    vals = np.fromiter(islice(_iter_recurrence(int(k), float(loss_rate)), max_step + 1), float)
    return AbsorptionCurve(vals)


def _iter_matrix(chain: TransitionMatrix) -> Iterator[float]:
    t = chain.transient_count
    for v in numerics.iter_propagate(chain.initial_distribution, chain.full):
        yield float(v[t:].sum())


def absorption_curve_matrix(chain: TransitionMatrix, max_step: int) -> AbsorptionCurve:
    """Absorbed mass after propagating the initial distribution n steps; any r."""
    vals = np.fromiter(islice(_iter_matrix(chain), max_step + 1), float)
    return AbsorptionCurve(vals)


def absorption_curve(params: ModelParams, max_step: int) -> AbsorptionCurve:
    if len(params.timeout_steps) == 1:
        return absorption_curve_recurrence(params.timeout_steps[0], params.loss_rate, max_step)
    return absorption_curve_matrix(build_chain(params), max_step)


def _kahan_sum(terms: np.ndarray) -> np.ndarray:
    """Compensated sum along axis 0."""
    total = np.zeros(terms.shape[1:])
    comp = np.zeros(terms.shape[1:])
    for row in terms:
        y = row - comp
        s = total + y
        comp = (s - total) - y
        total = s
    return total


def _monotone_cdf(cdf: np.ndarray) -> np.ndarray:
    # round-off only; the exact CDF is nondecreasing in [0, 1]
    return np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))


_CHUNK = 1 << 18


def _chunked(fn):
    """Apply an elementwise tail computation in slices to bound memory."""

    def wrapper(a: np.ndarray, n_nodes: int):
        if a.size <= _CHUNK:
            return fn(a, n_nodes)
        parts = [fn(a[i:i + _CHUNK], n_nodes) for i in range(0, a.size, _CHUNK)]
        return tuple(np.concatenate(x) for x in zip(*parts))

    return wrapper


@_chunked
def _binomial_tails(a: np.ndarray, n_nodes: int):
    f = n_nodes - 1
    cut = n_nodes // 2
    m = np.arange(f + 1, dtype=float)[:, None]
    log_binom = np.array(
        [math.lgamma(f + 1) - math.lgamma(i + 1) - math.lgamma(f - i + 1) for i in range(f + 1)]
    )[:, None]
    terms = np.exp(log_binom + xlogy(m, a[None, :]) + xlog1py(f - m, -a[None, :]))
    lower = _kahan_sum(terms[: cut + 1])
    upper = _kahan_sum(terms[cut + 1 :]) if cut < f else np.zeros_like(a)
    return lower, upper


def binomial_split_cdf(a, n_nodes: int) -> np.ndarray:
    """P(at least floor(N/2)+1 of the N-1 followers are candidates) given per-follower a."""
    a = np.asarray(a, dtype=float)
    lower, upper = _binomial_tails(a, n_nodes)
    # take whichever side avoids cancellation
    cdf = np.where(upper < 0.5, upper, 1.0 - lower)
    return _monotone_cdf(cdf)


def binomial_split_survival(a, n_nodes: int) -> np.ndarray:
    """1 - split CDF, summed directly so tiny tails keep their relative accuracy."""
    a = np.asarray(a, dtype=float)
    lower, upper = _binomial_tails(a, n_nodes)
    return np.clip(np.where(lower < 0.5, lower, 1.0 - upper), 0.0, 1.0)


def poisson_split_cdf(a, n_nodes: int) -> np.ndarray:
    """Poisson approximation of the split CDF with rate (N-1)a (uses e^{-rate})."""
    (cdf,) = _poisson_cdf(np.asarray(a, dtype=float), n_nodes)
    return _monotone_cdf(cdf)


@_chunked
def _poisson_cdf(a: np.ndarray, n_nodes: int):
    # where the retained mass dominates, the upper tail is summed directly; the
    # series is cut ~40 standard deviations past the threshold
    lam = (n_nodes - 1) * a
    cut = n_nodes // 2
    m = np.arange(cut + 1, dtype=float)[:, None]
    log_fact = np.array([math.lgamma(i + 1) for i in range(cut + 1)])[:, None]
    lower = _kahan_sum(np.exp(xlogy(m, lam[None, :]) - lam[None, :] - log_fact))
    cdf = 1.0 - lower
    small = lower >= 0.5
    if np.any(small):
        # lower >= 1/2 implies rate <= cut + 1, so this span covers the tail
        span = 50 + 40 * math.ceil(math.sqrt(cut + 1))
        mu = np.arange(cut + 1, cut + 1 + span, dtype=float)[:, None]
        log_fact_u = np.array([math.lgamma(i + 1) for i in range(cut + 1, cut + 1 + span)])[:, None]
        ls = lam[small][None, :]
        cdf[small] = _kahan_sum(np.exp(xlogy(mu, ls) - ls - log_fact_u))
    return (cdf,)


class SplitMoments(NamedTuple):
    mean_steps: float
    variance_steps: float
    truncation_step: int
    truncated_tail_mass: float
    truncated: bool


def moments_from_cdf(cdf: np.ndarray, epsilon: float = DEFAULT_EPSILON,
                     step_cap: int = DEFAULT_STEP_CAP) -> SplitMoments:
    """Mean and variance of a step-indexed CDF, cut where the tail drops below epsilon.

    ``truncated`` is set when no step up to ``step_cap`` (or the end of the
    available CDF) brings the tail below epsilon.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if step_cap < 1:
        raise ValueError("step_cap must be >= 1")
    cdf = np.asarray(cdf, dtype=float)[: step_cap + 1]
    tail = 1.0 - cdf
    below = np.flatnonzero(tail < epsilon)
    if below.size:
        stop = int(below[0])
        truncated = False
    else:
        stop = len(cdf) - 1
        truncated = True
    cdf = cdf[: stop + 1]
    pdf = np.diff(cdf, prepend=0.0)
    n = np.arange(stop + 1, dtype=float)
    mean = float(np.sum(1.0 - cdf))
    second = float(np.sum(n * n * pdf))
    return SplitMoments(mean, max(second - mean * mean, 0.0), stop, float(1.0 - cdf[-1]), truncated)


@dataclass(frozen=True)
class SplitDistribution:
    cdf: np.ndarray
    pdf: np.ndarray
    mean_steps: float
    variance_steps: float
    truncation_step: int
    truncated_tail_mass: float
    truncated: bool = False

    @property
    def steps(self) -> np.ndarray:
        return np.arange(len(self.cdf))


def _distribution(cdf: np.ndarray, epsilon: float, step_cap: int) -> SplitDistribution:
    mom = moments_from_cdf(cdf, epsilon, step_cap)
    cdf = cdf[: mom.truncation_step + 1]
    return SplitDistribution(
        cdf=cdf,
        pdf=np.diff(cdf, prepend=0.0),
        mean_steps=mom.mean_steps,
        variance_steps=mom.variance_steps,
        truncation_step=mom.truncation_step,
        truncated_tail_mass=mom.truncated_tail_mass,
        truncated=mom.truncated,
    )


def split_cdf(curve: AbsorptionCurve, n_nodes: int, epsilon: float = DEFAULT_EPSILON,
              step_cap: int = DEFAULT_STEP_CAP) -> SplitDistribution:
    """Binomial split-time distribution over the steps covered by ``curve``."""
    if n_nodes < 3:
        raise ValueError("n_nodes must be >= 3")
    return _distribution(binomial_split_cdf(curve.values, n_nodes), epsilon, step_cap)


def split_cdf_poisson(curve: AbsorptionCurve, n_nodes: int, epsilon: float = DEFAULT_EPSILON,
                      step_cap: int = DEFAULT_STEP_CAP) -> SplitDistribution:
    if n_nodes < 3:
        raise ValueError("n_nodes must be >= 3")
    return _distribution(poisson_split_cdf(curve.values, n_nodes), epsilon, step_cap)


def split_moments(curve: AbsorptionCurve, n_nodes: int, epsilon: float = DEFAULT_EPSILON,
                  step_cap: int = DEFAULT_STEP_CAP) -> SplitMoments:
    return moments_from_cdf(binomial_split_cdf(curve.values, n_nodes), epsilon, step_cap)


def expected_candidates(curve: AbsorptionCurve, n_nodes: int, step: int) -> float:
    return (n_nodes - 1) * float(curve[step])


def expected_replies(curve: AbsorptionCurve, n_nodes: int, step: int) -> float:
    """Expected followers still answering the leader at ``step``."""
    return (n_nodes - 1) * (1.0 - float(curve[step]))


@dataclass(frozen=True)
class FundamentalMatrix:
    n_matrix: np.ndarray
    expected_heartbeats: float
    time_to_candidate_steps: float
    mean_receipt_interval_steps: float


def fundamental_matrix(chain: TransitionMatrix) -> FundamentalMatrix:
    """N = (I - Q)^-1 and the heartbeat/candidacy expectations derived from it.

    With a single timeout these are n_11, the first row sum of N, and their
    ratio. For timeout sets every quantity is averaged over the initial
    distribution, and heartbeats count visits to any reset state.
    """
    if chain.loss_rate == 0.0:
        raise NonAbsorbingChainError(
            "loss rate 0: heartbeats are never missed, the follower never becomes "
            "candidate and I - Q is singular"
        )
    t = chain.transient_count
    n_mat = numerics.absorbing_inverse(chain.q_block, chain.r_block.sum(axis=1))
    weighted = chain.initial_distribution[:t] @ n_mat
    heartbeats = float(weighted[list(chain.reset_states)].sum())
    t_c = float(weighted.sum())
    return FundamentalMatrix(
        n_matrix=n_mat,
        expected_heartbeats=heartbeats,
        time_to_candidate_steps=t_c,
        mean_receipt_interval_steps=t_c / heartbeats,
    )


def expected_heartbeats(chain: TransitionMatrix) -> float:
    return fundamental_matrix(chain).expected_heartbeats


def expected_time_to_candidate(chain: TransitionMatrix) -> float:
    return fundamental_matrix(chain).time_to_candidate_steps


def mean_heartbeat_interval(chain: TransitionMatrix) -> float:
    return fundamental_matrix(chain).mean_receipt_interval_steps


@dataclass
class Analysis:
    params: ModelParams
    curve: AbsorptionCurve
    binomial: SplitDistribution
    poisson: SplitDistribution
    fundamental: Optional[FundamentalMatrix] = field(default=None)


def _curve_stream(params: ModelParams) -> Iterator[float]:
    if len(params.timeout_steps) == 1:
        return _iter_recurrence(params.timeout_steps[0], params.loss_rate)
    return _iter_matrix(build_chain(params))


def analyze(params: ModelParams, epsilon: float = DEFAULT_EPSILON,
            step_cap: int = DEFAULT_STEP_CAP, min_steps: int = 0) -> Analysis:
    """Evaluate the model until the split tail drops below ``epsilon`` or ``step_cap``.

    The absorption curve is extended in doubling chunks. With loss rate 0
    there is no absorption and :class:`NonAbsorbingChainError` is raised.
    """
    if params.loss_rate == 0.0:
        raise NonAbsorbingChainError(
            "loss rate 0: no follower ever becomes candidate, split time is infinite"
        )
    stream = _curve_stream(params)
    vals = np.fromiter(islice(stream, min(step_cap, max(1024, min_steps)) + 1), float)
    while True:
        cdf = binomial_split_cdf(vals, params.n_nodes)
        done = 1.0 - cdf[-1] < epsilon and len(vals) > min_steps
        if done or len(vals) > step_cap:
            break
        more = min(len(vals), step_cap + 1 - len(vals))
        vals = np.concatenate([vals, np.fromiter(islice(stream, more), float)])
    curve = AbsorptionCurve(vals)
    fm = fundamental_matrix(build_chain(params))
    return Analysis(
        params=params,
        curve=curve,
        binomial=split_cdf(curve, params.n_nodes, epsilon, step_cap),
        poisson=split_cdf_poisson(curve, params.n_nodes, epsilon, step_cap),
        fundamental=fm,
    )
