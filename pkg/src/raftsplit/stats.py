"""Empirical split-time distributions and their comparison with the model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from raftsplit.raft_sim import TrialOutcome
from raftsplit.split_model import SplitDistribution

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


class AllCensoredError(ValueError):
    """Every trial hit the step cap; there is no split time to summarize."""


@dataclass(frozen=True)
class EmpiricalCdf:
    """Right-continuous step CDF of uncensored split steps.

    Fractions are taken over *all* trials, censored ones included, so the
    curve estimates P(split <= n) without bias below the censoring step and
    ends at ``1 - censored_count / sample_count``.
    """

    steps: np.ndarray
    probabilities: np.ndarray
    sample_count: int
    censored_count: int

    def at(self, query) -> np.ndarray:
        return _step_eval(self.steps, self.probabilities, query)

    def mean(self) -> float:
        """Mean of the uncensored split steps implied by the curve."""
        jumps = np.diff(self.probabilities, prepend=0.0)
        return float(np.sum(self.steps * jumps) / self.probabilities[-1])


def empirical_cdf(outcomes: Sequence[TrialOutcome]) -> EmpiricalCdf:
    if not outcomes:
        raise ValueError("no outcomes")
    split = np.array([o.split_step for o in outcomes if not o.censored], dtype=np.int64)
    censored = len(outcomes) - len(split)
    if split.size == 0:
        raise AllCensoredError(f"all {len(outcomes)} trials were censored")
    steps, counts = np.unique(split, return_counts=True)
    return EmpiricalCdf(steps, np.cumsum(counts) / len(outcomes), len(outcomes), censored)


def _step_eval(steps: np.ndarray, probs: np.ndarray, query) -> np.ndarray:
    query = np.asarray(query)
    idx = np.searchsorted(steps, query, side="right") - 1
    return np.where(idx >= 0, probs[np.clip(idx, 0, None)], 0.0)


Curve = Union[EmpiricalCdf, SplitDistribution]


def _grid(c: Curve) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(c, EmpiricalCdf):
        return np.asarray(c.steps), np.asarray(c.probabilities)
    return np.arange(len(c.cdf)), np.asarray(c.cdf)


def ks_distance(a: Curve, b: Curve, upto: Optional[int] = None) -> float:
    """Sup |F_a - F_b| over the union of both step grids.

    Each curve is read as a right-continuous step function, holding its last
    value past its final step. ``upto`` limits the comparison to steps <= upto
    (use it to stay inside the uncensored range).
    """
    sa, pa = _grid(a)
    sb, pb = _grid(b)
    grid = np.union1d(sa, sb)
    if upto is not None:
        grid = grid[grid <= upto]
    if grid.size == 0:
        return 0.0
    return float(np.max(np.abs(_step_eval(sa, pa, grid) - _step_eval(sb, pb, grid))))


@dataclass(frozen=True)
class Summary:
    mean: float
    variance: float
    quantiles: Dict[float, float]
    count: int
    censored_count: int

    @property
    def standard_error(self) -> float:
        return float(np.sqrt(self.variance / self.count))


def summarize(outcomes: Sequence[TrialOutcome]) -> Summary:
    split = np.array([o.split_step for o in outcomes if not o.censored], dtype=float)
    censored = len(outcomes) - len(split)
    if split.size == 0:
        raise AllCensoredError("no uncensored outcomes to summarize")
    var = float(np.var(split, ddof=1)) if split.size > 1 else 0.0
    qs = np.quantile(split, QUANTILES)
    return Summary(
        mean=float(split.mean()),
        variance=var,
        quantiles={q: float(v) for q, v in zip(QUANTILES, qs)},
        count=int(split.size),
        censored_count=censored,
    )
