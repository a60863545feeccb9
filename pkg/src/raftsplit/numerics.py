"""Small dense linear algebra for absorbing-chain analysis.

Matrices are plain 2-D ``float64`` numpy arrays. Everything here is a pure
function of its inputs.
"""

from __future__ import annotations

from itertools import islice
from typing import Iterator, List

import numpy as np

PIVOT_TOL = 1e-12
STOCHASTIC_TOL = 1e-12


class SingularMatrixError(ValueError):
    """Raised when elimination meets a pivot below ``PIVOT_TOL``."""


def as_matrix(a) -> np.ndarray:
    m = np.array(a, dtype=float)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def identity(n: int) -> np.ndarray:
    return np.eye(n)


def mat_mul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def mat_inverse(a) -> np.ndarray:
    """Gauss-Jordan inverse with partial pivoting.

    Raises :class:`SingularMatrixError` if any pivot magnitude falls below
    ``PIVOT_TOL``.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError(f"cannot invert non-square matrix of shape {a.shape}")
    aug = np.hstack([a, np.eye(n)])
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(aug[col:, col])))
        pivot = aug[pivot_row, col]
        if abs(pivot) < PIVOT_TOL:
            raise SingularMatrixError(
                f"matrix is singular to working precision (pivot {pivot:.3e} in column {col})"
            )
        if pivot_row != col:
            aug[[col, pivot_row]] = aug[[pivot_row, col]]
        aug[col] /= aug[col, col]
        factors = aug[:, col].copy()
        factors[col] = 0.0
        aug -= np.outer(factors, aug[col])
    return aug[:, n:]


def absorbing_inverse(q, exit_prob=None) -> np.ndarray:
    """(I - Q)^-1 for a substochastic Q, without subtractive cancellation.

    ``exit_prob[i]`` is the one-step probability of leaving the transient set
    from state i (defaults to ``1 - Q.sum(1)``; pass it explicitly when it is
    known exactly). Elimination runs without pivoting and every diagonal of
    the remaining Schur complement is rebuilt as exit mass plus the magnitude
    of its off-diagonals, so all intermediate quantities are sums of
    nonnegative terms (the Grassmann-Taksar-Heyman idea). The result keeps high
    relative accuracy even when I - Q is badly conditioned.
    """
    q = as_matrix(q)
    n = q.shape[0]
    if q.shape[1] != n:
        raise ValueError("matrix must be square")
    if np.any(q < 0):
        raise ValueError("matrix must be nonnegative")
    if exit_prob is None:
        exit_prob = np.clip(1.0 - q.sum(axis=1), 0.0, None)
    exit_prob = np.asarray(exit_prob, dtype=float).copy()
    # off-diagonal magnitudes of I - Q; diagonal handled via exit mass
    off = q.copy()
    np.fill_diagonal(off, 0.0)
    lower = np.zeros((n, n))
    diag = np.zeros(n)
    for k in range(n):
        diag[k] = exit_prob[k] + off[k, k + 1:].sum()
        if not diag[k] > 0.0:
            raise SingularMatrixError(f"no escape from transient state {k}; I - Q is singular")
        mult = off[k + 1:, k] / diag[k]
        lower[k + 1:, k] = mult
        off[k + 1:, k + 1:] += np.outer(mult, off[k, k + 1:])
        exit_prob[k + 1:] += mult * exit_prob[k]
    # I - Q = L U with unit L (-lower below the diagonal) and U = diag - upper(off)
    upper = np.triu(off, 1)
    inv = np.zeros((n, n))
    eye = np.eye(n)
    for col in range(n):
        y = eye[:, col].copy()
        for i in range(n):
            y[i] += lower[i, :i] @ y[:i]
        x = np.zeros(n)
        for i in range(n - 1, -1, -1):
            x[i] = (y[i] + upper[i, i + 1:] @ x[i + 1:]) / diag[i]
        inv[:, col] = x
    return inv


def is_row_stochastic(p, tol: float = STOCHASTIC_TOL) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(np.all(p >= -tol) and np.all(np.abs(p.sum(axis=1) - 1.0) <= tol))


def _check_chain(v, p_matrix):
    p_matrix = as_matrix(p_matrix)
    v = np.asarray(v, dtype=float)
    if p_matrix.shape[0] != p_matrix.shape[1]:
        raise ValueError("transition matrix must be square")
    if v.shape != (p_matrix.shape[0],):
        raise ValueError(f"vector length {v.shape} does not match matrix {p_matrix.shape}")
    if not is_row_stochastic(p_matrix):
        raise ValueError("transition matrix is not row-stochastic")
    return v, p_matrix


def iter_propagate(v, p_matrix) -> Iterator[np.ndarray]:
    """Yield v, vP, vP^2, ... indefinitely."""
    cur, p_matrix = _check_chain(v, p_matrix)
    cur = cur.copy()
    while True:
        yield cur
        cur = cur @ p_matrix


def propagate(v, p_matrix, steps: int) -> List[np.ndarray]:
    """Return ``[v, vP, vP^2, ..., vP^steps]``.

    P^n itself is never formed; each step is one vector-matrix product.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    return list(islice(iter_propagate(v, p_matrix), steps + 1))


def spectral_radius_bound(q, max_power: int = 1 << 20) -> float:
    """Upper bound on the spectral radius of a nonnegative square matrix.

    Uses rho(Q) <= ||Q^m||_inf^(1/m), valid for every m and tending to rho(Q)
    as m grows. Powers m = 1, 2, 4, ... are formed by repeated squaring with a
    running log-scale so entries neither underflow nor overflow; the smallest
    bound seen is returned.
    """
    q = as_matrix(q)
    if q.shape[0] != q.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(q < 0):
        raise ValueError("matrix must be nonnegative")
    power = q.copy()
    log_scale = 0.0  # Q^m == power * exp(log_scale)
    m = 1
    best = np.inf
    while True:
        norm = float(power.sum(axis=1).max())
        if norm == 0.0:
            return 0.0
        best = min(best, float(np.exp((np.log(norm) + log_scale) / m)))
        if m >= max_power:
            return best
        power = power / norm
        log_scale += np.log(norm)
        power = power @ power
        log_scale *= 2.0
        m *= 2


def verify_transience(q, tolerance: float = 1e-12, max_power: int = 1 << 50) -> bool:
    """True iff every entry of Q^m drops below ``tolerance`` for some m <= max_power.

    For nonnegative Q with row sums <= 1 the largest entry of Q^m is
    nonincreasing in m, since each entry of Q Q^m averages a column of Q^m
    with weights summing to at most 1. Then only Q^max_power needs checking,
    and binary exponentiation reaches it in O(log max_power) products. This is
    what makes slowly absorbing chains (1 - rho near 1e-11) checkable. Other
    matrices fall back to scanning every power.
    """
    q = as_matrix(q)
    if q.shape[0] != q.shape[1]:
        raise ValueError("matrix must be square")
    if max_power < 1:
        return False
    if np.all(q >= 0) and q.sum(axis=1).max() <= 1.0 + STOCHASTIC_TOL:
        return bool(np.linalg.matrix_power(q, max_power).max() < tolerance)
    power = q.copy()
    for m in range(1, max_power + 1):
        if np.abs(power).max() < tolerance:
            return True
        if m < max_power:
            power = power @ q
    return False
