import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from raftsplit import numerics
from raftsplit.numerics import (
    SingularMatrixError,
    absorbing_inverse,
    identity,
    mat_inverse,
    mat_mul,
    propagate,
    spectral_radius_bound,
    verify_transience,
)
from raftsplit.split_model import build_multi_timeout_chain, build_single_timeout_chain


def naive_matmul(a, b):
    n, m = len(a), len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            for k in range(len(b)):
                out[i][j] += a[i][k] * b[k][j]
    return np.array(out)


def test_mat_mul_identity():
    assert np.array_equal(mat_mul(identity(3), identity(3)), identity(3))


def test_mat_mul_involution():
    swap = [[0, 1], [1, 0]]
    assert np.array_equal(mat_mul(swap, swap), identity(2))


def test_mat_mul_matches_triple_loop():
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    np.testing.assert_allclose(mat_mul(a, b), naive_matmul(a.tolist(), b.tolist()), atol=1e-12)


def test_mat_mul_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        mat_mul(np.ones((2, 3)), np.ones((2, 3)))


def test_inverse_identity_and_diagonal():
    assert np.allclose(mat_inverse(identity(5)), identity(5), atol=0)
    np.testing.assert_allclose(mat_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))


def test_inverse_of_i_minus_q_multiplies_back():
    q = build_single_timeout_chain(3, 0.5).q_block
    a = np.eye(3) - q
    assert np.abs(a @ mat_inverse(a) - np.eye(3)).max() < 1e-9


def test_inverse_singular():
    with pytest.raises(SingularMatrixError):
        mat_inverse([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(ValueError):
        mat_inverse(np.ones((2, 3)))


def test_inverse_needs_pivoting():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(mat_inverse(a), a)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(-1, 1)))
def test_inverse_residual_property(m):
    a = m + 6 * np.eye(5)  # strictly diagonally dominant, well conditioned
    inv = mat_inverse(a)
    assert np.abs(a @ inv - np.eye(5)).sum(axis=1).max() < 1e-9


@pytest.mark.parametrize("timeouts,p", [((3,), 0.5), ((2, 3), 0.4), ((1, 4, 6), 0.2), ((5,), 1.0)])
def test_absorbing_inverse_agrees_with_pivoting(timeouts, p):
    ch = build_multi_timeout_chain(timeouts, p)
    t = ch.transient_count
    fast = absorbing_inverse(ch.q_block, ch.r_block.sum(axis=1))
    np.testing.assert_allclose(fast, mat_inverse(np.eye(t) - ch.q_block), rtol=1e-10, atol=1e-12)


def test_absorbing_inverse_relative_accuracy_when_ill_conditioned():
    # n_11 = p^-K exactly; K=8, p=0.05 puts cond(I - Q) near 1e10
    ch = build_single_timeout_chain(8, 0.05)
    n = absorbing_inverse(ch.q_block, ch.r_block.sum(axis=1))
    assert abs(n[0, 0] * 0.05**8 - 1) < 1e-12


def test_absorbing_inverse_rejects_closed_class():
    with pytest.raises(SingularMatrixError):
        absorbing_inverse(build_single_timeout_chain(3, 0.0).q_block)


def test_propagate_identity_chain():
    e1 = np.array([1.0, 0.0, 0.0])
    for v in propagate(e1, identity(3), 5):
        assert np.array_equal(v, e1)


def test_propagate_forced_absorption():
    ch = build_single_timeout_chain(2, 1.0)
    out = propagate(ch.initial_distribution, ch.full, 2)
    assert out[2][-1] == 1.0


def test_propagate_k3_p01_step3():
    ch = build_single_timeout_chain(3, 0.1)
    out = propagate(ch.initial_distribution, ch.full, 3)
    assert out[3][-1] == pytest.approx(0.001, abs=1e-15)


def test_propagate_rejects_non_stochastic():
    with pytest.raises(ValueError, match="stochastic"):
        propagate([1.0, 0.0], [[0.5, 0.4], [0.0, 1.0]], 3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=3, unique=True), st.floats(0, 1))
def test_propagate_preserves_mass(ks, p):
    ch = build_multi_timeout_chain(sorted(ks), p)
    for v in propagate(ch.initial_distribution, ch.full, 30):
        assert abs(v.sum() - 1) < 1e-9
        assert v.min() >= -1e-15


def test_spectral_bound_examples():
    assert spectral_radius_bound(np.zeros((3, 3))) == 0.0
    assert spectral_radius_bound(identity(2)) == pytest.approx(1.0)
    assert not spectral_radius_bound(identity(2)) < 1.0
    assert spectral_radius_bound(build_single_timeout_chain(3, 0.5).q_block) < 1.0


@pytest.mark.parametrize("timeouts,p", [((3,), 0.5), ((2, 3), 0.4), ((4,), 0.9), ((1, 2, 7), 0.7)])
def test_spectral_bound_is_upper_bound_and_tight(timeouts, p):
    q = build_multi_timeout_chain(timeouts, p).q_block
    rho = max(abs(np.linalg.eigvals(q)))
    bound = spectral_radius_bound(q)
    assert rho <= bound + 1e-12
    assert bound - rho < 1e-4


def test_verify_transience_examples():
    assert verify_transience(build_single_timeout_chain(3, 0.9).q_block)
    assert not verify_transience(identity(2), max_power=500)


def test_verify_transience_geometric_decay():
    q = build_single_timeout_chain(1, 0.5).q_block  # [[0.5]]
    assert verify_transience(q, tolerance=1e-12, max_power=40)
    # 0.5^39 > 1e-12 > 0.5^40
    assert not verify_transience(q, tolerance=1e-12, max_power=39)


def test_matrix_validation():
    with pytest.raises(ValueError):
        numerics.as_matrix([[1.0, np.nan]])
    with pytest.raises(ValueError):
        numerics.as_matrix([1.0, 2.0])


def test_verify_transience_slow_chain():
    # 1 - rho is about 4e-11 here; a power-by-power scan would need ~1e12 steps
    assert verify_transience(build_single_timeout_chain(8, 0.05).q_block)
    assert not verify_transience(build_single_timeout_chain(3, 0.0).q_block)


def test_verify_transience_non_substochastic_scans():
    nilpotent = np.array([[0.0, 2.0], [0.0, 0.0]])
    assert verify_transience(nilpotent, max_power=2)
    assert not verify_transience(nilpotent, max_power=1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3, unique=True),
       st.floats(0.05, 1.0), st.integers(1, 60))
def test_verify_transience_matches_power_scan(ks, p, max_power):
    q = build_multi_timeout_chain(sorted(ks), p).q_block
    tol = 1e-3
    power, scan = q.copy(), False
    for _ in range(max_power):
        if power.max() < tol:
            scan = True
            break
        power = power @ q
    assert verify_transience(q, tolerance=tol, max_power=max_power) == scan
