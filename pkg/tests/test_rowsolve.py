import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctrc.rowsolve import normal_equations, row_update_uncoupled, solve_psd
from oracles import min_norm_lstsq


def rank_controlled(rng, K, J, rank):
    """``K x J`` matrix with ``rank`` singular values spread over [0.3, 3]."""
    u, _ = np.linalg.qr(rng.standard_normal((K, K)))
    v, _ = np.linalg.qr(rng.standard_normal((J, J)))
    s = np.zeros(min(K, J))
    s[:rank] = rng.uniform(0.3, 3.0, rank)
    m = np.zeros((K, J))
    m[:len(s), :len(s)] = np.diag(s)
    return u @ m @ v.T


def test_empty_observations_give_zero_row(rng):
    b = rng.standard_normal((4, 6))
    assert not np.any(row_update_uncoupled(b, rng.standard_normal(6), []))


def test_full_rank_matches_normal_equations(rng):
    b = rng.standard_normal((6, 20))
    c = rng.standard_normal(20)
    got = row_update_uncoupled(b, c, np.arange(20))
    ref = np.linalg.solve(b @ b.T, b @ c)
    np.testing.assert_allclose(got, ref, rtol=1e-10)


def test_consistent_system_is_recovered(rng):
    b = rng.standard_normal((5, 12))
    a0 = rng.standard_normal(5)
    cols = np.array([0, 2, 3, 5, 7, 8, 10, 11])
    c = np.zeros(12)
    c[cols] = a0 @ b[:, cols]
    np.testing.assert_allclose(row_update_uncoupled(b, c, cols), a0, rtol=1e-10)


@given(st.integers(1, 9), st.integers(0, 20), st.integers(0, 2**32 - 1))
def test_min_norm_on_rank_deficient_rows(K, m, seed):
    rng = np.random.default_rng(seed)
    rank = rng.integers(0, min(K, m) + 1) if m else 0
    b = rank_controlled(rng, K, max(m, 1), rank)[:, :m]
    c = rng.standard_normal(m)
    got = row_update_uncoupled(b, c, np.arange(m))
    ref = min_norm_lstsq(b, c)
    assert np.linalg.norm(got - ref) <= 1e-10 * max(np.linalg.norm(ref), 1e-12)


def test_stacked_solves_match_single(rng):
    bs = [rng.standard_normal((30, 4)) for _ in range(3)]
    hs, gs = zip(*(normal_equations(b, rng.standard_normal(30)) for b in bs))
    stacked = solve_psd(np.array(hs), np.array(gs))
    for h, g, x in zip(hs, gs, stacked):
        np.testing.assert_array_equal(x, solve_psd(h, g))


def test_zero_hessian():
    assert not np.any(solve_psd(np.zeros((3, 3)), np.zeros(3)))
    assert solve_psd(np.zeros((0, 0)), np.zeros(0)).shape == (0,)


@pytest.mark.parametrize("rtol", [1e-12, 1e-6])
def test_cutoff_discards_small_eigenvalues(rtol):
    h = np.diag([1.0, 1e-9])
    x = solve_psd(h, np.array([-1.0, -1.0]), rtol=rtol)
    assert x[0] == pytest.approx(1.0)
    assert (x[1] == 0.0) == (rtol > 1e-9)
