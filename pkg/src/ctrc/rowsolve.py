"""Minimum-norm solves of the per-row quadratic sub-problems.

Every factor row update minimizes ``1/2 a H a^T + g a^T`` with ``H``
positive semidefinite, whose minimum-norm minimizer is ``a* = -g H^+``.
The pseudo-inverse is taken through a symmetric eigendecomposition with a
relative cutoff, which is cheap for the small ``R^2 x R^2`` matrices
involved and degrades gracefully for under-sampled rows.
"""

import numpy as np

PINV_RTOL = 1e-12


def solve_psd(h, g, rtol=PINV_RTOL):
    """Return ``-g @ pinv(h)`` for PSD ``h``; works on stacks.

    Parameters
    ----------
    h : (..., K, K) ndarray
        Symmetric positive semidefinite matrices.
    g : (..., K) ndarray
        Linear terms.
    rtol : float
        Eigenvalues ``<= rtol * max eigenvalue`` are treated as zero.
        An all-zero ``h`` gives a zero solution.
    """
    h = np.asarray(h, dtype=float)
    g = np.asarray(g, dtype=float)
    if h.shape[-1] == 0:
        return np.zeros_like(g)
    w, v = np.linalg.eigh(h)
    top = w[..., -1:]
    keep = w > rtol * top
    inv_w = np.divide(1.0, w, out=np.zeros_like(w), where=keep)
    proj = np.einsum("...k,...kj->...j", g, v)
    return -np.einsum("...j,...kj->...k", proj * inv_w, v)


def normal_equations(b_obs, c_obs):
    """Hessian ``H = B B^T`` and gradient term ``g = -c B^T``.

    ``b_obs`` is passed transposed, one observed column of ``B`` per row,
    shape ``(m_i, K)``; ``c_obs`` holds the matching observed values.
    """
    return b_obs.T @ b_obs, -(c_obs @ b_obs)


def row_update_uncoupled(b, c_row, obs_cols):
    """Closed-form update of one factor row.

    Parameters
    ----------
    b : (K, J) ndarray
        Subchain matrix ``B_d``.
    c_row : (J,) ndarray
        Row of the data unfolding ``C_d``.
    obs_cols : sequence of int
        Observed columns of this row.

    Returns
    -------
    (K,) ndarray
        Minimum-norm least-squares solution of ``a B[:, obs] ~ c[obs]``.
    """
    b = np.asarray(b, dtype=float)
    cols = np.asarray(obs_cols, dtype=np.int64)
    b_obs = b[:, cols].T
    c_obs = np.asarray(c_row, dtype=float)[cols]
    h, g = normal_equations(b_obs, c_obs)
    return solve_psd(h, g)
