"""Tensor-ring factor sets, contraction, subchains, TR-SVD and TR-ALS.

Core ``d`` (1-based) has shape ``(R_d, I_d, R_{d+1})`` with ``R_{D+1} = R_1``.
Its unfolding ``A_d`` is the ``I_d x (R_d R_{d+1})`` matrix with
``A_d[i, r * R_{d+1} + s] = core[r, i, s]``, i.e. the trailing bond varies
fastest. The subchain ``B_d`` uses the same bond-pair ordering on its rows
and the column ordering of ``unfold_shift(X, d, 1)``, so that
``A_d @ B_d == unfold_shift(tr_contract(f), d, 1)``.
"""

from __future__ import annotations

import warnings
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ._driver import run_bcd
from .config import SolverConfig
from .rowsolve import normal_equations, solve_psd
from .tensor import DimensionError, ObservationMask, _axis, fnorm, project


class StructureError(ValueError):
    """Raised when bond dimensions or coupling blocks are inconsistent."""


class TRFactorSet:
    """Ordered list of tensor-ring cores with cyclic bond consistency."""

    def __init__(self, cores):
        cores = [np.asarray(c, dtype=float) for c in cores]
        if not cores:
            raise StructureError("a tensor ring needs at least one core")
        for d, c in enumerate(cores):
            if c.ndim != 3 or min(c.shape) < 1:
                raise StructureError(f"core {d + 1} must be a nonempty 3-way array, got {c.shape}")
        for d, c in enumerate(cores):
            nxt = cores[(d + 1) % len(cores)]
            if c.shape[2] != nxt.shape[0]:
                raise StructureError(
                    f"bond mismatch between core {d + 1} ({c.shape}) and core "
                    f"{(d + 1) % len(cores) + 1} ({nxt.shape})"
                )
        self.cores = cores

    @property
    def order(self):
        return len(self.cores)

    @property
    def shape(self):
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self):
        """Bond dimensions ``[R_1, ..., R_D]``."""
        return tuple(c.shape[0] for c in self.cores)

    def copy(self):
        return TRFactorSet([c.copy() for c in self.cores])

    def rotate(self, k):
        """Cyclic shift so that core ``k + 1`` comes first."""
        k %= self.order
        return TRFactorSet(self.cores[k:] + self.cores[:k])

    def n_params(self):
        return int(sum(c.size for c in self.cores))

    def __repr__(self):
        return f"TRFactorSet(shape={self.shape}, ranks={self.ranks})"


def check_rank(rank, order):
    rank = tuple(int(r) for r in np.atleast_1d(rank))
    if len(rank) == 1 and order > 1:
        rank = rank * order
    if len(rank) != order:
        raise ValueError(f"rank vector has length {len(rank)}, tensor order is {order}")
    if min(rank) < 1:
        raise ValueError("TR ranks must be >= 1")
    return rank


def random_factors(shape, rank, rng):
    """Cores with i.i.d. standard normal entries, drawn in mode order."""
    rank = check_rank(rank, len(shape))
    D = len(shape)
    return TRFactorSet(
        [rng.standard_normal((rank[d], shape[d], rank[(d + 1) % D])) for d in range(D)]
    )


def _chain(cores):
    """Contract an open chain into shape ``(R_first, I..., R_last)``."""
    g = cores[0]
    for c in cores[1:]:
        g = np.tensordot(g, c, axes=([-1], [0]))
    return g


def tr_contract(f):
    """Full tensor with entries ``trace(U1[:, i1, :] ... UD[:, iD, :])``."""
    if not isinstance(f, TRFactorSet):
        f = TRFactorSet(f)
    g = _chain(f.cores)
    r = g.shape[0]
    rest = g.shape[1:-1]
    g = g.reshape(r, -1, r)
    return np.einsum("rjr->j", g).reshape(rest)


def subchain(f, d):
    """Subchain matrix ``B_d`` of shape ``(R_d R_{d+1}) x J_d``.

    ``J_d`` is the product of all dimensions except ``I_d``; columns follow
    ``unfold_shift(., d, 1)``.
    """
    ax = _axis(d, f.order)
    D = f.order
    rd, rd1 = f.cores[ax].shape[0], f.cores[ax].shape[2]
    if D == 1:
        return np.eye(rd).reshape(rd * rd1, 1)
    others = [f.cores[(ax + k) % D] for k in range(1, D)]
    g = _chain(others)
    g = g.reshape(rd1, -1, rd)
    return g.transpose(2, 0, 1).reshape(rd * rd1, -1)


def sampled_subchain(f, d, idx):
    """Columns of ``B_d`` at the given sample positions, transposed.

    Parameters
    ----------
    f : TRFactorSet
    d : int
        1-based mode.
    idx : (m, D) int array
        0-based multi-indices; the entry for mode ``d`` is ignored.

    Returns
    -------
    (m, R_d R_{d+1}) ndarray
        Row ``j`` equals ``B_d[:, col_j]`` where ``col_j`` is the column of
        sample ``j``. Costs ``O(m D R^3)``.
    """
    ax = _axis(d, f.order)
    D = f.order
    rd, rd1 = f.cores[ax].shape[0], f.cores[ax].shape[2]
    m = idx.shape[0]
    if D == 1:
        return np.broadcast_to(np.eye(rd).ravel(), (m, rd * rd1)).copy()
    k = (ax + 1) % D
    prod = f.cores[k][:, idx[:, k], :].transpose(1, 0, 2)
    for step in range(2, D):
        k = (ax + step) % D
        prod = np.matmul(prod, f.cores[k][:, idx[:, k], :].transpose(1, 0, 2))
    # prod[j] is R_{d+1} x R_d; B_d[(r, s), j] = prod[j][s, r]
    return prod.transpose(0, 2, 1).reshape(m, rd * rd1)


def grouped_samples(f, d, mask, values):
    """Sampled subchain rows and observed values grouped by mode-``d`` row.

    Returns ``(bs, vals, starts)`` where the observations with ``i_d = i``
    occupy ``bs[starts[i]:starts[i+1]]``. Observations on the same mode-``d``
    fiber share a column of ``B_d``, which is computed only once.
    """
    order, starts = mask.rows(d)
    first, inverse = mask.fibers(d)
    if len(first) < len(mask):
        bs = sampled_subchain(f, d, mask.multi_index[first])[inverse[order]]
    else:
        bs = sampled_subchain(f, d, mask.multi_index[order])
    return bs, values[order], starts


def row_systems(bs, values, starts, executor=None):
    """Per-row normal equations of a masked core update.

    ``bs``, ``values`` and ``starts`` come from :func:`grouped_samples`.
    Returns stacked ``H`` ``(I, K, K)`` and ``g`` ``(I, K)``.
    """
    n_rows = len(starts) - 1
    K = bs.shape[1]
    h = np.zeros((n_rows, K, K))
    g = np.zeros((n_rows, K))

    def one(i):
        lo, hi = starts[i], starts[i + 1]
        if hi > lo:
            h[i], g[i] = normal_equations(bs[lo:hi], values[lo:hi])

    if executor is None:
        for i in range(n_rows):
            one(i)
    else:
        list(executor.map(one, range(n_rows)))
    return h, g


def core_from_rows(a, rd, rd1):
    """Fold an ``I x (R_d R_{d+1})`` unfolding back into a core."""
    return a.reshape(a.shape[0], rd, rd1).transpose(1, 0, 2).copy()


def core_rows(core):
    """Unfolding ``A_d`` of a core."""
    rd, n, rd1 = core.shape
    return core.transpose(1, 0, 2).reshape(n, rd * rd1)


def masked_core_update(f, d, mask, values, executor=None):
    """Exact minimizer of the masked fit over core ``d``, other cores fixed.

    Each of the ``I_d`` rows of ``A_d`` is solved independently as the
    minimum-norm least-squares fit to its observed entries. Rows without
    observations become zero.
    """
    ax = _axis(d, f.order)
    rd, _, rd1 = f.cores[ax].shape
    h, g = row_systems(*grouped_samples(f, d, mask, values), executor)
    return core_from_rows(solve_psd(h, g), rd, rd1)


def masked_half_sq(recon, mask, values):
    """``1/2 ||P_O(recon) - P_O(T)||^2`` from pre-gathered observed values."""
    r = recon.ravel()[mask.linear] - values
    return 0.5 * float(np.dot(r, r))


def _split_rank(r):
    a = int(np.floor(np.sqrt(r)))
    while r % a:
        a -= 1
    return a, r // a


def _truncated_svd(mat, keep, label):
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    avail = s.size
    if keep > avail:
        warnings.warn(
            f"{label}: requested rank {keep} exceeds matrix dimension {avail}; "
            f"numerical rank clipped to {avail}, surplus bond directions set to zero",
            stacklevel=3,
        )
    top = s[0] if s.size else 0.0
    nz = s > max(mat.shape) * np.finfo(float).eps * top
    u = u * nz
    n = min(keep, avail)
    uu = np.zeros((mat.shape[0], keep))
    sv = np.zeros((keep, mat.shape[1]))
    uu[:, :n] = u[:, :n]
    sv[:n] = (s[:n] * nz[:n])[:, None] * vt[:n]
    return uu, sv, s


def _rank_for_tol(s, thresh):
    tail = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]
    # tail[r] = norm of discarded singular values when keeping r of them
    for r in range(1, s.size + 1):
        if r == s.size or tail[r] <= thresh:
            return r
    return s.size


def tr_svd(t, rank=None, tol=1e-12):
    """Tensor-ring decomposition by sequential SVDs.

    Parameters
    ----------
    t : ndarray
        Fully observed tensor.
    rank : sequence of int, optional
        Target TR rank ``[R_1, ..., R_D]``. Each SVD is truncated so the
        running bond equals the requested value; discarded mass is lost.
        Requests beyond the available matrix dimension are clipped with a
        warning and the surplus bond directions are zero.
    tol : float
        Relative accuracy used to pick ranks when ``rank`` is None.

    Returns
    -------
    factors : TRFactorSet
    rel_error : float
        ``||X - X_hat||_F / ||X||_F`` (0 for a zero tensor).
    """
    t = np.asarray(t, dtype=float)
    D = t.ndim
    shape = t.shape
    norm = fnorm(t)
    if rank is not None:
        rank = check_rank(rank, D)
    if D == 1:
        r1 = 1 if rank is None else rank[0]
        core = np.zeros((r1, shape[0], r1))
        core[0, :, 0] = t
        return TRFactorSet([core]), 0.0

    delta = tol * norm / np.sqrt(D)
    cores = []
    mat = t.reshape(shape[0], -1)
    if rank is None:
        s = np.linalg.svd(mat, compute_uv=False)
        r1, r2 = _split_rank(_rank_for_tol(s, np.sqrt(2) * delta))
    else:
        r1, r2 = rank[0], rank[1]
    u, w, _ = _truncated_svd(mat, r1 * r2, "tr_svd mode 1")
    cores.append(u.reshape(shape[0], r1, r2).transpose(1, 0, 2))
    # w: (r1 r2, I_2..I_D) -> (r2, I_2..I_D, r1)
    w = np.moveaxis(w.reshape((r1, r2) + shape[1:]), 0, -1)
    prev = r2
    for k in range(1, D - 1):
        mat = w.reshape(prev * shape[k], -1)
        if rank is None:
            s = np.linalg.svd(mat, compute_uv=False)
            nxt = _rank_for_tol(s, delta)
        else:
            nxt = rank[k + 1]
        u, sv, _ = _truncated_svd(mat, nxt, f"tr_svd mode {k + 1}")
        cores.append(u.reshape(prev, shape[k], nxt))
        w = sv
        prev = nxt
    cores.append(w.reshape(prev, shape[-1], r1))
    f = TRFactorSet(cores)
    err = fnorm(tr_contract(f) - t) / norm if norm > 0 else 0.0
    return f, err


def initial_factors(t, mask, rank, cfg, rng):
    if cfg.init == "random-normal":
        return random_factors(t.shape, rank, rng)
    f, _ = tr_svd(project(t, mask), rank)
    return f


@contextmanager
def row_executor(cfg):
    """Thread pool for independent row solves, or None when serial."""
    if cfg.parallel_rows and cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            yield ex
    else:
        yield None


def tr_als_complete(t, mask, rank, cfg=None, truth=None):
    """Individual TR completion by alternating least squares.

    Each sweep updates cores ``1..D`` in turn with
    :func:`masked_core_update`. The masked objective is non-increasing from
    sweep to sweep.

    Parameters
    ----------
    t : ndarray
        Observed tensor; only entries in ``mask`` are read.
    mask : ObservationMask
    rank : sequence of int or int
    cfg : SolverConfig, optional
    truth : ndarray, optional
        Ground truth for an RMSE trace.

    Returns
    -------
    factors : TRFactorSet
    report : SolveReport
    """
    cfg = cfg or SolverConfig()
    t = np.asarray(t, dtype=float)
    if not isinstance(mask, ObservationMask):
        mask = ObservationMask.from_dense(mask)
    if mask.shape != t.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match tensor {t.shape}")
    if len(mask) == 0:
        raise ValueError("empty observation mask")
    rank = check_rank(rank, t.ndim)
    rng = cfg.rng()
    factors = initial_factors(t, mask, rank, cfg, rng)
    values = mask.gather(t)
    fsets = [factors]

    def objective_fn(recons):
        return masked_half_sq(recons[0], mask, values)

    def sweep(notify, executor):
        for d in range(1, t.ndim + 1):
            factors.cores[d - 1] = masked_core_update(factors, d, mask, values, executor)
            notify()

    with row_executor(cfg) as ex:
        report = run_bcd(fsets, lambda notify: sweep(notify, ex), objective_fn, cfg,
                         tr_contract, None if truth is None else [truth])
    return factors, report
