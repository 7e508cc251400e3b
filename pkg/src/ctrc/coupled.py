"""Block coordinate descent for coupled tensor-ring completion.

``N`` tensors share the leading ``(Γ_d, :, Γ_{d+1})`` sub-blocks of their
first ``L`` cores. One sweep updates the private (uncoupled) cores of each
tensor in turn, then the coupled cores, each row by an exact minimum-norm
solve, so the objective never increases.

For a coupled core the row variable of tensor ``n`` is split into the
shared part ``alpha`` (columns ``C_d`` of ``A_d``) and a private part
``beta_n`` (the complement). The joint Hessian is arrow shaped::

    [ sum_n H11_n   H12_1   H12_2  ... ]
    [ H21_1         H22_1   0          ]
    [ H21_2         0       H22_2      ]

where ``H11_n, H12_n, H22_n`` are the blocks of tensor ``n``'s row Hessian
permuted to put the coupled columns first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._driver import run_bcd
from .config import SolverConfig
from .ring import (
    StructureError,
    check_rank,
    core_from_rows,
    grouped_samples,
    initial_factors,
    masked_core_update,
    masked_half_sq,
    row_executor,
    row_systems,
    tr_contract,
)
from .rowsolve import solve_psd
from .tensor import DimensionError, ObservationMask, _axis


@dataclass(frozen=True)
class CouplingSpec:
    """Which cores are shared and by how much.

    Parameters
    ----------
    ranks : sequence of rank tuples
        TR rank of every tensor.
    shared_modes : int
        Number ``L`` of leading modes whose cores are coupled.
    coupled_distances : sequence of int, optional
        ``Γ_1 .. Γ_{L+1}``; defaults to the smallest rank of every bond
        across tensors (full coupling). Empty when ``L = 0``.
    """

    ranks: tuple
    shared_modes: int = 0
    coupled_distances: tuple = field(default=None)

    def __post_init__(self):
        ranks = tuple(tuple(int(r) for r in rk) for rk in self.ranks)
        object.__setattr__(self, "ranks", ranks)
        L = int(self.shared_modes)
        object.__setattr__(self, "shared_modes", L)
        if not ranks:
            raise StructureError("at least one tensor is required")
        if L < 0:
            raise StructureError("shared_modes must be >= 0")
        if len(ranks) == 1 and L:
            raise StructureError("a single tensor cannot have coupled modes")
        if L >= min(len(r) for r in ranks):
            raise StructureError("shared_modes must be smaller than every tensor order")
        bound = [min(r[k % len(r)] for r in ranks) for k in range(L + 1)] if L else []
        gam = self.coupled_distances
        if gam is None:
            gam = tuple(bound)
        gam = tuple(int(g) for g in gam) if L else ()
        if L and len(gam) != L + 1:
            raise StructureError(f"need {L + 1} coupled distances, got {len(gam)}")
        for k, (g, b) in enumerate(zip(gam, bound)):
            if not 1 <= g <= b:
                raise StructureError(f"coupled distance Γ_{k + 1}={g} outside [1, {b}]")
        object.__setattr__(self, "coupled_distances", gam)

    @property
    def n_tensors(self):
        return len(self.ranks)

    def blocks(self, n, d):
        """Coupled columns ``C_d`` and their complement for tensor ``n``.

        Indices refer to columns of ``A_d``; ``C_d`` lists bond pairs
        ``(r, s)`` with ``r < Γ_d`` and ``s < Γ_{d+1}`` in row-major order.
        """
        ax = d - 1
        rk = self.ranks[n]
        rd, rd1 = rk[ax], rk[(ax + 1) % len(rk)]
        g0, g1 = self.coupled_distances[ax], self.coupled_distances[ax + 1]
        r, s = np.meshgrid(np.arange(g0), np.arange(g1), indexing="ij")
        cols = (r * rd1 + s).ravel()
        rest = np.setdiff1d(np.arange(rd * rd1), cols)
        return cols, rest


class CoupledProblem:
    """Observed tensors, their masks and the coupling structure."""

    def __init__(self, tensors, masks, spec):
        self.tensors = [np.asarray(t, dtype=float) for t in tensors]
        self.masks = [m if isinstance(m, ObservationMask) else ObservationMask.from_dense(m)
                      for m in masks]
        self.spec = spec
        if not (len(self.tensors) == len(self.masks) == spec.n_tensors):
            raise StructureError("number of tensors, masks and rank vectors differ")
        for n, (t, m, rk) in enumerate(zip(self.tensors, self.masks, spec.ranks)):
            if m.shape != t.shape:
                raise DimensionError(f"mask {n + 1} shape {m.shape} != tensor shape {t.shape}")
            if len(m) == 0:
                raise StructureError(f"mask {n + 1} is empty")
            if len(rk) != t.ndim:
                raise StructureError(f"rank vector {n + 1} does not match tensor order {t.ndim}")
        L = spec.shared_modes
        for d in range(L):
            sizes = {t.shape[d] for t in self.tensors}
            if len(sizes) != 1:
                raise StructureError(f"coupled mode {d + 1} has differing sizes {sorted(sizes)}")

    @property
    def n_tensors(self):
        return len(self.tensors)

    @cached_property
    def values(self):
        return [m.gather(t) for t, m in zip(self.tensors, self.masks)]


def objective(problem, factor_sets):
    """``sum_n 1/2 ||P_On(X_n) - P_On(T_n)||^2``."""
    return sum(
        masked_half_sq(tr_contract(f), m, v)
        for f, m, v in zip(factor_sets, problem.masks, problem.values)
    )


def assemble_coupled_hessian(hessians, blocks):
    """Joint Hessian of a coupled row problem.

    Parameters
    ----------
    hessians : list of (..., K_n, K_n) arrays
        Per-tensor row Hessians in the original column order.
    blocks : list of (coupled, complement) index arrays
        Column split of every tensor; all coupled sets must have the same
        length.

    Returns
    -------
    h : (..., K, K) ndarray
        ``K = |C| + sum_n |complement_n|``.
    layout : list of slices
        Position of the shared block followed by each private block.
    """
    sizes = {len(c) for c, _ in blocks}
    if len(sizes) != 1:
        raise StructureError(f"inconsistent coupled block sizes {sorted(sizes)}")
    if len(hessians) != len(blocks):
        raise StructureError("one column split per Hessian is required")
    nc = sizes.pop()
    layout = [slice(0, nc)]
    pos = nc
    for _, rest in blocks:
        layout.append(slice(pos, pos + len(rest)))
        pos += len(rest)
    batch = np.shape(hessians[0])[:-2]
    out = np.zeros(batch + (pos, pos))
    for h, (c, rest), sl in zip(hessians, blocks, layout[1:]):
        h = np.asarray(h, dtype=float)
        if h.shape[-1] != len(c) + len(rest):
            raise StructureError("column split does not cover the Hessian")
        out[..., :nc, :nc] += h[..., c[:, None], c]
        out[..., :nc, sl] = h[..., c[:, None], rest]
        out[..., sl, :nc] = h[..., rest[:, None], c]
        out[..., sl, sl] = h[..., rest[:, None], rest]
    return out, layout


def assemble_coupled_gradient(gradients, blocks):
    """``[sum_n xi_n, eta_1, ..., eta_N]`` matching :func:`assemble_coupled_hessian`."""
    shared = sum(np.asarray(g)[..., c] for g, (c, _) in zip(gradients, blocks))
    return np.concatenate([shared] + [np.asarray(g)[..., r] for g, (_, r) in zip(gradients, blocks)],
                          axis=-1)


def update_uncoupled_factor(problem, factors, n, d, executor=None):
    """New core ``d`` of tensor ``n`` (``d > L``) with all other cores fixed."""
    if d <= problem.spec.shared_modes:
        raise ValueError(f"mode {d} is coupled; use update_coupled_factor")
    _axis(d, factors.order)
    return masked_core_update(factors, d, problem.masks[n], problem.values[n], executor)


def update_coupled_factor(problem, factor_sets, d, executor=None):
    """Jointly re-solve core ``d <= L`` of every tensor.

    Returns the list of new cores. The shared sub-block is written
    identically into every tensor's core.
    """
    spec = problem.spec
    if not 1 <= d <= spec.shared_modes:
        raise ValueError(f"mode {d} is not a coupled mode")
    hs, gs, blocks = [], [], []
    for n, f in enumerate(factor_sets):
        mask = problem.masks[n]
        h, g = row_systems(*grouped_samples(f, d, mask, problem.values[n]), executor)
        hs.append(h)
        gs.append(g)
        blocks.append(spec.blocks(n, d))
    h_hat, layout = assemble_coupled_hessian(hs, blocks)
    g_hat = assemble_coupled_gradient(gs, blocks)
    x = solve_psd(h_hat, g_hat)
    alpha = x[:, layout[0]]
    cores = []
    for n, f in enumerate(factor_sets):
        rd, n_rows, rd1 = f.cores[d - 1].shape
        cols, rest = blocks[n]
        a = np.empty((n_rows, rd * rd1))
        a[:, cols] = alpha
        a[:, rest] = x[:, layout[n + 1]]
        cores.append(core_from_rows(a, rd, rd1))
    return cores


def shared_blocks(factor_sets, spec):
    """Coupled sub-blocks ``core[:Γ_d, :, :Γ_{d+1}]`` of every tensor."""
    out = []
    for d in range(spec.shared_modes):
        g0, g1 = spec.coupled_distances[d], spec.coupled_distances[d + 1]
        out.append([f.cores[d][:g0, :, :g1] for f in factor_sets])
    return out


def enforce_coupling(factor_sets, spec):
    """Copy the first tensor's shared sub-blocks into all others."""
    for d, blocks in enumerate(shared_blocks(factor_sets, spec)):
        g0, g1 = spec.coupled_distances[d], spec.coupled_distances[d + 1]
        for f in factor_sets[1:]:
            f.cores[d][:g0, :, :g1] = blocks[0]


def solve_ctrc(problem, cfg=None, truths=None, callback=None):
    """Coupled TR completion by block coordinate descent.

    Parameters
    ----------
    problem : CoupledProblem
    cfg : SolverConfig, optional
    truths : list of ndarray, optional
        Ground-truth tensors; adds per-tensor RMSE traces to the report.
    callback : callable, optional
        Called as ``callback(k, factor_sets)`` after every sweep.

    Returns
    -------
    factor_sets : list of TRFactorSet
    reconstructions : list of ndarray
    report : SolveReport
    """
    cfg = cfg or SolverConfig()
    spec = problem.spec
    rng = cfg.rng()
    fsets = [
        initial_factors(t, m, check_rank(rk, t.ndim), cfg, rng)
        for t, m, rk in zip(problem.tensors, problem.masks, spec.ranks)
    ]
    enforce_coupling(fsets, spec)
    L = spec.shared_modes
    sweeps = [0]

    def objective_fn(recons):
        return sum(masked_half_sq(x, m, v)
                   for x, m, v in zip(recons, problem.masks, problem.values))

    def sweep(notify, executor):
        for n, f in enumerate(fsets):
            for d in range(L + 1, f.order + 1):
                f.cores[d - 1] = update_uncoupled_factor(problem, f, n, d, executor)
                notify()
        for d in range(1, L + 1):
            for f, core in zip(fsets, update_coupled_factor(problem, fsets, d, executor)):
                f.cores[d - 1] = core
            notify()
        sweeps[0] += 1
        if callback is not None:
            callback(sweeps[0], fsets)

    with row_executor(cfg) as ex:
        report = run_bcd(fsets, lambda notify: sweep(notify, ex), objective_fn, cfg,
                         tr_contract, truths)
    return fsets, [tr_contract(f) for f in fsets], report

