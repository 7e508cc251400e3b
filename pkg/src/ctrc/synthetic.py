"""Synthetic coupled tensor-ring data with exact-count random masks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._driver import rmse
from .coupled import CoupledProblem, CouplingSpec
from .ring import random_factors, tr_contract
from .tensor import ObservationMask

__all__ = ["SyntheticSpec", "SyntheticData", "generate_synthetic", "sample_mask", "rmse"]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a set of coupled exact-TR tensors.

    Parameters
    ----------
    shapes : sequence of shape tuples
        One shape per tensor; the first ``shared_modes`` dimensions agree.
    rank : int
        TR rank of every bond of every tensor.
    shared_modes : int
        Number ``L`` of leading cores that are (partly) shared.
    sampling_rates : sequence of float
        Observed fraction of each tensor, in ``(0, 1]``.
    coupled_distance : int, optional
        Side of the shared core sub-block; defaults to ``rank``.
    seed : int
    """

    shapes: tuple
    rank: int
    shared_modes: int
    sampling_rates: tuple
    coupled_distance: int = None
    seed: int = 0

    def __post_init__(self):
        shapes = tuple(tuple(int(i) for i in s) for s in self.shapes)
        rates = tuple(float(r) for r in self.sampling_rates)
        object.__setattr__(self, "shapes", shapes)
        object.__setattr__(self, "sampling_rates", rates)
        if not shapes:
            raise ValueError("at least one tensor shape is required")
        if len(rates) != len(shapes):
            raise ValueError("one sampling rate per tensor is required")
        if not all(0 < r <= 1 for r in rates):
            raise ValueError(f"sampling rates must lie in (0, 1], got {rates}")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        L = self.shared_modes
        if not 0 <= L <= min(len(s) for s in shapes):
            raise ValueError(f"shared_modes={L} exceeds a tensor order")
        if any(s[:L] != shapes[0][:L] for s in shapes):
            raise ValueError("shared modes must have identical sizes across tensors")
        gam = self.rank if self.coupled_distance is None else int(self.coupled_distance)
        if not 1 <= gam <= self.rank:
            raise ValueError(f"coupled distance {gam} outside [1, {self.rank}]")
        object.__setattr__(self, "coupled_distance", gam)

    @classmethod
    def paper(cls, rank=4, shared_modes=3, sampling_rates=(0.05, 0.1), seed=0):
        """Two ``20 x 20 x 20 x 20`` tensors sharing their first three cores."""
        return cls(((20,) * 4,) * 2, rank, shared_modes, sampling_rates, seed=seed)

    @classmethod
    def desk(cls, rank=3, shared_modes=3, sampling_rates=(0.3, 0.3), seed=0):
        """Two ``10 x 10 x 10 x 10`` tensors; minutes instead of hours."""
        return cls(((10,) * 4,) * 2, rank, shared_modes, sampling_rates, seed=seed)

    def replace(self, **kw):
        fields = dict(shapes=self.shapes, rank=self.rank, shared_modes=self.shared_modes,
                      sampling_rates=self.sampling_rates,
                      coupled_distance=self.coupled_distance, seed=self.seed)
        if "rank" in kw and "coupled_distance" not in kw:
            fields["coupled_distance"] = None
        fields.update(kw)
        return SyntheticSpec(**fields)


@dataclass
class SyntheticData:
    """Ground truth, generating factors and observations of a synthetic draw."""

    spec: SyntheticSpec
    factors: list
    truths: list
    masks: list
    observed: list = field(init=False)

    def __post_init__(self):
        self.observed = [np.where(m.dense() > 0, t, 0.0) for t, m in zip(self.truths, self.masks)]

    @property
    def coupling(self):
        s = self.spec
        ranks = [(s.rank,) * len(shape) for shape in s.shapes]
        L = s.shared_modes
        return CouplingSpec(ranks, L, (s.coupled_distance,) * (L + 1) if L else None)

    @property
    def problem(self):
        """The completion problem; needs fewer coupled modes than every order."""
        return CoupledProblem(self.observed, self.masks, self.coupling)


def sample_mask(shape, rate, rng):
    """Uniform mask with exactly ``round(rate * size)`` entries."""
    size = int(np.prod(shape))
    count = int(round(rate * size))
    if count < 1:
        raise ValueError(f"sampling rate {rate} leaves no observed entry of a {shape} tensor")
    return ObservationMask(shape, rng.choice(size, count, replace=False))


def generate_synthetic(spec):
    """Draw coupled exact-TR tensors and their masks.

    Cores are i.i.d. standard normal, drawn tensor by tensor in mode order.
    The leading ``(Γ, :, Γ)`` blocks of the first ``L`` cores of every
    tensor are then overwritten with those of the first tensor, and the
    masks are drawn afterwards from the same generator.
    """
    rng = np.random.default_rng(spec.seed)
    factors = [random_factors(shape, spec.rank, rng) for shape in spec.shapes]
    g = spec.coupled_distance
    for f in factors[1:]:
        for d in range(spec.shared_modes):
            f.cores[d][:g, :, :g] = factors[0].cores[d][:g, :, :g]
    truths = [tr_contract(f) for f in factors]
    masks = [sample_mask(shape, r, rng) for shape, r in zip(spec.shapes, spec.sampling_rates)]
    return SyntheticData(spec, factors, truths, masks)
