"""Solver configuration and run reports shared by TR-ALS and coupled BCD."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

INIT_METHODS = ("random-normal", "tr-svd-zero-fill")


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule, seeding and initialization of an iterative solve.

    ``max_iters`` defaults to 200 (synthetic experiments); use 100 for
    real data. The run stops once the relative change of the
    reconstruction drops below ``tol``.
    """

    max_iters: int = 200
    tol: float = 1e-8
    seed: int = 0
    init: str = "random-normal"
    parallel_rows: bool = False
    threads: int = 1
    track_updates: bool = False

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {INIT_METHODS}, got {self.init!r}")
        if int(self.threads) < 1:
            raise ValueError("threads must be >= 1")

    def replace(self, **kw):
        return SolverConfig(**{**asdict(self), **kw})

    def rng(self):
        """Generator for random initial factors.

        It is a child stream of ``seed`` so that a solver never replays the
        draws of a data generator seeded with the same integer.
        """
        return np.random.default_rng(np.random.SeedSequence(int(self.seed), spawn_key=(1,)))


@dataclass
class SolveReport:
    """Per-iteration trace of a solve.

    ``objective[k]`` and ``relative_change[k]`` are recorded after sweep
    ``k + 1``. ``update_objectives`` (only with ``track_updates``) holds
    the objective after every single factor update, starting with the
    value at initialization. ``rmse`` maps tensor index to its RMSE trace
    against ground truth when truth was supplied.
    """

    iterations: int = 0
    objective: list = field(default_factory=list)
    relative_change: list = field(default_factory=list)
    wall_time: float = 0.0
    iteration_times: list = field(default_factory=list)
    converged: bool = False
    rmse: dict = field(default_factory=dict)
    update_objectives: list = field(default_factory=list)

    def to_dict(self):
        out = asdict(self)
        out["rmse"] = {str(k): v for k, v in self.rmse.items()}
        return out
