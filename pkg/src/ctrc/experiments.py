"""Phase-transition sweeps and rank-sweep method comparisons.

Every run gets its own generator seeds derived from the master seed and
the run's grid coordinates, so results do not depend on execution order
or on whether cells run in worker processes.
"""

from __future__ import annotations

import csv
import itertools
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from time import perf_counter

import numpy as np

from ._driver import rmse
from .config import SolverConfig
from .coupled import CoupledProblem, CouplingSpec, solve_ctrc
from .ring import tr_als_complete
from .synthetic import generate_synthetic, sample_mask


def _grid(start, stop, step):
    n = int(round((stop - start) / step)) + 1
    return tuple(round(start + i * step, 10) for i in range(n))


@dataclass(frozen=True)
class ExperimentGrid:
    """Axes of a phase-transition sweep.

    Success of a run means the RMSE of the first tensor is below
    ``threshold``; a cell stores the fraction of successful repetitions.
    """

    sr1: tuple
    sr2: tuple
    ranks: tuple
    shared_modes: tuple
    repetitions: int = 1
    threshold: float = 1e-6

    def __post_init__(self):
        for name in ("sr1", "sr2", "ranks", "shared_modes"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"axis {name} is empty")
            object.__setattr__(self, name, vals)
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")

    @property
    def shape(self):
        return (len(self.sr2), len(self.shared_modes), len(self.ranks), len(self.sr1))

    @classmethod
    def desk(cls, repetitions=1):
        return cls(_grid(0.05, 0.4, 0.05), (0.1, 0.3), (2, 3, 4, 5), (1, 2, 3), repetitions)

    @classmethod
    def paper(cls, repetitions=1):
        return cls(_grid(0.005, 0.1, 0.005), _grid(0.05, 0.2, 0.05), tuple(range(2, 9)),
                   (1, 2, 3), repetitions)


@dataclass
class PhaseResult:
    grid: ExperimentGrid
    success: np.ndarray
    records: list


def cell_seeds(master, coords):
    """Independent (data, solver) seeds for the run at ``coords``."""
    ss = np.random.SeedSequence([int(master), *map(int, coords)])
    data, solver = ss.spawn(2)
    return int(data.generate_state(1)[0]), int(solver.generate_state(1)[0])


def _phase_run(args):
    coords, base, rank, L, sr1, sr2, cfg, master = args
    data_seed, solver_seed = cell_seeds(master, coords)
    rec = {"sr2": sr2, "shared_modes": L, "rank": rank, "sr1": sr1, "rep": coords[-1],
           "rmse1": math.nan, "rmse2": math.nan, "iterations": 0, "time": math.nan, "error": ""}
    try:
        spec = base.replace(rank=rank, shared_modes=L, sampling_rates=(sr1, sr2), seed=data_seed)
        data = generate_synthetic(spec)
        t0 = perf_counter()
        _, recons, report = solve_ctrc(data.problem, cfg.replace(seed=solver_seed))
        rec.update(time=perf_counter() - t0, iterations=report.iterations,
                   rmse1=rmse(recons[0], data.truths[0]), rmse2=rmse(recons[1], data.truths[1]))
    except Exception as exc:  # a failed cell must not abort the sweep
        rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["traceback"] = traceback.format_exc()
    return rec


def run_phase_transition(grid, base_spec, cfg=None, out_dir=None, workers=1, seed=0):
    """Success-rate heatmaps over (SR_2, L, rank, SR_1).

    Returns a :class:`PhaseResult` whose ``success`` array has shape
    ``grid.shape``. With ``out_dir`` set, writes ``runs.csv`` (one row per
    run) and one ``phase_sr2-<v>_L-<l>.csv`` sheet (rank x SR_1) per
    ``(SR_2, L)`` pair.
    """
    cfg = cfg or SolverConfig()
    if len(base_spec.shapes) != 2:
        raise ValueError("phase transitions need exactly two tensors")
    jobs = []
    for (a, sr2), (b, L), (c, rank), (e, sr1), rep in itertools.product(
            enumerate(grid.sr2), enumerate(grid.shared_modes), enumerate(grid.ranks),
            enumerate(grid.sr1), range(grid.repetitions)):
        jobs.append(((a, b, c, e, rep), base_spec, rank, L, sr1, sr2, cfg, seed))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_phase_run, jobs))
    else:
        records = [_phase_run(j) for j in jobs]
    success = np.zeros(grid.shape)
    for job, rec in zip(jobs, records):
        a, b, c, e, _ = job[0]
        success[a, b, c, e] += rec["rmse1"] < grid.threshold
    success /= grid.repetitions
    if out_dir is not None:
        write_phase_csv(out_dir, grid, success, records)
    return PhaseResult(grid, success, records)


RUN_FIELDS = ["sr2", "shared_modes", "rank", "sr1", "rep", "rmse1", "rmse2",
              "iterations", "time", "error"]


def write_phase_csv(out_dir, grid, success, records):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, RUN_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(records)
    paths = []
    for a, sr2 in enumerate(grid.sr2):
        for b, L in enumerate(grid.shared_modes):
            p = out / f"phase_sr2-{sr2:g}_L-{L}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["rank"] + [f"{s:g}" for s in grid.sr1])
                for c, rank in enumerate(grid.ranks):
                    w.writerow([rank] + [f"{v:g}" for v in success[a, b, c]])
            paths.append(p)
    return paths


COMPARE_FIELDS = ["rank", "rep", "method", "tensor", "rmse", "time", "iterations", "error"]
SUMMARY_FIELDS = ["rank", "method", "tensor", "rmse_mean", "rmse_std", "time_mean",
                  "time_std", "runs", "failures"]


def run_comparison(truths, sampling_rates, shared_modes, ranks, cfg=None, repetitions=10,
                   seed=0, coupled_distance=None, out_dir=None):
    """Coupled completion versus per-tensor TR-ALS over a rank sweep.

    For each rank and repetition, fresh masks are drawn at the given
    sampling rates and both methods run on the same observations.

    Returns ``(rows, summary)``: per-run rows (failed runs carry NaN) and
    per ``(rank, method, tensor)`` mean/std of RMSE and wall time. With
    ``out_dir`` set, both are written as ``compare_runs.csv`` and
    ``compare_summary.csv``.
    """
    cfg = cfg or SolverConfig()
    truths = [np.asarray(t, dtype=float) for t in truths]
    rows = []
    for rank in ranks:
        for rep in range(repetitions):
            data_seed, solver_seed = cell_seeds(seed, (rank, rep))
            rng = np.random.default_rng(data_seed)
            run_cfg = cfg.replace(seed=solver_seed)
            try:
                masks = [sample_mask(t.shape, r, rng) for t, r in zip(truths, sampling_rates)]
            except ValueError as exc:
                for method in ("coupled", "tr-als"):
                    rows += _failed(rank, rep, method, len(truths), exc)
                continue
            observed = [np.where(m.dense() > 0, t, 0.0) for t, m in zip(truths, masks)]
            rows += _compare_coupled(rank, rep, observed, masks, truths, shared_modes,
                                     coupled_distance, run_cfg)
            for n, (obs, m, t) in enumerate(zip(observed, masks, truths)):
                rows.append(_compare_als(rank, rep, n, obs, m, t, run_cfg))
    summary = summarize(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "compare_runs.csv", COMPARE_FIELDS, rows)
        _write_rows(out / "compare_summary.csv", SUMMARY_FIELDS, summary)
    return rows, summary


def _failed(rank, rep, method, n_tensors, exc):
    return [{"rank": rank, "rep": rep, "method": method, "tensor": n + 1, "rmse": math.nan,
             "time": math.nan, "iterations": 0, "error": f"{type(exc).__name__}: {exc}"}
            for n in range(n_tensors)]


def _compare_coupled(rank, rep, observed, masks, truths, L, gamma, cfg):
    try:
        ranks = [(rank,) * t.ndim for t in truths]
        gam = None if not L or gamma is None else (min(gamma, rank),) * (L + 1)
        problem = CoupledProblem(observed, masks, CouplingSpec(ranks, L, gam))
        t0 = perf_counter()
        _, recons, report = solve_ctrc(problem, cfg)
        elapsed = perf_counter() - t0
    except Exception as exc:
        return _failed(rank, rep, "coupled", len(truths), exc)
    return [{"rank": rank, "rep": rep, "method": "coupled", "tensor": n + 1,
             "rmse": rmse(x, t), "time": elapsed, "iterations": report.iterations, "error": ""}
            for n, (x, t) in enumerate(zip(recons, truths))]


def _compare_als(rank, rep, n, obs, mask, truth, cfg):
    try:
        t0 = perf_counter()
        _, report = tr_als_complete(obs, mask, rank, cfg, truth=truth)
        elapsed = perf_counter() - t0
    except Exception as exc:
        return _failed(rank, rep, "tr-als", n + 1, exc)[n]
    return {"rank": rank, "rep": rep, "method": "tr-als", "tensor": n + 1,
            "rmse": report.rmse[0][-1], "time": elapsed, "iterations": report.iterations,
            "error": ""}


def summarize(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r["rank"], r["method"], r["tensor"]), []).append(r)
    out = []
    for (rank, method, tensor), rs in groups.items():
        ok = [r for r in rs if not r["error"]]
        err = np.array([r["rmse"] for r in ok])
        tim = np.array([r["time"] for r in ok])
        out.append({
            "rank": rank, "method": method, "tensor": tensor,
            "rmse_mean": float(err.mean()) if ok else math.nan,
            "rmse_std": float(err.std()) if ok else math.nan,
            "time_mean": float(tim.mean()) if ok else math.nan,
            "time_std": float(tim.std()) if ok else math.nan,
            "runs": len(rs), "failures": len(rs) - len(ok),
        })
    return out


def _write_rows(path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fields, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
