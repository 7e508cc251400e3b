"""Outer iteration loop shared by TR-ALS and coupled BCD."""

from time import perf_counter

import numpy as np

from .config import SolveReport


def relative_change(new, old):
    """Coupled F-norm of ``new - old`` over the coupled F-norm of ``old``."""
    num = sum(float(np.dot((a - b).ravel(), (a - b).ravel())) for a, b in zip(new, old))
    den = sum(float(np.dot(b.ravel(), b.ravel())) for b in old)
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return float(np.sqrt(num / den))


def rmse(estimate, truth):
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        from .tensor import DimensionError

        raise DimensionError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    diff = (estimate - truth).ravel()
    return float(np.sqrt(np.dot(diff, diff) / diff.size))


def run_bcd(fsets, sweep, objective_fn, cfg, reconstruct, truths=None):
    """Run sweeps until the relative change drops below ``cfg.tol``.

    ``sweep(notify)`` performs one full pass over all factor updates and
    calls ``notify()`` after each one; ``objective_fn`` maps the list of
    reconstructions to the scalar objective.
    """
    report = SolveReport()
    recons = [reconstruct(f) for f in fsets]

    def notify():
        if cfg.track_updates:
            report.update_objectives.append(objective_fn([reconstruct(f) for f in fsets]))

    if cfg.track_updates:
        report.update_objectives.append(objective_fn(recons))
    if truths is not None:
        report.rmse = {n: [] for n in range(len(truths))}
    start = perf_counter()
    for _ in range(int(cfg.max_iters)):
        t0 = perf_counter()
        sweep(notify)
        new = [reconstruct(f) for f in fsets]
        report.iteration_times.append(perf_counter() - t0)
        report.iterations += 1
        report.objective.append(objective_fn(new))
        rc = relative_change(new, recons)
        report.relative_change.append(rc)
        if truths is not None:
            for n, tr in enumerate(truths):
                report.rmse[n].append(rmse(new[n], tr))
        recons = new
        if rc < cfg.tol:
            report.converged = True
            break
    report.wall_time = perf_counter() - start
    return report
