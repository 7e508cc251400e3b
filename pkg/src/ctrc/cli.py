"""Command-line interface: ``ctrc <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io
from .bound import BoundParams, coupled_bound, individual_bound, select_epsilon, supremum_bound
from .config import INIT_METHODS, SolverConfig
from .coupled import solve_ctrc
from .experiments import ExperimentGrid, run_comparison, run_phase_transition
from .ring import tr_als_complete, tr_contract
from .synthetic import SyntheticSpec, generate_synthetic

log = logging.getLogger("ctrc")


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x)


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x)


def _config(args):
    kw = {"seed": args.seed, "threads": args.threads, "parallel_rows": args.threads > 1,
          "init": args.init}
    if args.tol is not None:
        kw["tol"] = args.tol
    if args.max_iters is not None:
        kw["max_iters"] = args.max_iters
    return SolverConfig(**kw)


def _overrides(args):
    """Solver settings given explicitly on the command line."""
    kw = {}
    if args.tol is not None:
        kw["tol"] = args.tol
    if args.max_iters is not None:
        kw["max_iters"] = args.max_iters
    return kw


def _out(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args):
    if args.preset == "paper":
        spec = SyntheticSpec.paper(args.rank, args.shared_modes, args.sr, args.seed)
    else:
        shapes = [_ints(s) for s in args.shape] if args.shape else [(10,) * 4] * len(args.sr)
        spec = SyntheticSpec(shapes, args.rank, args.shared_modes, args.sr, args.gamma, args.seed)
    data = generate_synthetic(spec)
    out = _out(args)
    files, truths = [], []
    for n, (t, m, f) in enumerate(zip(data.truths, data.masks, data.factors), start=1):
        io.write_coo(out / f"t{n}.coo", t, m)
        io.write_dense(out / f"t{n}_truth.dense", t)
        io.write_factors(out / f"t{n}_truth.tr", f)
        files.append(f"t{n}.coo")
        truths.append(f"t{n}_truth.dense")
    L = spec.shared_modes
    io.write_manifest(out / "manifest.json", files, [(spec.rank,) * len(s) for s in spec.shapes],
                      L, (spec.coupled_distance,) * (L + 1) if L else None,
                      _overrides(args), truths)
    print(out / "manifest.json")


def cmd_complete(args):
    problem, cfg, truths = io.read_manifest(args.manifest, _config(args))
    cfg = cfg.replace(**_overrides(args))
    fsets, recons, report = solve_ctrc(problem, cfg, truths=truths)
    out = _out(args)
    for n, (f, x) in enumerate(zip(fsets, recons), start=1):
        io.write_factors(out / f"x{n}.tr", f)
        io.write_dense(out / f"x{n}.dense", x)
    io.write_report(out / "report.json", report)
    final = {n + 1: v[-1] for n, v in report.rmse.items()}
    print(f"iterations={report.iterations} converged={report.converged} "
          f"objective={report.objective[-1]:.6g} rmse={final}")


def cmd_als(args):
    t, mask = io.read_coo(args.input)
    truth = io.read_dense(args.truth) if args.truth else None
    rank = _ints(args.rank)
    f, report = tr_als_complete(t, mask, rank if len(rank) > 1 else rank[0], _config(args), truth)
    out = _out(args)
    io.write_factors(out / "als.tr", f)
    io.write_dense(out / "als.dense", tr_contract(f))
    io.write_report(out / "als_report.json", report)
    msg = f"iterations={report.iterations} objective={report.objective[-1]:.6g}"
    if truth is not None:
        msg += f" rmse={report.rmse[0][-1]:.6g}"
    print(msg)


def cmd_phase(args):
    grid = (ExperimentGrid.paper if args.preset == "paper" else ExperimentGrid.desk)(args.reps)
    axes = {k: getattr(args, k) for k in ("sr1", "sr2", "ranks", "shared_modes")
            if getattr(args, k)}
    if axes or args.threshold:
        fields = {**grid.__dict__, **axes}
        if args.threshold:
            fields["threshold"] = args.threshold
        grid = ExperimentGrid(**fields)
    base = SyntheticSpec.paper() if args.preset == "paper" else SyntheticSpec.desk()
    result = run_phase_transition(grid, base, _config(args), _out(args), args.workers, args.seed)
    failed = sum(1 for r in result.records if r["error"])
    print(f"{len(result.records)} runs, {failed} failed, mean success "
          f"{result.success.mean():.3f}; CSVs in {args.out_dir}")


def cmd_compare(args):
    problem, cfg, truths = io.read_manifest(args.manifest, _config(args))
    cfg = cfg.replace(**_overrides(args))
    if truths is None:
        raise ValueError("compare needs ground-truth files in the manifest")
    rates = [len(m) / m.dense().size for m in problem.masks]
    _, summary = run_comparison(truths, rates, problem.spec.shared_modes, _ints(args.ranks),
                                cfg, args.reps, args.seed, args.gamma, _out(args))
    for row in summary:
        print(f"rank={row['rank']} {row['method']:8s} tensor={row['tensor']} "
              f"rmse={row['rmse_mean']:.3e}±{row['rmse_std']:.1e} time={row['time_mean']:.3f}s")


BOUND_FIELDS = ("a", "b", "k", "D1", "D2", "L", "T1", "T2", "S1", "S2", "lipschitz", "delta")


def _bound_value(fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except ValueError as exc:
        log.warning("%s", exc)
        return math.nan


def cmd_bound(args):
    base = {f: getattr(args, f) for f in BOUND_FIELDS}
    name, values = "L", [base["L"]]
    if args.sweep:
        name, _, vals = args.sweep.partition("=")
        if name not in BOUND_FIELDS:
            raise ValueError(f"cannot sweep unknown parameter {name!r}")
        values = [float(v) if name in ("a", "b", "lipschitz", "delta") else int(v)
                  for v in vals.split(",")]
    out = _out(args)
    path = out / "bound.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([name, "eps", "df1", "df2", "coupled", "converged", "branch",
                    "individual1", "individual2", "supremum"])
        for v in values:
            p = BoundParams(**{**base, name: v})
            eps = args.eps if args.eps is not None else select_epsilon(p.a, p.k)[0]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                cb = _bound_value(coupled_bound, p, eps)
            row = [v, eps]
            if isinstance(cb, float):
                row += [math.nan, math.nan, math.nan, False, ""]
            else:
                row += [cb.df1, cb.df2, cb.value, cb.converged, cb.branch]
            row += [_bound_value(individual_bound, p, 1, eps),
                    _bound_value(individual_bound, p, 2, eps),
                    _bound_value(supremum_bound, p, eps)]
            w.writerow(row)
    print(path)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1, help="threads for row solves")
    g.add_argument("--tol", type=float, default=None, help="relative-change stopping threshold")
    g.add_argument("--max-iters", type=int, default=None)
    g.add_argument("--out-dir", default=".")
    g.add_argument("--init", choices=INIT_METHODS, default="random-normal")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ctrc", description="Coupled tensor-ring completion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic coupled problem")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--shape", action="append", help="comma-separated dims, once per tensor")
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--shared-modes", type=int, default=3)
    p.add_argument("--sr", type=_floats, default=(0.3, 0.3), help="sampling rates, e.g. 0.1,0.3")
    p.add_argument("--gamma", type=int, default=None, help="coupled distance")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("complete", parents=[common], help="coupled completion from a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("als", parents=[common], help="single-tensor TR-ALS baseline")
    p.add_argument("input", help="COO text v1 file")
    p.add_argument("--rank", required=True, help="scalar or comma-separated TR rank")
    p.add_argument("--truth", help="dense ground-truth file for RMSE")
    p.set_defaults(func=cmd_als)

    p = sub.add_parser("phase", parents=[common], help="phase-transition sweep")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--sr1", type=_floats)
    p.add_argument("--sr2", type=_floats)
    p.add_argument("--ranks", type=_ints)
    p.add_argument("--shared-modes", type=_ints)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--threshold", type=float)
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_phase)

    p = sub.add_parser("compare", parents=[common], help="coupled vs TR-ALS rank sweep")
    p.add_argument("manifest", help="manifest with truth files")
    p.add_argument("--ranks", default="2,3,4")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--gamma", type=int, default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bound", parents=[common], help="risk-bound table")
    for f, typ, default in (("a", float, 5.0), ("b", float, 1.0), ("k", int, 90),
                            ("D1", int, 4), ("D2", int, 4), ("L", int, 3),
                            ("T1", int, 3000), ("T2", int, 300), ("S1", int, 1000),
                            ("S2", int, 1000), ("lipschitz", float, 1.0),
                            ("delta", float, 0.05)):
        p.add_argument(f"--{f}", type=typ, default=default)
    p.add_argument("--eps", type=float, default=None,
                   help="matching parameter; chosen by moment matching when omitted")
    p.add_argument("--sweep", help="NAME=v1,v2,... one row per value")
    p.set_defaults(func=cmd_bound)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with np.errstate(all="ignore"):
            args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"ctrc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
