"""Text file formats for tensors, observations, factor sets and problems.

All formats are whitespace-separated plain text with one header line per
shape description. Indices are 1-based on disk and values are written
with 17 significant digits so that a write/read round trip is exact.

* COO text v1: ``D I_1 ... I_D`` / ``nnz`` / ``nnz`` lines ``i_1 ... i_D value``.
* Dense: ``D I_1 ... I_D`` then every value, one per line, in C order.
* Factor set: ``D`` / ``R_1 ... R_{D+1}`` / ``I_1 ... I_D`` then every core
  in mode order, each flattened in C order over ``(R_d, I_d, R_{d+1})``.

A coupled problem is described by a JSON manifest::

    {"tensors": [{"file": "t1.coo", "rank": [3, 3, 3, 3],
                  "truth": "t1_truth.dense"}, ...],
     "shared_modes": 3,
     "coupled_distances": [3, 3, 3, 3],
     "config": {"max_iters": 200, "tol": 1e-8}}

Relative paths are resolved against the manifest's directory; ``truth``
and ``coupled_distances`` are optional.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import SolverConfig
from .coupled import CoupledProblem, CouplingSpec
from .ring import TRFactorSet
from .tensor import DimensionError, ObservationMask


class FormatError(ValueError):
    """Malformed input file."""


def _fmt(x):
    return repr(float(x))


def _tokens(path):
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise FormatError(f"{path}: empty file")
    return lines


def _shape_header(tokens, path):
    try:
        d = int(tokens[0])
        shape = tuple(int(x) for x in tokens[1:])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: bad shape header {' '.join(tokens)!r}") from exc
    if d < 1 or len(shape) != d or min(shape) < 1:
        raise FormatError(f"{path}: header declares order {d} with dims {shape}")
    return shape


def write_coo(path, tensor, mask):
    """Write the observed entries of ``tensor`` in COO text v1."""
    tensor = np.asarray(tensor, dtype=float)
    if tensor.shape != mask.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match tensor {tensor.shape}")
    idx = mask.multi_index + 1
    vals = mask.gather(tensor)
    with open(path, "w") as fh:
        fh.write(f"{tensor.ndim} {' '.join(map(str, tensor.shape))}\n{len(mask)}\n")
        for row, v in zip(idx, vals):
            fh.write(f"{' '.join(map(str, row))} {_fmt(v)}\n")


def read_coo(path):
    """Read COO text v1.

    Returns
    -------
    tensor : ndarray
        Observed values in place, zeros elsewhere.
    mask : ObservationMask
    """
    lines = _tokens(path)
    shape = _shape_header(lines[0], path)
    try:
        nnz = int(lines[1][0])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: missing entry count") from exc
    body = lines[2:]
    if len(body) != nnz:
        raise FormatError(f"{path}: header announces {nnz} entries, found {len(body)}")
    if nnz == 0:
        return np.zeros(shape), ObservationMask(shape, [])
    if any(len(row) != len(shape) + 1 for row in body):
        raise FormatError(f"{path}: every entry needs {len(shape)} indices and a value")
    arr = np.array(body, dtype=object)
    try:
        idx = arr[:, :-1].astype(np.int64) - 1
        vals = arr[:, -1].astype(float)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry") from exc
    if idx.min() < 0 or np.any(idx >= np.array(shape)):
        raise FormatError(f"{path}: index out of range")
    lin = np.ravel_multi_index(tuple(idx.T), shape)
    if np.unique(lin).size != lin.size:
        raise FormatError(f"{path}: duplicate indices")
    tensor = np.zeros(int(np.prod(shape)))
    tensor[lin] = vals
    return tensor.reshape(shape), ObservationMask(shape, lin)


def write_dense(path, tensor):
    tensor = np.asarray(tensor, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{tensor.ndim} {' '.join(map(str, tensor.shape))}\n")
        fh.writelines(f"{_fmt(v)}\n" for v in tensor.ravel())


def read_dense(path):
    lines = _tokens(path)
    shape = _shape_header(lines[0], path)
    try:
        vals = np.array([float(ln[0]) for ln in lines[1:]])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric value") from exc
    if vals.size != int(np.prod(shape)):
        raise FormatError(f"{path}: expected {int(np.prod(shape))} values, found {vals.size}")
    return vals.reshape(shape)


def write_factors(path, f):
    with open(path, "w") as fh:
        fh.write(f"{f.order}\n")
        fh.write(" ".join(map(str, f.ranks + (f.ranks[0],))) + "\n")
        fh.write(" ".join(map(str, f.shape)) + "\n")
        for c in f.cores:
            fh.writelines(f"{_fmt(v)}\n" for v in c.ravel())


def read_factors(path):
    lines = _tokens(path)
    try:
        d = int(lines[0][0])
        ranks = [int(x) for x in lines[1]]
        shape = [int(x) for x in lines[2]]
        vals = np.array([float(ln[0]) for ln in lines[3:]])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed factor file") from exc
    if len(ranks) != d + 1 or len(shape) != d or ranks[0] != ranks[-1]:
        raise FormatError(f"{path}: inconsistent header")
    sizes = [ranks[k] * shape[k] * ranks[k + 1] for k in range(d)]
    if vals.size != sum(sizes):
        raise FormatError(f"{path}: expected {sum(sizes)} values, found {vals.size}")
    cores, pos = [], 0
    for k, n in enumerate(sizes):
        cores.append(vals[pos:pos + n].reshape(ranks[k], shape[k], ranks[k + 1]))
        pos += n
    return TRFactorSet(cores)


def write_manifest(path, tensor_files, ranks, shared_modes, coupled_distances=None,
                   config=None, truth_files=None):
    entries = []
    for n, (fname, rank) in enumerate(zip(tensor_files, ranks)):
        e = {"file": str(fname), "rank": [int(r) for r in rank]}
        if truth_files is not None:
            e["truth"] = str(truth_files[n])
        entries.append(e)
    doc = {"tensors": entries, "shared_modes": int(shared_modes)}
    if coupled_distances is not None:
        doc["coupled_distances"] = [int(g) for g in coupled_distances]
    if config:
        doc["config"] = dict(config)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_manifest(path, base_config=None):
    """Load a coupled problem from a JSON manifest.

    Returns
    -------
    problem : CoupledProblem
    config : SolverConfig
        ``base_config`` updated with the manifest's overrides.
    truths : list of ndarray or None
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        entries = doc["tensors"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: invalid manifest") from exc
    root = path.parent
    tensors, masks, ranks, truths = [], [], [], []
    for e in entries:
        t, m = read_coo(root / e["file"])
        tensors.append(t)
        masks.append(m)
        ranks.append(tuple(e["rank"]))
        if "truth" in e:
            truths.append(read_dense(root / e["truth"]))
    gam = doc.get("coupled_distances")
    spec = CouplingSpec(ranks, doc.get("shared_modes", 0), None if gam is None else tuple(gam))
    cfg = (base_config or SolverConfig()).replace(**doc.get("config", {}))
    truths = truths if len(truths) == len(tensors) else None
    return CoupledProblem(tensors, masks, spec), cfg, truths


def write_report(path, report, extra=None):
    """Write a :class:`SolveReport` (plus optional fields) as JSON."""
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_report(path):
    return json.loads(Path(path).read_text())
