"""Dense tensor primitives and observation masks.

Tensors are plain :class:`numpy.ndarray` objects. Wherever a tensor is
linearized (``vec``, unfoldings, file formats) the order is row-major
(C order): the last index varies fastest. Mode indices are 1-based in the
public API, matching the usual mathematical notation; internally they are
converted to 0-based axes exactly once, in :func:`_axis`.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible."""


def _axis(d, ndim):
    if not 1 <= d <= ndim:
        raise ValueError(f"mode index {d} out of range 1..{ndim}")
    return d - 1


def as_tensor(data, shape=None):
    """Return ``data`` as a float64 array, optionally reshaped (C order)."""
    t = np.asarray(data, dtype=float)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != t.size:
            raise DimensionError(f"{t.size} values cannot fill shape {shape}")
        t = t.reshape(shape)
    if t.ndim < 1 or min(t.shape) < 1:
        raise DimensionError(f"tensor must have order >= 1 and nonzero dims, got {t.shape}")
    return t


def inner(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.dot(x.ravel(), y.ravel()))


def fnorm(t):
    """Frobenius norm: square root of the sum of squared entries."""
    return float(np.linalg.norm(np.asarray(t, dtype=float).ravel()))


def coupled_fnorm(*tensors):
    """Coupled Frobenius norm ``sqrt(sum_n ||X_n||_F^2)``; shapes may differ."""
    return float(np.sqrt(sum(fnorm(t) ** 2 for t in tensors)))


def hadamard(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return a * b


class ObservationMask:
    """Set of observed multi-indices of a tensor.

    The canonical storage is a sorted array of unique C-order linear
    indices; the 0/1 indicator tensor and the multi-index list are derived
    views. Instances are immutable.

    Parameters
    ----------
    shape : tuple of int
        Shape of the masked tensor.
    linear : array_like of int
        Linear (C-order) indices of the observed entries. Must be unique and
        within bounds; order does not matter.
    """

    def __init__(self, shape, linear):
        self.shape = tuple(int(s) for s in shape)
        if len(self.shape) < 1 or min(self.shape) < 1:
            raise DimensionError(f"invalid mask shape {self.shape}")
        lin = np.asarray(linear, dtype=np.int64).ravel()
        size = int(np.prod(self.shape))
        if lin.size and (lin.min() < 0 or lin.max() >= size):
            raise IndexError("observation index out of bounds")
        srt = np.sort(lin)
        if srt.size > 1 and np.any(srt[1:] == srt[:-1]):
            raise ValueError("duplicate observation indices")
        srt.setflags(write=False)
        self._linear = srt

    @classmethod
    def from_dense(cls, w):
        w = np.asarray(w)
        return cls(w.shape, np.flatnonzero(w.ravel() != 0))

    @classmethod
    def from_multi_index(cls, shape, idx):
        """Build from an ``(m, D)`` array of 0-based multi-indices."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, len(shape))
        for d, n in enumerate(shape):
            if idx.size and (idx[:, d].min() < 0 or idx[:, d].max() >= n):
                raise IndexError("observation index out of bounds")
        return cls(shape, np.ravel_multi_index(tuple(idx.T), shape))

    @classmethod
    def full(cls, shape):
        return cls(shape, np.arange(int(np.prod(shape))))

    @property
    def linear(self):
        return self._linear

    @property
    def ndim(self):
        return len(self.shape)

    def __len__(self):
        return int(self._linear.size)

    def __eq__(self, other):
        return (
            isinstance(other, ObservationMask)
            and self.shape == other.shape
            and np.array_equal(self._linear, other._linear)
        )

    def __repr__(self):
        return f"ObservationMask(shape={self.shape}, nnz={len(self)})"

    @cached_property
    def multi_index(self):
        """``(m, D)`` array of 0-based multi-indices in sorted order."""
        if not len(self):
            return np.zeros((0, self.ndim), dtype=np.int64)
        out = np.stack(np.unravel_index(self._linear, self.shape), axis=1)
        out.setflags(write=False)
        return out

    def dense(self):
        """0/1 indicator tensor."""
        w = np.zeros(int(np.prod(self.shape)))
        w[self._linear] = 1.0
        return w.reshape(self.shape)

    def rows(self, d):
        """Group observations by their index along 1-based mode ``d``.

        Returns ``(order, starts)``: ``order`` permutes observations so that
        those with ``i_d = i`` occupy ``order[starts[i]:starts[i+1]]``. The
        grouping is a stable sort, so within a row observations stay in
        linear-index order.
        """
        return self._rows(_axis(d, self.ndim))

    def _rows(self, ax):
        cache = self.__dict__.setdefault("_rows_cache", {})
        if ax not in cache:
            key = self.multi_index[:, ax]
            order = np.argsort(key, kind="stable")
            counts = np.bincount(key, minlength=self.shape[ax])
            starts = np.concatenate(([0], np.cumsum(counts)))
            order.setflags(write=False)
            starts.setflags(write=False)
            cache[ax] = (order, starts)
        return cache[ax]

    def fibers(self, d):
        """Observations grouped by their indices outside mode ``d``.

        Returns ``(first, inverse)``: ``first`` picks one observation per
        distinct mode-``d`` fiber and ``inverse`` maps every observation to
        its fiber, so per-fiber quantities computed on ``first`` expand to
        all observations as ``values[inverse]``.
        """
        ax = _axis(d, self.ndim)
        cache = self.__dict__.setdefault("_fiber_cache", {})
        if ax not in cache:
            others = [k for k in range(self.ndim) if k != ax]
            if others:
                key = np.ravel_multi_index(tuple(self.multi_index[:, others].T),
                                           [self.shape[k] for k in others])
            else:
                key = np.zeros(len(self), dtype=np.int64)
            _, first, inverse = np.unique(key, return_index=True, return_inverse=True)
            first.setflags(write=False)
            inverse.setflags(write=False)
            cache[ax] = (first, inverse.ravel())
        return cache[ax]

    def gather(self, t):
        """Observed values of ``t`` in mask order."""
        t = np.asarray(t, dtype=float)
        if t.shape != self.shape:
            raise DimensionError(f"shape mismatch {t.shape} vs mask {self.shape}")
        return t.ravel()[self._linear]


def project(t, mask):
    """Keep observed entries of ``t`` and zero the rest."""
    t = np.asarray(t, dtype=float)
    if t.shape != mask.shape:
        raise DimensionError(f"shape mismatch {t.shape} vs mask {mask.shape}")
    out = np.zeros(t.size)
    out[mask.linear] = t.ravel()[mask.linear]
    return out.reshape(t.shape)


def _shift_perm(d, ndim):
    ax = _axis(d, ndim)
    return list(range(ax, ndim)) + list(range(ax))


def unfold_shift(t, d, h):
    """d-shifting h-unfolding.

    Cyclically permute the modes to ``[d, ..., D, 1, ..., d-1]`` and
    flatten the first ``h`` permuted modes into rows and the remaining ones
    into columns, both in C order. ``h = D`` yields a single column.
    """
    t = np.asarray(t, dtype=float)
    ndim = t.ndim
    if not 1 <= h <= ndim:
        raise ValueError(f"h={h} out of range 1..{ndim}")
    p = np.transpose(t, _shift_perm(d, ndim))
    rows = int(np.prod(p.shape[:h]))
    return p.reshape(rows, -1)


def fold_shift(mat, d, h, shape):
    """Inverse of :func:`unfold_shift`."""
    shape = tuple(int(s) for s in shape)
    ndim = len(shape)
    if not 1 <= h <= ndim:
        raise ValueError(f"h={h} out of range 1..{ndim}")
    perm = _shift_perm(d, ndim)
    pshape = [shape[p] for p in perm]
    mat = np.asarray(mat, dtype=float)
    if mat.size != int(np.prod(shape)):
        raise DimensionError("element count does not match shape")
    return np.transpose(mat.reshape(pshape), np.argsort(perm))
