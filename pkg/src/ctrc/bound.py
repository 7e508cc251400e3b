"""Numeric evaluation of the excess-risk bounds for coupled TR completion.

The factor entries are modelled as non-standardized Student-t variables
with hyperparameters ``(a, b)``. The squared F-norm of a core with ``k``
entries is approximated by ``(b/a) F(df1, df2)``, where ``F`` uses the
*half* degrees-of-freedom parametrization

    p(x) = df1^df1 df2^df2 x^(df1-1) / (B(df1, df2) (df1 x + df2)^(df1+df2)),

i.e. ``F(df1, df2)`` here is the textbook F distribution with ``2 df1``
and ``2 df2`` degrees of freedom. ``(df1, df2)`` depend on a free matching
parameter ``eps`` through :func:`df_star`; :func:`select_epsilon` picks it.

The coupled bound involves a truncated ``p+1 F p`` series whose argument
may have magnitude above one; in that case the series is re-expanded in
the reciprocal sample ratio (the "reciprocal" branch).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

PFQ_MAX_TERMS = 10_000
PFQ_TOL = 1e-14
BRANCHES = ("auto", "forward", "reciprocal")
SIGN_READINGS = ("power", "parity")


class BoundDomainError(ValueError):
    """Parameters outside the domain where a formula is defined."""


class SeriesConvergenceWarning(RuntimeWarning):
    """A hypergeometric series was truncated before it converged."""


@dataclass(frozen=True)
class BoundParams:
    """Inputs of the risk bounds.

    Parameters
    ----------
    a, b : float
        Student-t shape and scale of the factor entries (``a > 3``).
    k : int
        Entries per core, ``I * R**2``.
    D1, D2 : int
        Orders of the two tensors.
    L : int
        Number of coupled modes.
    T1, T2 : int
        Training sample counts.
    S1, S2 : int
        Test sample counts.
    lipschitz : float
        Lipschitz constant of the loss.
    delta : float
        Failure probability, ``0 < delta < 1``.
    """

    a: float
    b: float
    k: int
    D1: int
    D2: int
    L: int
    T1: int
    T2: int
    S1: int = 1
    S2: int = 1
    lipschitz: float = 1.0
    delta: float = 0.05

    def __post_init__(self):
        if not self.a > 3:
            raise BoundDomainError(f"a must exceed 3, got {self.a}")
        if not self.b > 0:
            raise BoundDomainError(f"b must be positive, got {self.b}")
        if self.k < 1:
            raise BoundDomainError(f"k must be >= 1, got {self.k}")
        if min(self.D1, self.D2) < 1:
            raise BoundDomainError("tensor orders must be >= 1")
        if not 0 <= self.L <= min(self.D1, self.D2):
            raise BoundDomainError(f"L={self.L} outside [0, {min(self.D1, self.D2)}]")
        if min(self.T1, self.T2, self.S1, self.S2) < 1:
            raise BoundDomainError("sample counts must be >= 1")
        if not self.lipschitz > 0:
            raise BoundDomainError("lipschitz constant must be positive")
        if not 0 < self.delta < 1:
            raise BoundDomainError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def n_train(self):
        return self.T1 + self.T2

    @property
    def n_total(self):
        return self.T1 + self.T2 + self.S1 + self.S2


@dataclass(frozen=True)
class SeriesResult:
    value: float
    converged: bool
    terms: int


@dataclass(frozen=True)
class BoundEvaluation:
    """A bound value together with how its series was evaluated."""

    value: float
    converged: bool
    branch: str
    argument: float
    terms: int
    df1: float
    df2: float

    def __float__(self):
        return float(self.value)


def _ratio(num_terms, den_terms, eps, label):
    num = sum(num_terms)
    den = sum(den_terms)
    scale = sum(abs(t) for t in den_terms) or 1.0
    if abs(den) <= 1e-14 * scale:
        raise BoundDomainError(f"{label} denominator vanishes at eps={eps!r}")
    return num / den


def df_star(a, k, eps):
    """Moment-matched degrees of freedom ``(df1, df2)`` at ``eps``.

    At ``eps = 0`` and ``k = 1`` the pair reduces to ``(1/2, a)``, the
    exact law of one squared entry.
    """
    a = float(a)
    k = float(k)
    e = float(eps)
    c = (a - 2) ** 2
    num1 = [
        -c * (a - 3) * e**2,
        -(a - 2) * (a * a * (k - 2) - a * (5 * k - 14) + 6 * k - 14) * e,
        (2 * a - 1) * (a * a * (k + 2) - a * (5 * k + 1) + 6 * k - 3),
    ]
    den1 = [
        c * (2 * a * k + a - 6 * k + 2) * e**2,
        (a - 2) * (a * a * (7 * k + 6) - 28 * a * k + 16 * k + a - 2) * e,
        2 * (2 * a - 1) * (a * a * (k + 2) - a * (5 * k + 1) + 3 * k),
    ]
    num2 = [
        c * (a - 3) * e**2,
        (a - 2) * (a * a * (k - 5) - a * (5 * k - 28) + 6 * (k - 4)) * e,
        -(2 * a - 1) * (a * a * (k + 2) - a * (5 * k - 2) + 6 * (k - 1)),
    ]
    den2 = [
        c * (a - 3) * e**2,
        -(3 * a**3 - 20 * a * a + 38 * a - 20) * e,
        -6 * (a - 0.5) * (a - 1),
    ]
    return k * _ratio(num1, den1, eps, "df1"), _ratio(num2, den2, eps, "df2")


def pfq(upper, lower, z, max_terms=PFQ_MAX_TERMS, tol=PFQ_TOL, warn=True):
    """Truncated generalized hypergeometric series ``pFq(upper; lower; z)``.

    Terms are accumulated until ``|term| < tol * |sum|`` with the terms
    shrinking and every shifted parameter non-negative (converged), or until
    ``max_terms`` terms have been added. A truncated or overflowing series
    is returned with ``converged=False`` and a
    :class:`SeriesConvergenceWarning`.

    The sum is first formed in double precision. When the largest term
    dwarfs the result (cancellation would eat more than a few digits) the
    same truncated series is re-summed in multiprecision arithmetic with
    enough guard digits.

    Raises
    ------
    ValueError
        If a lower parameter is a non-positive integer whose pole is
        reached before the series terminates.
    """
    upper = [float(u) for u in upper]
    lower = [float(v) for v in lower]
    z = float(z)
    total, converged, terms, peak = _pfq_sum(upper, lower, z, max_terms, tol, float, math.isfinite)
    if converged and total != 0.0 and peak > 1e4 * abs(total):
        import mpmath

        dps = 30
        while True:
            with mpmath.workdps(dps + int(math.log10(peak / abs(total)))):
                mp_total, converged, terms, _ = _pfq_sum(
                    upper, lower, z, max_terms, tol, mpmath.mpf, mpmath.isfinite)
                new = float(mp_total)
            if new != 0.0 and math.isclose(new, total, rel_tol=1e-12) or dps > 1000:
                total = new
                break
            total, dps = new, 2 * dps
    if not converged and warn:
        warnings.warn(f"pFq series not converged after {terms} terms (z={z:g})",
                      SeriesConvergenceWarning, stacklevel=2)
    return SeriesResult(float(total), converged, terms)


def _pfq_sum(upper, lower, z, max_terms, tol, num_type, isfinite):
    upper = [num_type(u) for u in upper]
    lower = [num_type(v) for v in lower]
    z = num_type(z)
    total = num_type(1)
    term = num_type(1)
    peak = 1.0
    # Terms may shrink and then grow again until every shifted parameter is
    # non-negative, so the stopping test is deferred past that index.
    settle = max([math.ceil(-float(x)) for x in (*upper, *lower) if x < 0], default=0)
    for n in range(max_terms - 1):
        num = z
        for u in upper:
            num *= u + n
        den = num_type(n + 1)
        for v in lower:
            den *= v + n
        if den == 0:
            if num == 0:
                return total, True, n + 1, peak
            raise ValueError(f"lower parameter is the non-positive integer {-n}")
        ratio = num / den
        term *= ratio
        if term == 0:
            return total, True, n + 1, peak
        new = total + term
        if not isfinite(new):
            return total, False, n + 1, peak
        total = new
        peak = max(peak, float(abs(term)))
        if n >= settle and abs(ratio) < 1 and abs(term) < tol * abs(total):
            return total, True, n + 2, peak
    return total, False, max_terms, peak


def beta_ratio(df1, df2):
    """``B(df1 + 1/2, df2 - 1/2) / B(df1, df2)``, the mean of ``sqrt(F) * sqrt(df1/df2)``."""
    if not (df1 > 0 and df2 > 0.5):
        raise BoundDomainError(f"need df1 > 0 and df2 > 1/2, got ({df1}, {df2})")
    return math.exp(math.lgamma(df1 + 0.5) + math.lgamma(df2 - 0.5)
                    - math.lgamma(df1) - math.lgamma(df2))


def beta_ratio_power(df1, df2, L):
    """``[B(df1 + 1/2, df2 - 1/2) / B(df1, df2)] ** L`` via log-Gamma."""
    if L < 0:
        raise BoundDomainError("L must be non-negative")
    log_r = math.log(beta_ratio(df1, df2))
    if L == 0:
        return 1.0
    return math.exp(L * log_r)


def confidence_term(n, delta):
    """``sqrt(2 n ln(1/delta) / (n - 1/2)^2)``."""
    return math.sqrt(2.0 * n * math.log(1.0 / delta)) / (n - 0.5)


def lipschitz_factor(lipschitz, n_train):
    """``Lambda (1 + 2 / (sqrt(2 pi n) - 2))``."""
    root = math.sqrt(2.0 * math.pi * n_train)
    if root <= 2.0:
        raise BoundDomainError("too few training samples for the concentration factor")
    return lipschitz * (1.0 + 2.0 / (root - 2.0))


def _resolve_df(p, eps, df):
    if (eps is None) == (df is None):
        raise TypeError("give exactly one of eps or df")
    df1, df2 = df if df is not None else df_star(p.a, p.k, eps)
    if not (df1 > 0 and df2 > 0.5):
        raise BoundDomainError(f"degrees of freedom ({df1}, {df2}) outside df1 > 0, df2 > 1/2")
    return float(df1), float(df2)


def series_argument(p, df1, df2, reciprocal=False, sign="power"):
    """Argument of the coupled-bound series.

    ``sign="power"`` evaluates ``-(T2/T1) (-rho)^(D1-D2)``; ``"parity"``
    evaluates ``(-1)^(D1+D2+1) (T2/T1) rho^(D1-D2)``. The two readings are
    algebraically identical. ``reciprocal`` swaps the roles of the tensors.
    """
    if sign not in SIGN_READINGS:
        raise ValueError(f"sign must be one of {SIGN_READINGS}")
    rho = df2 * p.b / (df1 * p.a)
    t_a, t_b, expo = (p.T1, p.T2, p.D2 - p.D1) if reciprocal else (p.T2, p.T1, p.D1 - p.D2)
    if sign == "power":
        return -(t_a / t_b) * (-rho) ** expo
    return (-1.0) ** (p.D1 + p.D2 + 1) * (t_a / t_b) * rho ** expo


def _series_params(df1, df2, m, n, reciprocal):
    if reciprocal:
        m, n = n, m
    upper = [df1] * m + [df2 - 0.5] * n + [-0.5]
    lower = [1.0 - df2] * m + [0.5 - df1] * n
    return upper, lower


def coupled_bound(p, eps=None, *, df=None, branch="auto", sign="power",
                  max_terms=PFQ_MAX_TERMS, tol=PFQ_TOL):
    """Excess-risk bound of coupled completion.

    Exactly one of ``eps`` (matching parameter fed to :func:`df_star`) or
    ``df=(df1, df2)`` must be given. ``branch="auto"`` uses the forward
    expansion when its argument has magnitude below one and the reciprocal
    expansion otherwise.
    """
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}")
    df1, df2 = _resolve_df(p, eps, df)
    rho = df2 * p.b / (df1 * p.a)
    if branch == "auto":
        z = series_argument(p, df1, df2, False, sign)
        branch = "forward" if abs(z) < 1 else "reciprocal"
    reciprocal = branch == "reciprocal"
    z = series_argument(p, df1, df2, reciprocal, sign)
    upper, lower = _series_params(df1, df2, p.D1 - p.L, p.D2 - p.L, reciprocal)
    series = pfq(upper, lower, z, max_terms, tol)
    order, samples = (p.D1, p.T1) if reciprocal else (p.D2, p.T2)
    lead = rho ** (order / 2) / math.sqrt(samples) * series.value
    value = (lipschitz_factor(p.lipschitz, p.n_train) * beta_ratio_power(df1, df2, p.L) * lead
             + confidence_term(p.n_total, p.delta))
    return BoundEvaluation(value, series.converged, branch, z, series.terms, df1, df2)


def individual_bound(p, n, eps=None, *, df=None):
    """Excess-risk bound of completing tensor ``n`` (1 or 2) on its own."""
    if n not in (1, 2):
        raise ValueError("tensor index must be 1 or 2")
    df1, df2 = _resolve_df(p, eps, df)
    order, train, test = (p.D1, p.T1, p.S1) if n == 1 else (p.D2, p.T2, p.S2)
    rho = df2 * p.b / (df1 * p.a)
    lead = rho ** (order / 2) * beta_ratio_power(df1, df2, order) / math.sqrt(train)
    return (lipschitz_factor(p.lipschitz, train) * lead
            + confidence_term(train + test, p.delta))


def supremum_bound(p, eps=None, *, df=None):
    """Closed-form upper estimate of :func:`coupled_bound` via ``E sqrt(X) <= sqrt(E X)``."""
    df1, df2 = _resolve_df(p, eps, df)
    rho = df2 * p.b / (df1 * p.a)
    kappa = p.k * p.b / (p.a - 1)
    spread = math.sqrt(kappa ** (p.D1 - p.L) / p.T1 + kappa ** (p.D2 - p.L) / p.T2)
    lead = rho ** (p.L / 2) * beta_ratio_power(df1, df2, p.L) * spread
    return (lipschitz_factor(p.lipschitz, p.n_train) * lead
            + confidence_term(p.n_total, p.delta))


def entry_moments(a, k):
    """Mean and variance of a sum of ``k`` squared entries, in units of ``b/a``.

    Each squared entry follows ``F(1/2, a)`` in the half parametrization.
    """
    mean, var = f_moments(0.5, a)
    return k * mean, k * var


def f_moments(df1, df2):
    """Mean and variance of ``F(df1, df2)`` (half parametrization); needs ``df2 > 2``."""
    if not (df1 > 0 and df2 > 2):
        raise BoundDomainError(f"moments need df1 > 0 and df2 > 2, got ({df1}, {df2})")
    mean = df2 / (df2 - 1)
    var = df2**2 * (df1 + df2 - 1) / (df1 * (df2 - 1) ** 2 * (df2 - 2))
    return mean, var


def _moment_score(a, k, df1, df2):
    # The matched law is lambda * F(df1, df2) with lambda fixed by the mean,
    # so only the scale-free variance (squared coefficient of variation)
    # is left to compare.
    m0, v0 = entry_moments(a, k)
    m1, v1 = f_moments(df1, df2)
    cv0, cv1 = v0 / m0**2, v1 / m1**2
    return ((cv1 - cv0) / cv0) ** 2


def _ks_score(a, k, df1, df2, sums):
    from scipy import stats

    scale = (df2 / (df2 - 1)) / entry_moments(a, k)[0]
    return stats.kstest(sums * scale, stats.f(2 * df1, 2 * df2).cdf).statistic


def select_epsilon(a, k, grid=None, method="moments", samples=20_000, seed=0):
    """Grid search for the matching parameter.

    The sum ``S`` of ``k`` squared entries is compared with
    ``lambda * F(df1(eps), df2(eps))``, ``lambda`` chosen so the means
    agree. ``method="moments"`` minimizes the squared relative mismatch of
    the remaining (scale-free) variance; ``method="ks"`` minimizes the
    Kolmogorov-Smirnov distance to a Monte Carlo sample of ``S``. Grid
    points where the degrees of freedom are undefined or outside the
    moment domain are skipped.

    Returns ``(eps, df1, df2, score)``.
    """
    if method not in ("moments", "ks"):
        raise ValueError("method must be 'moments' or 'ks'")
    grid = np.linspace(-1.0, 2.0, 301) if grid is None else np.asarray(grid, dtype=float)
    sums = None
    if method == "ks":
        rng = np.random.default_rng(seed)
        sums = rng.f(1.0, 2.0 * a, size=(samples, int(k))).sum(axis=1)
    best = None
    for eps in grid:
        try:
            df1, df2 = df_star(a, k, eps)
            if not (df1 > 0 and df2 > 2):
                continue
            if method == "moments":
                score = _moment_score(a, k, df1, df2)
            else:
                score = _ks_score(a, k, df1, df2, sums)
        except BoundDomainError:
            continue
        if best is None or score < best[3]:
            best = (float(eps), df1, df2, float(score))
    if best is None:
        raise BoundDomainError("no admissible eps on the grid")
    return best
