"""Chi-square tail probabilities and rank correlation."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.stats import rankdata
from scipy.stats import t as student_t

from .errors import ContractViolation

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _lower_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by its power series."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_fraction(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by modified Lentz continued fraction."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x) = Gamma(a, x) / Gamma(a)."""
    if a <= 0:
        raise ContractViolation("shape parameter must be positive")
    if x < 0 or math.isnan(x):
        raise ContractViolation("x must be non-negative")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _lower_series(a, x)
    return _upper_fraction(a, x)


def chi2_sf(x, dof: int):
    """Survival function Pr(X >= x) of a chi-square variable with ``dof`` degrees of freedom."""
    if dof < 1:
        raise ContractViolation("degrees of freedom must be >= 1")
    arr = np.asarray(x, dtype=np.float64)
    out = np.fromiter((gammaincc(dof / 2.0, v / 2.0) for v in arr.ravel()), dtype=np.float64, count=arr.size)
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    return float(a @ b / math.sqrt((a @ a) * (b @ b)))


def spearman_rank(x, y, exact_max_n: int = 10) -> tuple[float, float]:
    """Spearman rho and a two-sided p-value.

    For ``n <= exact_max_n`` the p-value is exact: the share of all ``n!``
    orderings of ``y``'s ranks whose |rho| reaches the observed one.  Larger
    samples use the t approximation with ``n - 2`` degrees of freedom.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractViolation("spearman_rank needs two 1-D arrays of equal length")
    n = len(x)
    if n < 3:
        raise ContractViolation("need at least 3 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ContractViolation("rank correlation is undefined for a constant vector")
    rx, ry = rankdata(x), rankdata(y)
    rho = _pearson(rx, ry)
    if n <= exact_max_n:
        p = _exact_permutation_pvalue(rx, ry, rho)
    else:
        if abs(rho) >= 1.0:
            p = 0.0
        else:
            tstat = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
            p = float(2.0 * student_t.sf(abs(tstat), n - 2))
    return rho, p


def _exact_permutation_pvalue(rx: np.ndarray, ry: np.ndarray, rho: float) -> float:
    n = len(rx)
    xc = rx - rx.mean()
    yc = ry - ry.mean()
    denom = math.sqrt((xc @ xc) * (yc @ yc))
    target = abs(rho) - 1e-12
    hits = total = 0
    perms = itertools.permutations(range(n))
    while True:
        chunk = np.array(list(itertools.islice(perms, 50_000)), dtype=np.intp)
        if chunk.size == 0:
            break
        r = (yc[chunk] @ xc) / denom
        hits += int(np.count_nonzero(np.abs(r) >= target))
        total += len(chunk)
    return hits / total
