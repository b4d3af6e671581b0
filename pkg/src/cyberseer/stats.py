"""Hypothesis tests (pooled t, Pearson, chi-square) and the special
functions behind their p-values."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, InvalidInputError, InvalidTableError, ZeroVarianceError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: float
    p_value: float

    def as_row(self) -> str:
        return f"{self.statistic!r},{self.df!r},{self.p_value!r}"


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise DomainError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if not (a > 0 and b > 0) or not math.isfinite(a) or not math.isfinite(b):
        raise DomainError("incomplete beta needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise DomainError("incomplete beta needs 0 <= x <= 1")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return min(1.0, front * _betacf(a, b, x) / a)
    return max(0.0, 1.0 - front * _betacf(b, a, 1.0 - x) / b)


def _lower_gamma_series(s: float, x: float) -> float:
    term = 1.0 / s
    total = term
    ap = s
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(-x + s * math.log(x) - math.lgamma(s))
    raise DomainError(f"gamma series did not converge for s={s}, x={x}")


def _upper_gamma_cf(s: float, x: float) -> float:
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        d = _TINY if abs(d) < _TINY else d
        c = b + an / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.exp(-x + s * math.log(x) - math.lgamma(s)) * h
    raise DomainError(f"gamma continued fraction did not converge for s={s}, x={x}")


def regularized_upper_gamma(s: float, x: float) -> float:
    """Q(s, x) = Gamma(s, x) / Gamma(s) for s > 0, x >= 0."""
    if not (s > 0 and math.isfinite(s)):
        raise DomainError("upper gamma needs s > 0")
    if not x >= 0:
        raise DomainError("upper gamma needs x >= 0")
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < s + 1.0:
        return max(0.0, 1.0 - _lower_gamma_series(s, x))
    return min(1.0, _upper_gamma_cf(s, x))


def t_two_tailed_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def _sample(values, name: str, min_n: int) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size < min_n:
        raise InvalidInputError(f"{name} needs at least {min_n} observations")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return x


def t_test_independent(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """Pooled-variance (Student) two-sample t-test, two-tailed."""
    x = _sample(a, "a", 2)
    y = _sample(b, "b", 2)
    na, nb = x.size, y.size
    df = na + nb - 2
    ssa = float(np.sum((x - x.mean()) ** 2))
    ssb = float(np.sum((y - y.mean()) ** 2))
    pooled = (ssa + ssb) / df
    if pooled == 0.0:
        raise ZeroVarianceError("both samples have zero variance")
    t = (float(x.mean()) - float(y.mean())) / math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    return TestResult(t, float(df), t_two_tailed_p(t, df))


def pearson(x: Sequence[float], y: Sequence[float]) -> TestResult:
    """Pearson r with a two-tailed p from t = r sqrt((n-2)/(1-r^2))."""
    xs = _sample(x, "x", 3)
    ys = _sample(y, "y", 3)
    if xs.size != ys.size:
        raise InvalidInputError("x and y differ in length")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    sxx = float(np.dot(xc, xc))
    syy = float(np.dot(yc, yc))
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVarianceError("pearson needs non-constant x and y")
    r = float(np.dot(xc, yc)) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = xs.size - 2
    if abs(r) == 1.0:
        return TestResult(r, float(df), 0.0)
    t = r * math.sqrt(df / (1.0 - r * r))
    return TestResult(r, float(df), t_two_tailed_p(t, df))


def chi_square_independence(table) -> TestResult:
    """Pearson chi-square test of independence on an r x c count table."""
    obs = np.asarray(table, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] < 2 or obs.shape[1] < 2:
        raise InvalidTableError("need a table with at least 2 rows and 2 columns")
    if not np.all(np.isfinite(obs)) or np.any(obs < 0):
        raise InvalidTableError("counts must be finite and non-negative")
    rows = obs.sum(axis=1)
    cols = obs.sum(axis=0)
    if np.any(rows <= 0) or np.any(cols <= 0):
        raise InvalidTableError("every row and column sum must be positive")
    expected = np.outer(rows, cols) / obs.sum()
    chi2 = float(np.sum((obs - expected) ** 2 / expected))
    df = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    return TestResult(chi2, float(df), regularized_upper_gamma(df / 2.0, chi2 / 2.0))
