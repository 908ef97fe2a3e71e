"""Pearson correlation and Welch's t-test with self-contained numerics.

The Student t distribution function is evaluated through the regularized
incomplete beta function, computed with a Lentz-style continued fraction
to 1e-12 absolute accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError

_CF_EPS = 1e-15
_CF_FPMIN = 1e-300
_CF_MAX_ITER = 500


@dataclass(frozen=True)
class TestResult:
    statistic: float
    dof: float
    p_value: float
    n1: int
    n2: int


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz scheme."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_FPMIN:
        d = _CF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0.0 or b <= 0.0:
        raise InvalidArgumentError(f"beta parameters must be positive, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # use whichever tail the continued fraction converges fastest on
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def student_t_sf(t: float, dof: float) -> float:
    """Upper tail P(T > t) of Student's t. Exactly 0.5 at t = 0."""
    if dof <= 0.0:
        raise InvalidArgumentError(f"dof must be positive, got {dof}")
    if math.isnan(t):
        return math.nan
    if t < 0.0:
        return 1.0 - student_t_sf(-t, dof)
    if math.isinf(t):
        return 0.0
    return 0.5 * betainc_reg(dof / 2.0, 0.5, dof / (dof + t * t))


def student_t_cdf(t: float, dof: float) -> float:
    """P(T <= t) of Student's t with the given degrees of freedom.

    Built so that cdf(x) + cdf(-x) = 1 holds exactly.
    """
    if t < 0.0:
        return student_t_sf(-t, dof)
    return 1.0 - student_t_sf(t, dof)


def pearson_p_from_r(rho: float, n: int) -> float:
    """Two-sided p-value of a sample correlation under the null rho = 0."""
    if n < 3:
        raise InvalidArgumentError(f"need at least 3 observations, got {n}")
    denom = 1.0 - rho * rho
    if denom <= 0.0:
        return 0.0
    t = abs(rho) * math.sqrt((n - 2) / denom)
    return 2.0 * student_t_sf(t, float(n - 2))


def pearson(xs, ys) -> tuple[float, float]:
    """Sample Pearson correlation with its two-sided p-value."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise InvalidArgumentError("inputs must be 1-D sequences of equal length")
    n = x.size
    if n < 3:
        raise InvalidArgumentError(f"need at least 3 observations, got {n}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise InvalidArgumentError("inputs must be finite")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        which = "xs" if sxx == 0.0 else "ys"
        raise DegenerateInputError(f"correlation undefined: {which} has zero variance")
    rho = float(dx @ dy) / math.sqrt(sxx * syy)
    rho = max(-1.0, min(1.0, rho))
    return rho, pearson_p_from_r(rho, n)


def welch_t_test(a, b) -> TestResult:
    """Welch's two-sample t-test (unequal variances), two-sided.

    dof follows Welch-Satterthwaite; the p-value comes from the Student t
    distribution via the regularized incomplete beta.
    """
    xa = np.asarray(a, dtype=np.float64)
    xb = np.asarray(b, dtype=np.float64)
    if xa.ndim != 1 or xb.ndim != 1:
        raise InvalidArgumentError("samples must be 1-D sequences")
    n1, n2 = xa.size, xb.size
    if n1 < 2 or n2 < 2:
        raise InvalidArgumentError(f"each sample needs >= 2 values, got {n1} and {n2}")
    if not (np.isfinite(xa).all() and np.isfinite(xb).all()):
        raise InvalidArgumentError("samples must be finite")
    v1 = float(xa.var(ddof=1))
    v2 = float(xb.var(ddof=1))
    if v1 == 0.0 and v2 == 0.0:
        raise DegenerateInputError("both samples have zero variance")
    q1 = v1 / n1
    q2 = v2 / n2
    se2 = q1 + q2
    t = (float(xa.mean()) - float(xb.mean())) / math.sqrt(se2)
    dof = se2 * se2 / (q1 * q1 / (n1 - 1) + q2 * q2 / (n2 - 1))
    p = 2.0 * student_t_sf(abs(t), dof)
    return TestResult(statistic=t, dof=dof, p_value=min(p, 1.0), n1=n1, n2=n2)
