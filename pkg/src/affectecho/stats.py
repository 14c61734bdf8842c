"""Paired significance tests with hand-rolled distributions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EXACT_MAX_N = 12
ALTERNATIVES = ("greater", "less", "two-sided")


class TestError(ValueError):
    """Raised when a test statistic is undefined."""
    __test__ = False


@dataclass
class TestResult:
    statistic: float
    p_value: float
    n: int
    method: str

    def __iter__(self):
        return iter((self.statistic, self.p_value))


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, ties get the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    s = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _phi(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def signed_rank_null(ranks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Null distribution of V for the given (possibly tied) ranks.

    Works on doubled ranks, which are integers even with midranks; returns
    the support in V units and the probabilities.
    """
    r2 = np.rint(2 * np.asarray(ranks)).astype(int)
    counts = np.zeros(r2.sum() + 1)
    counts[0] = 1.0
    for r in r2:
        counts[r:] = counts[r:] + counts[:-r]
    support = np.arange(len(counts)) / 2.0
    return support, counts / counts.sum()


def _tail(support, prob, v, alternative):
    eps = 1e-9
    upper = prob[support >= v - eps].sum()
    lower = prob[support <= v + eps].sum()
    if alternative == "greater":
        return upper
    if alternative == "less":
        return lower
    return min(1.0, 2 * min(upper, lower))


def wilcoxon_signed_rank(a, b, alternative: str = "greater", exact: bool | None = None) -> TestResult:
    """Signed-rank test on a - b; V is the sum of ranks of positive differences.

    Zero differences are dropped.  Exact null enumeration for n <= 12,
    otherwise a normal approximation with tie and 0.5 continuity correction.
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-d and equal length")
    if len(a) < 5:
        raise ValueError("need at least 5 pairs")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise TestError("all differences are zero")
    r = midranks(np.abs(d))
    v = float(r[d > 0].sum())
    if exact is None:
        exact = n <= EXACT_MAX_N
    if exact:
        support, prob = signed_rank_null(r)
        return TestResult(v, float(_tail(support, prob, v, alternative)), n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(r, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    sd = math.sqrt(var)
    if alternative == "greater":
        p = 1.0 - _phi((v - mean - 0.5) / sd)
    elif alternative == "less":
        p = _phi((v - mean + 0.5) / sd)
    else:
        z = (abs(v - mean) - 0.5) / sd
        p = min(1.0, 2.0 * (1.0 - _phi(max(z, 0.0))))
    return TestResult(v, float(p), n, "normal")


# -- Student t ------------------------------------------------------------------------
def _betacf(a: float, b: float, x: float, max_iter: int = 300, tol: float = 1e-15) -> float:
    """Continued fraction of the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = math.exp(lbeta + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """P(T >= t) for Student's t with ``df`` degrees of freedom."""
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return tail if t >= 0 else 1.0 - tail


def one_tailed_t_test(a, b, alternative: str = "greater") -> TestResult:
    """Paired t-test on a - b (H1: mean difference > 0 for ``greater``)."""
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-d and equal length")
    n = len(a)
    if n < 2:
        raise ValueError("need at least 2 pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0 or not np.isfinite(sd):
        raise TestError("differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(n)))
    df = n - 1
    if alternative == "greater":
        p = student_t_sf(t, df)
    elif alternative == "less":
        p = student_t_sf(-t, df)
    else:
        p = min(1.0, 2.0 * student_t_sf(abs(t), df))
    return TestResult(t, float(p), n, "t")
