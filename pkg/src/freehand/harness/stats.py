"""Two-sample comparisons for report annotations."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import betainc


class DegenerateSampleError(ValueError):
    pass


def welch_ttest(sample_a, sample_b) -> float:
    """Two-sided p-value of the unequal-variance two-sample t-test."""
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 values")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    se2 = va + vb
    diff = a.mean() - b.mean()
    if se2 == 0.0:
        if diff == 0.0:
            return 1.0
        raise DegenerateSampleError("both samples have zero variance")
    t = diff / math.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    # P(|T| > t) for Student t with df degrees of freedom
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def cohens_d(sample_a, sample_b) -> float:
    """Standardised mean difference ``(mean_b - mean_a) / pooled sd``."""
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    na, nb = len(a), len(b)
    pooled = math.sqrt(((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2))
    if pooled == 0.0:
        return 0.0 if a.mean() == b.mean() else math.copysign(math.inf, b.mean() - a.mean())
    return float((b.mean() - a.mean()) / pooled)
