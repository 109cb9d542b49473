"""Pearson and partial correlations with t-test p-values, Benjamini-Hochberg
adjustment, and the feature-by-outcome correlation sweep.

Standard deviations use the sample (n - 1) denominator throughout.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import special

from .errors import CollinearityError, DegenerateColumnError, InsufficientDataError, InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_Q = 0.01

# relative residual norm below which a column counts as explained by others
_RANK_TOL = 1e-10


def z_normalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise InvalidInputError("z_normalize needs a vector of length >= 2")
    if np.ptp(x) == 0:
        raise DegenerateColumnError("zero-variance column cannot be z-normalized")
    return (x - x.mean()) / x.std(ddof=1)


def t_test_p(r: float, df: int) -> float:
    """Two-tailed p-value of a correlation ``r`` with ``df`` degrees of freedom,
    ``t = r * sqrt(df / (1 - r^2))``, via the regularized incomplete beta."""
    if df < 1:
        raise InvalidInputError("need at least one degree of freedom")
    r2 = r * r
    if r2 >= 1.0:
        return 0.0
    # P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2) and df/(df+t^2) = 1 - r^2
    return float(special.betainc(0.5 * df, 0.5, 1.0 - r2))


def _corr(dx: np.ndarray, dy: np.ndarray) -> float:
    r = float(np.dot(dx, dy) / math.sqrt(np.dot(dx, dx) * np.dot(dy, dy)))
    return min(1.0, max(-1.0, r))


def pearson_r(x, y):
    """Product-moment correlation and its two-tailed p-value (df = n - 2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError("x and y must be vectors of equal length")
    n = x.size
    if n < 3:
        raise InsufficientDataError("pearson_r needs n >= 3, got %d" % n)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateColumnError("constant input to pearson_r")
    r = _corr(x - x.mean(), y - y.mean())
    return r, t_test_p(r, n - 2)


def _as_covariates(Z, n):
    if Z is None:
        return np.empty((n, 0))
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != n:
        raise InvalidInputError("covariates have %d rows, expected %d" % (Z.shape[0], n))
    return Z


def dependent_columns(A: np.ndarray) -> list:
    """Indices of columns of ``A`` lying in the span of the columns before them."""
    bad = []
    kept = []
    for j in range(A.shape[1]):
        col = A[:, j]
        scale = np.linalg.norm(col)
        if scale == 0:
            bad.append(j)
            continue
        if kept:
            B = A[:, kept]
            coef, *_ = np.linalg.lstsq(B, col, rcond=None)
            if np.linalg.norm(col - B @ coef) <= _RANK_TOL * scale:
                bad.append(j)
                continue
        kept.append(j)
    return bad


def residualize(v: np.ndarray, design: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(design, v, rcond=None)
    return v - design @ coef


def partial_corr(x, y, Z=None, names: Optional[Sequence[str]] = None):
    """Correlation of ``x`` and ``y`` after regressing both on ``[1, Z]``.

    Returns ``(r, p)`` with ``df = n - 2 - k`` for ``k`` covariates. With no
    covariates this is exactly :func:`pearson_r`.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    Z = _as_covariates(Z, n)
    k = Z.shape[1]
    if k == 0:
        return pearson_r(x, y)
    if n <= k + 2:
        raise InsufficientDataError("partial_corr needs n > k + 2 (n=%d, k=%d)" % (n, k))
    design = np.column_stack([np.ones(n), Z])
    bad = dependent_columns(design)
    if bad:
        labels = ["intercept"] + list(names if names is not None else ["z%d" % i for i in range(k)])
        cols = [labels[j] for j in bad]
        raise CollinearityError("covariates are collinear: %s" % ", ".join(cols), cols)
    rx = residualize(x, design)
    ry = residualize(y, design)
    for label, v, res in (("x", x, rx), ("y", y, ry)):
        if np.linalg.norm(res) <= _RANK_TOL * max(np.linalg.norm(v - v.mean()), np.finfo(float).tiny):
            raise DegenerateColumnError("residual of %s on the covariates is zero" % label)
    r = _corr(rx, ry)
    return r, t_test_p(r, n - 2 - k)


def bh_correct(p_values, q: float = DEFAULT_Q):
    """Benjamini-Hochberg step-up adjustment.

    Returns ``(adjusted, significant)`` in the input order, where
    ``adjusted[i] = min_{j >= rank(i)} m * p_(j) / j`` (capped at 1) and
    ``significant = adjusted <= q``.
    """
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        return p.copy(), np.zeros(0, dtype=bool)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise InvalidInputError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    adj = np.empty(m)
    adj[order] = np.minimum(adj_sorted, 1.0)
    return adj, adj <= q


@dataclass
class CorrelationResult:
    feature: str
    outcome: str
    n: int
    r: float
    p_raw: float
    p_adjusted: float = float("nan")
    significant: bool = False
    controls: list = field(default_factory=list)

    def to_row(self) -> dict:
        row = asdict(self)
        row["controls"] = "+".join(self.controls)
        return row


REPORT_COLUMNS = ["feature", "outcome", "n", "r", "p_raw", "p_adjusted", "significant", "controls"]


def correlate_all(
    features: pd.DataFrame,
    outcomes: pd.DataFrame,
    controls: Mapping[str, Sequence[str]],
    q: float = DEFAULT_Q,
) -> list:
    """Partial correlation of every feature column with every outcome.

    ``features`` and ``outcomes`` are indexed by user id. ``controls`` maps
    each outcome to the covariate columns to partial out; covariates are
    looked up in ``outcomes`` first, then in ``features``. Rows with a
    missing value are dropped per test. Benjamini-Hochberg is applied within
    each outcome. Results come back sorted by decreasing ``|r|``.
    """
    if features.index.has_duplicates or outcomes.index.has_duplicates:
        raise InvalidInputError("duplicate user ids")
    joined = features.join(outcomes, how="inner", lsuffix="", rsuffix="__outcome")
    results = []
    for outcome, ctrl in controls.items():
        ctrl = list(ctrl)
        ycol = outcome if outcome in outcomes.columns else None
        if ycol is None:
            raise InvalidInputError("unknown outcome column %r" % outcome)
        ycol = ycol + "__outcome" if ycol in features.columns else ycol
        ctrl_cols = [c + "__outcome" if (c in outcomes.columns and c in features.columns) else c for c in ctrl]
        missing = [c for c in ctrl_cols if c not in joined.columns]
        if missing:
            raise InvalidInputError("unknown control columns: %s" % ", ".join(missing))
        need = len(ctrl) + 3
        y_all = joined[ycol]
        if y_all.notna().sum() < need:
            raise InsufficientDataError(
                "outcome %s: %d joined rows, need at least %d" % (outcome, y_all.notna().sum(), need))
        if np.ptp(y_all.dropna().to_numpy(dtype=float)) == 0:
            raise DegenerateColumnError("outcome column %r is constant" % outcome)

        family = []
        for feat in features.columns:
            if feat == outcome or feat in ctrl:
                continue
            sub = joined[[feat, ycol] + ctrl_cols].dropna()
            n = len(sub)
            if n < need:
                logger.warning("skipping %s vs %s: %d rows after deletion", feat, outcome, n)
                continue
            x = sub[feat].to_numpy(dtype=float)
            if np.ptp(x) == 0:
                logger.warning("skipping constant feature %s", feat)
                continue
            try:
                r, p = partial_corr(x, sub[ycol].to_numpy(dtype=float),
                                    sub[ctrl_cols].to_numpy(dtype=float), names=ctrl)
            except DegenerateColumnError:
                # the controls explain the feature completely: no partial association left
                r, p = 0.0, 1.0
            family.append(CorrelationResult(feat, outcome, n, r, p, controls=ctrl))
        if family:
            adj, sig = bh_correct([c.p_raw for c in family], q)
            for c, a, s in zip(family, adj, sig):
                c.p_adjusted = float(a)
                c.significant = bool(s)
        results.extend(family)
    results.sort(key=lambda c: (-abs(c.r), c.outcome, c.feature))
    return results


def results_frame(results) -> pd.DataFrame:
    return pd.DataFrame([c.to_row() for c in results], columns=REPORT_COLUMNS)
