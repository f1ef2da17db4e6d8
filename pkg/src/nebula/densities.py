"""Log-space densities used by every likelihood in the package.

Binomial mass and (non)central chi-square density, plus a max-shifted
log-sum-exp.  Everything here is vectorised over numpy broadcasting and
returns natural-log values; a zero density is reported as ``-inf``.
"""

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy
from scipy.stats import binom

from .errors import DomainError

LOG2 = np.log(2.0)

# relative contribution below which the series tail is dropped
SERIES_RTOL = 1e-14


def _scalar_or_array(a):
    return a.item() if a.ndim == 0 else a


def log_sum_exp(values, axis=None):
    """Return ``log(sum(exp(values)))`` along ``axis`` without overflow.

    An empty input, or one that is all ``-inf``, gives ``-inf``.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        if axis is None:
            return -np.inf
        shape = list(v.shape)
        del shape[axis]
        return np.full(shape, -np.inf)
    vmax = np.max(v, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_binom_pmf(k, n, p):
    """Log probability mass of Binomial(n, p) at k.

    Away from the extreme tails this is the log of scipy's saddle-point
    mass, which keeps sums over k = 0..n within 1e-12 of one for n in the
    thousands.  Where that mass underflows the log-gamma form is used, with
    the convention 0*log(0) = 0 so ``p`` may sit exactly on 0 or 1.
    """
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(k < 0) or np.any(k > n) or np.any(k != np.floor(k)):
        raise DomainError("binomial count k must be an integer in [0, n]")
    if np.any(p < 0) or np.any(p > 1) or np.any(np.isnan(p)):
        raise DomainError("binomial probability p must lie in [0, 1]")
    out = (
        gammaln(n + 1)
        - gammaln(k + 1)
        - gammaln(n - k + 1)
        + xlogy(k, p)
        + xlog1py(n - k, -p)
    )
    direct = binom.pmf(k, n, p)
    with np.errstate(divide="ignore"):
        out = np.where(direct > 1e-250, np.log(np.maximum(direct, 1e-300)), out)
    return _scalar_or_array(np.asarray(out))


def log_chisq_pdf(x, df):
    """Log density of the central chi-square with ``df`` degrees of freedom."""
    x = np.asarray(x, dtype=float)
    df = np.asarray(df, dtype=float)
    half = df / 2.0
    out = (half - 1.0) * np.log(x) - x / 2.0 - half * LOG2 - gammaln(half)
    return _scalar_or_array(np.asarray(out))


def _log_series_term(i, x, logx, df, h, logh):
    # Poisson(i; h) weight times the chi-square density with df + 2i d.o.f.
    half = df / 2.0 + i
    return (
        -h + i * logh - gammaln(i + 1.0)
        + (half - 1.0) * logx - x / 2.0 - half * LOG2 - gammaln(half)
    )


def _tail_done(term, prev, acc):
    # Terms are log-concave in the series index, so once successive ratios
    # fall below one the remainder is bounded by a geometric tail.
    log_ratio = term - prev
    with np.errstate(divide="ignore", invalid="ignore"):
        log_tail = term + log_ratio - np.log1p(-np.exp(log_ratio))
    return (log_ratio < 0) & (log_tail - acc < np.log(SERIES_RTOL))


def log_noncentral_chisq_pdf(x, df, lam):
    """Log density of the noncentral chi-square chi2_df(lam) at ``x``.

    Evaluates the Poisson mixture of central chi-squares in log space,
    starting from the Poisson index nearest ``lam / 2`` and walking up and
    down until the remaining tail is below 1e-14 of the running sum.  At
    ``lam == 0`` the central density is returned unchanged.
    """
    x, lam = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(lam, dtype=float))
    if np.any(~(x > 0)):
        raise DomainError("chi-square argument x must be positive")
    if np.any(~(lam >= 0)):
        raise DomainError("noncentrality must be nonnegative")
    if not df >= 1:
        raise DomainError("degrees of freedom must be at least 1")
    df = float(df)

    out = np.array(log_chisq_pdf(x, df), dtype=float, ndmin=1).reshape(x.shape).copy()
    nc = lam > 0
    if not np.any(nc):
        return _scalar_or_array(out)

    xs = x[nc]
    logx = np.log(xs)
    h = lam[nc] / 2.0
    logh = np.log(h)
    i0 = np.floor(h + 0.5)
    acc = _log_series_term(i0, xs, logx, df, h, logh)

    # upward from i0
    prev = acc.copy()
    i = i0.copy()
    active = np.ones(xs.shape, dtype=bool)
    while np.any(active):
        idx = np.flatnonzero(active)
        i[idx] += 1.0
        term = _log_series_term(i[idx], xs[idx], logx[idx], df, h[idx], logh[idx])
        acc[idx] = np.logaddexp(acc[idx], term)
        done = _tail_done(term, prev[idx], acc[idx])
        prev[idx] = term
        active[idx[done]] = False

    # downward from i0 to 0
    prev = _log_series_term(i0, xs, logx, df, h, logh)
    i = i0.copy()
    active = i0 > 0
    while np.any(active):
        idx = np.flatnonzero(active)
        i[idx] -= 1.0
        term = _log_series_term(i[idx], xs[idx], logx[idx], df, h[idx], logh[idx])
        acc[idx] = np.logaddexp(acc[idx], term)
        done = _tail_done(term, prev[idx], acc[idx]) | (i[idx] <= 0)
        prev[idx] = term
        active[idx[done]] = False

    out[nc] = acc
    return _scalar_or_array(out)
