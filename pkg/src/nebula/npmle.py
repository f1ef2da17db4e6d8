"""Grid-based nonparametric maximum likelihood for the SNP mixing distribution.

The prior on ``(pi0, pi1, lambda)`` is approximated by a discrete
distribution on a product grid and fitted by EM.  The per-SNP likelihood
factorises over the grid axes (binomial in pi0, binomial in pi1, noncentral
chi-square in lambda), so :class:`LogLikelihood` stores one ``d x n_k``
matrix per axis rather than the full ``d x n0 x n1 x n2`` tensor.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .densities import log_binom_pmf, log_noncentral_chisq_pdf, log_sum_exp
from .errors import DomainError, FitError, ResourceError

DEFAULT_GRID_SIZE = 20
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 2000
DEFAULT_MAX_ENTRIES = 200_000_000

# rows whose scaled normaliser falls below this are redone in log space
_UNDERFLOW = 1e-280
_ROW_BLOCK = 4096


@dataclass
class TargetSufficientStats:
    """Per-SNP minor allele count sums in controls (``s0``) and cases (``s1``)."""

    s0: np.ndarray
    s1: np.ndarray
    n0: int
    n1: int

    def __post_init__(self):
        self.s0 = np.asarray(self.s0, dtype=np.int64)
        self.s1 = np.asarray(self.s1, dtype=np.int64)
        self.n0 = int(self.n0)
        self.n1 = int(self.n1)
        if self.s0.ndim != 1 or self.s0.shape != self.s1.shape or self.s0.size == 0:
            raise DomainError("s0 and s1 must be nonempty vectors of equal length")
        if self.n0 < 1 or self.n1 < 1:
            raise DomainError("class sizes must be positive")
        if np.any(self.s0 < 0) or np.any(self.s0 > 2 * self.n0):
            raise DomainError("s0 entries must lie in [0, 2*n0]")
        if np.any(self.s1 < 0) or np.any(self.s1 > 2 * self.n1):
            raise DomainError("s1 entries must lie in [0, 2*n1]")

    @property
    def d(self):
        return self.s0.size

    @property
    def pi0_hat(self):
        return self.s0 / (2.0 * self.n0)

    @property
    def pi1_hat(self):
        return self.s1 / (2.0 * self.n1)

    @classmethod
    def from_genotypes(cls, genotypes, labels):
        """Reduce an ``n x d`` genotype matrix and 0/1 labels to count sums."""
        x = np.asarray(genotypes)
        y = np.asarray(labels)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise DomainError("genotypes must be n x d with one label per row")
        if np.any((y != 0) & (y != 1)):
            raise DomainError("labels must be 0 or 1")
        return cls(
            s0=x[y == 0].sum(axis=0),
            s1=x[y == 1].sum(axis=0),
            n0=int(np.sum(y == 0)),
            n1=int(np.sum(y == 1)),
        )

    def subset(self, index):
        return TargetSufficientStats(self.s0[index], self.s1[index], self.n0, self.n1)


@dataclass
class AuxSummary:
    """Auxiliary GWAS chi-square statistics and optional log-odds estimates."""

    t: np.ndarray
    gamma_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if self.t.ndim != 1 or self.t.size == 0:
            raise DomainError("t must be a nonempty vector")
        if np.any(~(self.t >= 0)):
            raise DomainError("chi-square statistics must be nonnegative")
        if self.gamma_hat is not None:
            self.gamma_hat = np.asarray(self.gamma_hat, dtype=float)
            if self.gamma_hat.shape != self.t.shape:
                raise DomainError("gamma_hat must match t in length")

    @property
    def d(self):
        return self.t.size

    def subset(self, index):
        g = None if self.gamma_hat is None else self.gamma_hat[index]
        return AuxSummary(self.t[index], g)


@dataclass(frozen=True)
class Grid:
    """Product grid of support points; ``lam`` is None for the (pi0, pi1) grid."""

    pi0: np.ndarray
    pi1: np.ndarray
    lam: Optional[np.ndarray] = None

    @property
    def axes(self):
        if self.lam is None:
            return (self.pi0, self.pi1)
        return (self.pi0, self.pi1, self.lam)

    @property
    def shape(self):
        return tuple(a.size for a in self.axes)

    @property
    def trivariate(self):
        return self.lam is not None


def equispaced_axis(lo, hi, n):
    if n < 1:
        raise DomainError("grid sizes must be at least 1")
    if lo == hi:
        return np.array([float(lo)])
    return np.linspace(lo, hi, int(n))


def build_grid(stats, aux, d0=DEFAULT_GRID_SIZE, d1=DEFAULT_GRID_SIZE, d2=DEFAULT_GRID_SIZE):
    """Equally spaced grid spanning the observed frequency and statistic ranges.

    With ``aux=None`` the bivariate (pi0, pi1) grid is returned.
    """
    if aux is not None and aux.d != stats.d:
        raise DomainError(f"target has {stats.d} SNPs but auxiliary summary has {aux.d}")
    p0, p1 = stats.pi0_hat, stats.pi1_hat
    pi0 = equispaced_axis(p0.min(), p0.max(), d0)
    pi1 = equispaced_axis(p1.min(), p1.max(), d1)
    if aux is None:
        return Grid(pi0, pi1)
    lam = equispaced_axis(max(aux.t.min(), 0.0), max(aux.t.max(), 0.0), d2)
    return Grid(pi0, pi1, lam)


def log_chisq_factor(t, lam):
    """``d x n2`` matrix of log f_chi2(t_j; 1, l_c).

    A statistic of exactly zero has infinite density for every ``l``; its row
    is replaced by the finite limit of the density ratio against ``l = 0``,
    which is ``-l / 2``.  A per-row constant changes neither the fitted
    prior nor any posterior ratio.
    """
    t = np.asarray(t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    out = np.empty((t.size, lam.size))
    pos = t > 0
    if np.any(pos):
        out[pos] = log_noncentral_chisq_pdf(t[pos, None], 1, lam[None, :])
    out[~pos] = -lam[None, :] / 2.0
    return out


class LogLikelihood:
    """Per-SNP log-likelihood over the grid, ``L[j, a, b, (c)]``.

    Stored as a sum of per-axis terms ``factors[k][j, i_k]`` unless built
    from an explicit dense array.
    """

    def __init__(self, factors=None, dense=None, max_entries=DEFAULT_MAX_ENTRIES):
        if (factors is None) == (dense is None):
            raise ValueError("give exactly one of factors or dense")
        self.max_entries = int(max_entries)
        if dense is not None:
            self._dense = np.asarray(dense, dtype=float)
            self.factors = None
            self.d = self._dense.shape[0]
            self.grid_shape = self._dense.shape[1:]
        else:
            self._dense = None
            self.factors = tuple(np.asarray(f, dtype=float) for f in factors)
            self.d = self.factors[0].shape[0]
            if any(f.ndim != 2 or f.shape[0] != self.d for f in self.factors):
                raise ValueError("factors must be d x n_k matrices")
            self.grid_shape = tuple(f.shape[1] for f in self.factors)
        self._scaled = None
        self._head_cache = None

    @property
    def is_dense(self):
        return self._dense is not None

    def dense(self):
        if self._dense is not None:
            return self._dense
        n = self.d * int(np.prod(self.grid_shape))
        if n > self.max_entries:
            raise ResourceError(
                f"dense likelihood needs {n} entries, above the cap of {self.max_entries}"
            )
        out = np.zeros((self.d,) + self.grid_shape)
        k = len(self.grid_shape)
        for axis, f in enumerate(self.factors):
            shape = [self.d] + [1] * k
            shape[axis + 1] = f.shape[1]
            out = out + f.reshape(shape)
        return out

    def row(self, j):
        """Grid array of ``L[j]``."""
        if self._dense is not None:
            return self._dense[j]
        out = np.zeros(self.grid_shape)
        k = len(self.grid_shape)
        for axis, f in enumerate(self.factors):
            shape = [1] * k
            shape[axis] = f.shape[1]
            out = out + f[j].reshape(shape)
        return out

    def check_shape(self, log_mass):
        if tuple(np.shape(log_mass)) != tuple(self.grid_shape):
            raise DomainError(
                f"mixing grid shape {np.shape(log_mass)} does not match likelihood {self.grid_shape}"
            )

    # -- factorised evaluation -------------------------------------------

    def _scaled_factors(self):
        if self._scaled is None:
            scaled, offset = [], np.zeros(self.d)
            for f in self.factors:
                m = f.max(axis=1)
                finite = np.isfinite(m)
                shift = np.where(finite, m, 0.0)
                e = np.exp(f - shift[:, None])
                e[~finite] = 0.0
                scaled.append(e)
                offset += np.where(finite, m, -np.inf)
            self._scaled = (scaled, offset)
        return self._scaled

    def _head_block(self, lo, hi):
        # row-wise outer product of all but the last scaled factor
        scaled, _ = self._scaled_factors()
        cacheable = self.d * int(np.prod(self.grid_shape[:-1])) <= self.max_entries
        if cacheable and self._head_cache is not None:
            return self._head_cache[lo:hi]
        head = np.ones((hi - lo if not cacheable else self.d, 1))
        rows = slice(None) if cacheable else slice(lo, hi)
        for f in scaled[:-1]:
            fr = f[rows]
            head = (head[:, :, None] * fr[:, None, :]).reshape(fr.shape[0], -1)
        if cacheable:
            self._head_cache = head
            return head[lo:hi]
        return head

    def _log_row_norm_logspace(self, log_mass, j):
        return log_sum_exp(log_mass + self.row(j))

    def log_norm(self, log_mass):
        """Per-SNP ``log sum_grid exp(log_mass + L[j])``."""
        self.check_shape(log_mass)
        if self._dense is not None:
            axes = tuple(range(1, self._dense.ndim))
            return log_sum_exp(log_mass[None] + self._dense, axis=axes)
        out, _ = self._factored_pass(np.exp(log_mass), log_mass, want_update=False)
        return out

    def em_update(self, log_mass):
        """One EM pass: returns (unnormalised new mass, per-SNP log norm of the input)."""
        self.check_shape(log_mass)
        if self._dense is not None:
            axes = tuple(range(1, self._dense.ndim))
            joint = log_mass[None] + self._dense
            norm = log_sum_exp(joint, axis=axes)
            bad = ~np.isfinite(norm)
            if np.any(bad):
                j = int(np.flatnonzero(bad)[0])
                raise FitError(f"SNP {j} has zero likelihood at every grid point", index=j)
            post = np.exp(joint - norm.reshape((-1,) + (1,) * len(axes)))
            return post.mean(axis=0), norm
        norm, new = self._factored_pass(np.exp(log_mass), log_mass, want_update=True)
        return new, norm

    def axis_posteriors(self, log_mass):
        """Per-SNP posterior marginals on the first two grid axes.

        Returns ``(w0, w1)`` of shapes ``d x n0`` and ``d x n1`` whose rows
        sum to one; a SNP with zero marginal likelihood gets an all-zero row.
        """
        self.check_shape(log_mass)
        if self._dense is not None:
            w0 = np.zeros((self.d, self.grid_shape[0]))
            w1 = np.zeros((self.d, self.grid_shape[1]))
            for j in range(self.d):
                w0[j], w1[j] = self._row_posteriors_logspace(log_mass, j)
            return w0, w1
        scaled, _ = self._scaled_factors()
        mass = np.exp(log_mass)
        w0 = np.empty((self.d, self.grid_shape[0]))
        w1 = np.empty((self.d, self.grid_shape[1]))
        for lo in range(0, self.d, _ROW_BLOCK):
            hi = min(lo + _ROW_BLOCK, self.d)
            a, b = scaled[0][lo:hi], scaled[1][lo:hi]
            if len(scaled) == 3:
                m = np.einsum("uvc,jc->juv", mass, scaled[2][lo:hi])
            else:
                m = np.broadcast_to(mass, (hi - lo,) + mass.shape)
            w0[lo:hi] = a * np.einsum("juv,jv->ju", m, b)
            w1[lo:hi] = b * np.einsum("juv,ju->jv", m, a)
        for w in (w0, w1):
            total = w.sum(axis=1)
            ok = total > _UNDERFLOW
            w[ok] /= total[ok, None]
        small = ~((w0.sum(axis=1) > 0.5) & (w1.sum(axis=1) > 0.5))
        for j in np.flatnonzero(small):
            w0[j], w1[j] = self._row_posteriors_logspace(log_mass, j)
        return w0, w1

    def _row_posteriors_logspace(self, log_mass, j):
        joint = log_mass + self.row(j)
        norm = log_sum_exp(joint)
        if not np.isfinite(norm):
            return np.zeros(self.grid_shape[0]), np.zeros(self.grid_shape[1])
        post = np.exp(joint - norm)
        rest = tuple(range(2, post.ndim))
        return post.sum(axis=(1,) + rest), post.sum(axis=(0,) + rest)

    def _factored_pass(self, mass, log_mass, want_update):
        scaled, offset = self._scaled_factors()
        tail = scaled[-1]
        head_size = int(np.prod(self.grid_shape[:-1]))
        m2 = mass.reshape(head_size, self.grid_shape[-1])
        norm = np.empty(self.d)
        acc = np.zeros_like(m2) if want_update else None
        for lo in range(0, self.d, _ROW_BLOCK):
            hi = min(lo + _ROW_BLOCK, self.d)
            head = self._head_block(lo, hi)
            mt = head @ m2
            dn = np.einsum("jt,jt->j", mt, tail[lo:hi])
            small = ~(dn > _UNDERFLOW)
            with np.errstate(divide="ignore"):
                norm[lo:hi] = np.log(dn) + offset[lo:hi]
            if want_update:
                w = np.where(small, 0.0, 1.0 / np.where(small, 1.0, dn))
                acc += (head * w[:, None]).T @ tail[lo:hi]
            for j in np.flatnonzero(small) + lo:
                nj = self._log_row_norm_logspace(log_mass, j)
                if not np.isfinite(nj):
                    if want_update:
                        raise FitError(f"SNP {j} has zero likelihood at every grid point", index=int(j))
                    norm[j] = -np.inf
                    continue
                norm[j] = nj
                if want_update:
                    post = np.exp(log_mass + self.row(j) - nj)
                    acc += post.reshape(m2.shape) / np.where(m2 > 0, m2, 1.0) * (m2 > 0)
        if not want_update:
            return norm, None
        new = (m2 * acc / self.d).reshape(self.grid_shape)
        return norm, new


def _log_lik_binomial_axes(stats, pi0, pi1):
    a = log_binom_pmf(stats.s0[:, None], 2 * stats.n0, np.asarray(pi0)[None, :])
    b = log_binom_pmf(stats.s1[:, None], 2 * stats.n1, np.asarray(pi1)[None, :])
    return np.atleast_2d(a), np.atleast_2d(b)


def precompute_log_likelihood_tensor(stats, aux, grid, dense=False,
                                     max_entries=DEFAULT_MAX_ENTRIES):
    """Per-SNP log-likelihood at every grid point.

    ``L[j, a, b, c] = log f_Bin(S0j; 2n0, u0_a) + log f_Bin(S1j; 2n1, u1_b)
    + log f_chi2(Tj; 1, l_c)``.  Held in factorised form unless ``dense``
    is requested, in which case the full array is built and checked
    against ``max_entries``.
    """
    a, b = _log_lik_binomial_axes(stats, grid.pi0, grid.pi1)
    factors = [a, b]
    if grid.trivariate:
        if aux is None or aux.d != stats.d:
            raise DomainError("auxiliary summary must accompany a trivariate grid")
        factors.append(log_chisq_factor(aux.t, grid.lam))
    ll = LogLikelihood(factors=factors, max_entries=max_entries)
    if dense:
        return LogLikelihood(dense=ll.dense(), max_entries=max_entries)
    return ll


@dataclass
class MixingDistribution:
    """Discrete prior on a product grid, stored as log masses."""

    grid: Grid
    log_mass: np.ndarray

    def __post_init__(self):
        self.log_mass = np.asarray(self.log_mass, dtype=float)
        if self.log_mass.shape != self.grid.shape:
            raise DomainError(f"log_mass shape {self.log_mass.shape} != grid shape {self.grid.shape}")

    @property
    def mass(self):
        return np.exp(self.log_mass)

    @classmethod
    def uniform(cls, grid):
        n = int(np.prod(grid.shape))
        return cls(grid, np.full(grid.shape, -np.log(n)))

    @classmethod
    def from_mass(cls, grid, mass):
        mass = np.asarray(mass, dtype=float)
        if np.any(mass < 0):
            raise DomainError("masses must be nonnegative")
        total = mass.sum()
        if not total > 0:
            raise DomainError("masses must have positive total")
        with np.errstate(divide="ignore"):
            return cls(grid, np.log(mass / total))

    def support(self):
        """List of (grid point tuple, mass) for points with positive mass."""
        m = self.mass
        out = []
        for idx in zip(*np.nonzero(m > 0)):
            point = tuple(float(ax[i]) for ax, i in zip(self.grid.axes, idx))
            out.append((point, float(m[idx])))
        return out


@dataclass
class FitReport:
    iterations: int
    final_log_likelihood: float
    converged: bool
    log_likelihood_trace: list = field(default_factory=list)


def marginal_log_likelihood(g, L):
    """Sum over SNPs of the log marginal likelihood under ``g``."""
    return float(np.sum(L.log_norm(g.log_mass)))


def _renormalise(new_mass):
    total = new_mass.sum()
    drift = abs(total - 1.0)
    if drift > 1e-8:
        raise FitError(f"EM mass drifted by {drift:.3g} before renormalisation")
    with np.errstate(divide="ignore"):
        return np.log(new_mass / total), drift


def em_step(current, L):
    """One EM update of the grid masses (fixed-point map of the NPMLE)."""
    new_mass, _ = L.em_update(current.log_mass)
    log_mass, _ = _renormalise(new_mass)
    return MixingDistribution(current.grid, log_mass)


def _converged(prev, cur, d, tol):
    mean_prev, mean_cur = prev / d, cur / d
    return (mean_cur - mean_prev) < tol * max(1.0, abs(mean_prev))


def run_em(L, grid, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, start=None):
    """Iterate EM from ``start`` (uniform by default) on a prepared likelihood."""
    if not tol > 0:
        raise DomainError("tol must be positive")
    if max_iter < 1:
        raise DomainError("max_iter must be at least 1")
    g = MixingDistribution.uniform(grid) if start is None else start
    log_mass = g.log_mass
    trace = []
    converged = False
    for _ in range(max_iter):
        new_mass, norm = L.em_update(log_mass)
        trace.append(float(np.sum(norm)))
        if len(trace) >= 2 and _converged(trace[-2], trace[-1], L.d, tol):
            converged = True
            break
        log_mass, _ = _renormalise(new_mass)
    else:
        trace.append(float(np.sum(L.log_norm(log_mass))))
    report = FitReport(
        iterations=len(trace) - 1,
        final_log_likelihood=trace[-1],
        converged=converged,
        log_likelihood_trace=trace,
    )
    return MixingDistribution(grid, log_mass), report


def fit_npmle(stats, aux, grid, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, loglik=None):
    """Fit the trivariate grid NPMLE by EM, starting from the uniform prior.

    Stops when the per-SNP mean log-likelihood improves by less than ``tol``
    (relative to its magnitude, floored at 1) or after ``max_iter`` steps.
    """
    if loglik is None:
        loglik = precompute_log_likelihood_tensor(stats, aux, grid)
    return run_em(loglik, grid, tol, max_iter)


def fit_npmle_bivariate(stats, selector, grid_pi0, grid_pi1, tol=DEFAULT_TOL,
                        max_iter=DEFAULT_MAX_ITER):
    """Fit the (pi0, pi1) grid NPMLE on the SNPs in ``selector``.

    ``selector`` is a boolean mask or an index array.
    """
    idx = np.asarray(selector)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    if idx.size == 0:
        raise DomainError("selector picks no SNPs")
    sub = stats.subset(idx)
    grid = Grid(np.asarray(grid_pi0, dtype=float), np.asarray(grid_pi1, dtype=float))
    L = precompute_log_likelihood_tensor(sub, None, grid)
    return run_em(L, grid, tol, max_iter)

