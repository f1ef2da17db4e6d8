"""Scoring rules: oracle, thresholded PRS, adaptive PRS and NEBULA.

Every genetic scorer here reduces to a ``d x 3`` table of per-SNP log
likelihood-ratio contributions indexed by genotype (0, 1, 2).  A subject's
score is the prevalence log-odds plus the covariate log-ratio plus the sum
of its table entries, and the predicted class is ``score >= 0``.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from .densities import log_binom_pmf
from .errors import DomainError, FitError
from .npmle import TargetSufficientStats, precompute_log_likelihood_tensor

GENOTYPES = np.arange(3)


@dataclass
class DiseaseModel:
    """True per-SNP minor allele frequencies in controls and cases."""

    pi0: np.ndarray
    pi1: np.ndarray

    def __post_init__(self):
        self.pi0 = np.asarray(self.pi0, dtype=float)
        self.pi1 = np.asarray(self.pi1, dtype=float)
        if self.pi0.shape != self.pi1.shape or self.pi0.ndim != 1:
            raise DomainError("pi0 and pi1 must be vectors of equal length")
        for p in (self.pi0, self.pi1):
            if np.any(~((p >= 0) & (p <= 1))):
                raise DomainError("allele frequencies must lie in [0, 1]")

    @property
    def d(self):
        return self.pi0.size


@dataclass
class ScoreReport:
    score: float
    predicted_class: int
    per_snp_loglr: np.ndarray
    covariate_loglr: float = 0.0


def prevalence_offset(prev):
    if not 0 < prev < 1:
        raise DomainError("prevalence must lie strictly between 0 and 1")
    return float(np.log(prev) - np.log1p(-prev))


def check_genotypes(x, d=None):
    x = np.asarray(x)
    if np.any((x != 0) & (x != 1) & (x != 2)):
        raise DomainError("genotypes must be 0, 1 or 2")
    if d is not None and x.shape[-1] != d:
        raise DomainError(f"genotype vector has {x.shape[-1]} SNPs, expected {d}")
    return x.astype(np.intp)


def snp_contributions(table, x):
    """Per-SNP entries of ``table`` picked by genotype vector(s) ``x``."""
    x = check_genotypes(x, table.shape[0])
    if x.ndim == 1:
        return table[np.arange(table.shape[0]), x]
    return np.take_along_axis(table[None, :, :], x[:, :, None], axis=2)[:, :, 0]


def score_from_table(table, x, prev, covariate_loglr=0.0):
    """ScoreReport for a single genotype vector."""
    per_snp = snp_contributions(table, x)
    score = prevalence_offset(prev) + float(covariate_loglr) + float(np.sum(per_snp))
    return ScoreReport(score, int(score >= 0), per_snp, float(covariate_loglr))


def batch_scores(table, X, prev, covariate_loglr=None):
    """Scores for the rows of an ``n x d`` genotype matrix."""
    s = snp_contributions(table, np.atleast_2d(X)).sum(axis=1) + prevalence_offset(prev)
    if covariate_loglr is not None:
        s = s + np.asarray(covariate_loglr, dtype=float)
    return s


def predict(scores):
    return (np.asarray(scores) >= 0).astype(int)


# -- oracle -----------------------------------------------------------------


def oracle_table(model):
    x = GENOTYPES[None, :]
    return (log_binom_pmf(x, 2, model.pi1[:, None])
            - log_binom_pmf(x, 2, model.pi0[:, None]))


def oracle_score(x, model, prev):
    """Bayes rule under the true allele frequencies."""
    return score_from_table(oracle_table(model), x, prev)


# -- plug-in estimates ------------------------------------------------------


def corrected_proportions(k0, k1, m0, m1):
    """Class proportions ``k / m``, corrected per entry at the boundary.

    When either class proportion is exactly 0 or 1 both are replaced by
    ``(k + 0.5) / (m + 1)``.
    """
    k0 = np.asarray(k0, dtype=float)
    k1 = np.asarray(k1, dtype=float)
    p0, p1 = k0 / m0, k1 / m1
    edge = (p0 <= 0) | (p0 >= 1) | (p1 <= 0) | (p1 >= 1)
    p0 = np.where(edge, (k0 + 0.5) / (m0 + 1), p0)
    p1 = np.where(edge, (k1 + 0.5) / (m1 + 1), p1)
    return p0, p1


def corrected_frequencies(s0, s1, n0, n1):
    """Allele frequency estimates ``S / 2n`` with the boundary correction."""
    return corrected_proportions(s0, s1, 2 * n0, 2 * n1)


def _logit(p):
    return np.log(p) - np.log1p(-p)


def log_odds_from_counts(s0, s1, n0, n1):
    p0, p1 = corrected_frequencies(s0, s1, n0, n1)
    return _logit(p1) - _logit(p0)


def fit_log_odds(stats):
    """Per-SNP log odds ratio of case vs control allele frequency."""
    return log_odds_from_counts(stats.s0, stats.s1, stats.n0, stats.n1)


def _prs_parts(stats):
    p0, p1 = corrected_frequencies(stats.s0, stats.s1, stats.n0, stats.n1)
    intercept = 2.0 * (np.log1p(-p1) - np.log1p(-p0))
    beta = _logit(p1) - _logit(p0)
    return intercept, beta


def _check_threshold(threshold):
    if not threshold >= 0:
        raise DomainError("threshold must be nonnegative")


def prs_table(stats, threshold):
    """Thresholding drops only the genotype term; the intercept sum is kept whole."""
    _check_threshold(threshold)
    intercept, beta = _prs_parts(stats)
    keep = np.abs(beta) > threshold
    return intercept[:, None] + (keep * beta)[:, None] * GENOTYPES[None, :]


def prs_score(x, stats, threshold, prev):
    return score_from_table(prs_table(stats, threshold), x, prev)


def adaptive_prs_table(stats, aux, threshold):
    """PRS keeping SNPs with ``|beta_j * gamma_j| > threshold``.

    Dropped SNPs lose their intercept term as well.
    """
    _check_threshold(threshold)
    if aux is None or aux.gamma_hat is None:
        raise DomainError("adaptive PRS needs auxiliary log-odds estimates")
    if aux.d != stats.d:
        raise DomainError("auxiliary summary and target counts differ in length")
    intercept, beta = _prs_parts(stats)
    keep = np.abs(beta * aux.gamma_hat) > threshold
    return keep[:, None] * (intercept[:, None] + beta[:, None] * GENOTYPES[None, :])


def adaptive_prs_score(x, stats, aux, threshold, prev):
    return score_from_table(adaptive_prs_table(stats, aux, threshold), x, prev)


# -- covariates -------------------------------------------------------------


@dataclass
class Covariate:
    family: str  # "binary" or "gaussian"
    theta0: tuple
    theta1: tuple

    def __post_init__(self):
        if self.family == "binary":
            for th in (self.theta0, self.theta1):
                if not 0 < th[0] < 1:
                    raise DomainError("binary covariate probability must lie in (0, 1)")
        elif self.family == "gaussian":
            for th in (self.theta0, self.theta1):
                if not th[1] > 0:
                    raise DomainError("gaussian covariate variance must be positive")
        else:
            raise DomainError(f"unknown covariate family {self.family!r}")


@dataclass
class CovariateModel:
    covariates: List[Covariate]

    def __len__(self):
        return len(self.covariates)


def _log_density(family, z, theta):
    if family == "binary":
        p = theta[0]
        return np.where(np.asarray(z) == 1, np.log(p), np.log1p(-p))
    mean, var = theta
    return -0.5 * (np.log(2 * np.pi * var) + (np.asarray(z) - mean) ** 2 / var)


def covariate_loglr(z, model):
    """Sum over covariates of log f(z; theta1) - log f(z; theta0).

    ``z`` may be a single covariate vector or an ``n x q`` matrix.
    """
    if model is None or len(model) == 0:
        return 0.0 if z is None or np.ndim(z) <= 1 else np.zeros(np.shape(z)[0])
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != len(model):
        raise DomainError(f"expected {len(model)} covariates, got {z.shape[-1]}")
    total = 0.0
    for k, cov in enumerate(model.covariates):
        zk = z[..., k]
        if cov.family == "binary" and np.any((zk != 0) & (zk != 1)):
            raise DomainError(f"binary covariate {k} must be 0 or 1")
        total = total + _log_density(cov.family, zk, cov.theta1) - _log_density(cov.family, zk, cov.theta0)
    return float(total) if np.ndim(total) == 0 else total


def infer_family(column):
    col = np.asarray(column, dtype=float)
    return "binary" if np.all((col == 0) | (col == 1)) else "gaussian"


def fit_covariate_model(z, labels, families=None):
    """Class-wise maximum likelihood estimates for each covariate column.

    Binary proportions at 0 or 1 get the same half-count correction as the
    allele frequencies (both classes of that covariate).  Gaussian variances
    are the biased MLE.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(labels)
    if z.ndim != 2 or z.shape[0] != y.size:
        raise DomainError("covariates must be n x q with one label per row")
    if families is None:
        families = [infer_family(z[:, k]) for k in range(z.shape[1])]
    out = []
    for k, fam in enumerate(families):
        z0, z1 = z[y == 0, k], z[y == 1, k]
        if fam == "binary":
            if z0.size < 1 or z1.size < 1:
                raise DomainError(f"covariate {k}: need an observation in each class")
            k0, k1 = z0.sum(), z1.sum()
            p0, p1 = corrected_proportions(k0, k1, z0.size, z1.size)
            out.append(Covariate("binary", (float(p0),), (float(p1),)))
        elif fam == "gaussian":
            if z0.size < 2 or z1.size < 2:
                raise DomainError(f"covariate {k}: need two observations in each class")
            v0, v1 = z0.var(), z1.var()
            if not (v0 > 0 and v1 > 0):
                raise DomainError(f"covariate {k}: zero within-class variance")
            out.append(Covariate("gaussian", (z0.mean(), v0), (z1.mean(), v1)))
        else:
            raise DomainError(f"unknown covariate family {fam!r}")
    return CovariateModel(out)


# -- NEBULA -----------------------------------------------------------------


def _posterior_ratio_table(loglik, g):
    """Per-SNP log ratio of the x-augmented marginals on u1 vs u0.

    The grid sums factor through each SNP's posterior on the u0 and u1 axes:
    the ratio is ``log E[f(x; u1)] - log E[f(x; u0)]`` under that posterior.
    """
    w0, w1 = loglik.axis_posteriors(g.log_mass)
    f0 = np.exp(log_binom_pmf(GENOTYPES[:, None], 2, g.grid.pi0[None, :]))
    f1 = np.exp(log_binom_pmf(GENOTYPES[:, None], 2, g.grid.pi1[None, :]))
    with np.errstate(divide="ignore"):
        num = np.log(w1 @ f1.T)
        den = np.log(w0 @ f0.T)
    bad = ~np.isfinite(den).all(axis=1)
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise FitError(f"SNP {j} has zero marginal likelihood under the fitted prior", index=j)
    return num - den


def nebula_table(stats, aux, g_hat, loglik=None):
    """Per-SNP NEBULA contributions for genotypes 0, 1, 2."""
    if aux is not None and aux.d != stats.d:
        raise DomainError("auxiliary summary and target counts differ in length")
    if loglik is None:
        loglik = precompute_log_likelihood_tensor(stats, aux, g_hat.grid)
    loglik.check_shape(g_hat.log_mass)
    return _posterior_ratio_table(loglik, g_hat)


def nebula_score(x, stats, aux, g_hat, prev, z=None, cov_model=None, table=None):
    """Empirical Bayes integrative score of one subject."""
    if table is None:
        table = nebula_table(stats, aux, g_hat)
    return score_from_table(table, x, prev, covariate_loglr(z, cov_model))


def nebula_annotated_table(stats, annotations, g0, g1):
    """NEBULA contributions with the prior chosen by a binary SNP annotation."""
    ann = np.asarray(annotations)
    if ann.shape != (stats.d,):
        raise DomainError(f"need {stats.d} annotations, got {ann.size}")
    if np.any((ann != 0) & (ann != 1)):
        raise DomainError("annotations must be 0 or 1")
    table = np.empty((stats.d, 3))
    for value, g in ((0, g0), (1, g1)):
        idx = np.flatnonzero(ann == value)
        if idx.size == 0:
            continue
        if g is None or g.grid.trivariate:
            raise DomainError(f"a bivariate prior is required for annotation group {value}")
        sub = stats.subset(idx)
        try:
            table[idx] = nebula_table(sub, None, g)
        except FitError as err:
            j = int(idx[err.index])
            raise FitError(f"SNP {j} has zero marginal likelihood under the fitted prior", index=j)
    return table


def nebula_annotated_score(x, stats, annotations, g0, g1, prev, z=None, cov_model=None):
    table = nebula_annotated_table(stats, annotations, g0, g1)
    return score_from_table(table, x, prev, covariate_loglr(z, cov_model))


# -- threshold selection ----------------------------------------------------


def stratified_folds(labels, folds, rng):
    """Fold index per subject, balanced within each class."""
    y = np.asarray(labels)
    out = np.empty(y.size, dtype=int)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        if idx.size < folds:
            raise DomainError(f"class {cls} has {idx.size} subjects, fewer than {folds} folds")
        idx = rng.permutation(idx)
        out[idx] = np.arange(idx.size) % folds
    return out


def select_threshold_cv(genotypes, labels, candidates, folds=5, scorer="prs",
                        prev=0.5, seed=0, aux=None):
    """Cross-validated PRS threshold.

    Returns the candidate with the lowest mean held-out misclassification,
    preferring the larger threshold among ties.
    """
    cands = np.asarray(candidates, dtype=float)
    if cands.size == 0:
        raise DomainError("no candidate thresholds")
    if folds < 2:
        raise DomainError("need at least two folds")
    if scorer not in ("prs", "adaptive_prs"):
        raise DomainError(f"unknown scorer {scorer!r}")
    if cands.size == 1:
        return float(cands[0])
    X = check_genotypes(genotypes)
    y = np.asarray(labels)
    fold_of = stratified_folds(y, folds, np.random.default_rng(seed))

    errors = np.zeros(cands.size)
    for f in range(folds):
        held = fold_of == f
        stats = TargetSufficientStats.from_genotypes(X[~held], y[~held])
        for c, thr in enumerate(cands):
            if scorer == "prs":
                table = prs_table(stats, thr)
            else:
                table = adaptive_prs_table(stats, aux, thr)
            pred = predict(batch_scores(table, X[held], prev))
            errors[c] += np.mean(pred != y[held])
    errors /= folds
    best = errors.min()
    tied = np.flatnonzero(errors <= best + 1e-12)
    return float(cands[tied].max())
