"""Genotype cleaning: MAF filter, Hardy-Weinberg filter, random HWE imputation."""

from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional

import numpy as np
from scipy.stats import chi2

from .errors import DomainError
from .simulate import make_rng

MISSING = -1


class DropRecord(NamedTuple):
    snp_id: str
    reason: str
    statistic: float
    p_value: float


@dataclass
class GenotypeMatrix:
    """``n x d`` minor allele counts with ``MISSING`` (-1) for absent calls.

    ``labels`` is optional; -1 marks an unknown label.
    """

    values: np.ndarray
    snp_ids: List[str]
    subject_ids: List[str]
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)
        self.snp_ids = list(self.snp_ids)
        self.subject_ids = list(self.subject_ids)
        n, d = self.values.shape
        if len(self.snp_ids) != d or len(self.subject_ids) != n:
            raise DomainError("id lists do not match the matrix dimensions")
        if np.any(~np.isin(self.values, (0, 1, 2, MISSING))):
            raise DomainError("genotypes must be 0, 1, 2 or missing")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int8)
            if self.labels.shape != (n,) or np.any(~np.isin(self.labels, (0, 1, MISSING))):
                raise DomainError("labels must be 0, 1 or missing, one per subject")

    @property
    def shape(self):
        return self.values.shape

    def keep_snps(self, keep):
        keep = np.asarray(keep, dtype=bool)
        ids = [s for s, k in zip(self.snp_ids, keep) if k]
        return replace(self, values=self.values[:, keep], snp_ids=ids)


def allele_frequency(values):
    """Coded-allele frequency per column over non-missing calls (NaN if none)."""
    obs = values != MISSING
    count = np.where(obs, values, 0).sum(axis=0, dtype=np.int64)
    called = obs.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return count / (2.0 * called), called


def maf_filter(m, min_maf=0.01):
    """Drop SNPs whose folded minor allele frequency is below ``min_maf``."""
    if not 0 <= min_maf <= 0.5:
        raise DomainError("min_maf must lie in [0, 0.5]")
    freq, called = allele_frequency(m.values)
    maf = np.minimum(freq, 1.0 - freq)
    keep = np.zeros(m.shape[1], dtype=bool)
    drops = []
    for j, snp in enumerate(m.snp_ids):
        if called[j] == 0:
            drops.append(DropRecord(snp, "all_missing", np.nan, np.nan))
        elif maf[j] < min_maf:
            drops.append(DropRecord(snp, "low_maf", float(maf[j]), np.nan))
        else:
            keep[j] = True
    return m.keep_snps(keep), drops


def hwe_statistic(n_aa, n_ab, n_bb):
    """1-df Pearson goodness-of-fit statistic against HWE proportions."""
    obs = np.array([n_aa, n_ab, n_bb], dtype=float)
    n = obs.sum()
    p = (n_ab + 2.0 * n_bb) / (2.0 * n)
    q = 1.0 - p
    if p <= 0 or q <= 0:
        return 0.0
    exp = n * np.array([q * q, 2 * p * q, p * p])
    return float(np.sum((obs - exp) ** 2 / exp))


def hwe_filter(m, p_threshold=1e-3):
    """Drop SNPs out of Hardy-Weinberg equilibrium at ``p < p_threshold``.

    Tested in controls when labels are available, otherwise in everyone.
    """
    if not 0 < p_threshold < 1:
        raise DomainError("p_threshold must lie in (0, 1)")
    rows = np.ones(m.shape[0], dtype=bool)
    if m.labels is not None and np.any(m.labels == 0):
        rows = m.labels == 0
    vals = m.values[rows]
    keep = np.zeros(m.shape[1], dtype=bool)
    drops = []
    for j, snp in enumerate(m.snp_ids):
        col = vals[:, j]
        col = col[col != MISSING]
        if col.size < 2:
            drops.append(DropRecord(snp, "too_few_called", np.nan, np.nan))
            continue
        counts = np.bincount(col, minlength=3)
        stat = hwe_statistic(*counts)
        p = float(chi2.sf(stat, 1))
        if p < p_threshold:
            drops.append(DropRecord(snp, "hwe", stat, p))
        else:
            keep[j] = True
    return m.keep_snps(keep), drops


def impute_missing(m, seed):
    """Replace each missing call by a Binomial(2, p_j) draw.

    ``p_j`` is the column's observed allele frequency; SNP ``j`` uses its own
    generator keyed by ``(seed, j)``.
    """
    freq, called = allele_frequency(m.values)
    empty = np.flatnonzero(called == 0)
    if empty.size:
        raise DomainError(f"SNP {m.snp_ids[empty[0]]} has no called genotypes")
    out = m.values.copy()
    for j in np.flatnonzero(np.any(out == MISSING, axis=0)):
        miss = out[:, j] == MISSING
        out[miss, j] = make_rng(seed, j).binomial(2, freq[j], size=int(miss.sum()))
    return replace(m, values=out)
