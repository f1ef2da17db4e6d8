"""Synthetic target and auxiliary GWAS studies.

Control allele frequencies are uniform on a range, non-null SNPs get a
log-odds shift drawn from N(mu, effect_var) with a random sign, and
genotypes are Binomial(2, pi) per subject.  The auxiliary study is reduced
to per-SNP allelic chi-square statistics and log-odds estimates before it
leaves this module.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit, logit

from .classifiers import DiseaseModel, log_odds_from_counts
from .errors import ConfigError, DomainError
from .npmle import AuxSummary

BASE_MAF_RANGE = (0.2, 0.5)


def make_rng(*keys):
    """Counter-based generator keyed by a tuple of nonnegative integers."""
    # SeedSequence ignores trailing zeros, so the key length is mixed in to
    # keep (s, k) and (s, k, 0) apart
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([len(keys), *map(int, keys)])))


@dataclass
class SimulationConfig:
    d: int = 10_000
    n_nonnull_target: int = 100
    n_nonnull_aux: int = 100
    overlap_pct: float = 50.0
    mu: float = 0.15
    effect_var: float = 0.01
    n0_train: int = 100
    n1_train: int = 100
    n0_test: int = 50
    n1_test: int = 50
    n0_aux: int = 1000
    n1_aux: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("d must be positive")
        if not 0 <= self.n_nonnull_target <= self.d or not 0 <= self.n_nonnull_aux <= self.d:
            raise ConfigError("non-null counts must lie in [0, d]")
        if not 0 <= self.overlap_pct <= 100:
            raise ConfigError("overlap_pct must lie in [0, 100]")
        for name in ("n0_train", "n1_train", "n0_test", "n1_test", "n0_aux", "n1_aux"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.n_nonnull_aux - self.overlap_count > self.d - self.n_nonnull_target:
            raise ConfigError("not enough SNPs to place the auxiliary-only non-null set")

    @property
    def overlap_count(self):
        smaller = min(self.n_nonnull_target, self.n_nonnull_aux)
        return int(np.floor(self.overlap_pct / 100.0 * smaller + 0.5))

    def as_dict(self):
        return asdict(self)


@dataclass
class StudyRealization:
    """One simulated study.  Holds no auxiliary genotypes, only their summary."""

    target_model: DiseaseModel
    aux_model: DiseaseModel
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    aux_summary: AuxSummary
    nonnull_target: np.ndarray
    nonnull_aux: np.ndarray


def gen_disease_model(d, nonnull_indices, mu, effect_var, rng, base_maf_range=BASE_MAF_RANGE):
    idx = np.asarray(nonnull_indices, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= d):
        raise DomainError("non-null indices must lie in [0, d)")
    if not (np.isfinite(mu) and np.isfinite(effect_var) and effect_var >= 0):
        raise DomainError("effect mean and variance must be finite, variance nonnegative")
    lo, hi = base_maf_range
    pi0 = rng.uniform(lo, hi, size=d)
    beta = rng.normal(mu, np.sqrt(effect_var), size=idx.size)
    beta = beta * rng.choice(np.array([-1.0, 1.0]), size=idx.size)
    pi1 = pi0.copy()
    pi1[idx] = expit(beta + logit(pi0[idx]))
    return DiseaseModel(pi0, pi1)


def gen_genotypes(model, class_sizes, rng):
    """Binomial(2, pi) genotypes, controls first; returns (X, labels)."""
    n0, n1 = class_sizes
    if n0 < 1 or n1 < 1:
        raise DomainError("class sizes must be positive")
    x0 = rng.binomial(2, model.pi0, size=(n0, model.d))
    x1 = rng.binomial(2, model.pi1, size=(n1, model.d))
    x = np.vstack([x0, x1]).astype(np.int8)
    y = np.concatenate([np.zeros(n0, dtype=np.int8), np.ones(n1, dtype=np.int8)])
    return x, y


def _check_counts(s0, s1, n0, n1):
    s0 = np.asarray(s0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    if np.any(np.asarray(n0) < 1) or np.any(np.asarray(n1) < 1):
        raise DomainError("class sizes must be positive")
    if np.any((s0 < 0) | (s0 > 2 * np.asarray(n0))) or np.any((s1 < 0) | (s1 > 2 * np.asarray(n1))):
        raise DomainError("allele counts must lie in [0, 2n]")
    return s0, s1


def allelic_test(s0, s1, n0, n1):
    """Pearson chi-square on the 2x2 allele-by-status table.

    Tables with an empty margin give 0.
    """
    s0, s1 = _check_counts(s0, s1, n0, n1)
    m0, m1 = 2.0 * np.asarray(n0), 2.0 * np.asarray(n1)
    total = m0 + m1
    minor = s0 + s1
    denom = minor * (total - minor) * m0 * m1
    cross = s1 * (m0 - s0) - s0 * (m1 - s1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 0, total * cross ** 2 / np.where(denom > 0, denom, 1.0), 0.0)
    return t.item() if t.ndim == 0 else t


def aux_log_odds(s0, s1, n0, n1):
    s0, s1 = _check_counts(s0, s1, n0, n1)
    out = log_odds_from_counts(s0, s1, n0, n1)
    return out.item() if np.ndim(out) == 0 else out


def choose_nonnull_sets(config, rng):
    """Target and auxiliary non-null index sets with the configured overlap."""
    k = config.overlap_count
    target = np.sort(rng.choice(config.d, size=config.n_nonnull_target, replace=False))
    shared = rng.choice(target, size=k, replace=False)
    rest = np.setdiff1d(np.arange(config.d), target)
    extra = rng.choice(rest, size=config.n_nonnull_aux - k, replace=False)
    return target, np.sort(np.concatenate([shared, extra]))


def draw_models(config, rng):
    """Disease models and non-null sets; fixed across replications of a setting."""
    target_idx, aux_idx = choose_nonnull_sets(config, rng)
    target = gen_disease_model(config.d, target_idx, config.mu, config.effect_var, rng)
    aux = gen_disease_model(config.d, aux_idx, config.mu, config.effect_var, rng)
    return target, aux, target_idx, aux_idx


def summarize_aux(model, class_sizes, rng):
    """Simulate an auxiliary study and keep only (T, gamma_hat)."""
    x, y = gen_genotypes(model, class_sizes, rng)
    n0, n1 = class_sizes
    s0 = x[y == 0].sum(axis=0, dtype=np.int64)
    s1 = x[y == 1].sum(axis=0, dtype=np.int64)
    return AuxSummary(allelic_test(s0, s1, n0, n1), aux_log_odds(s0, s1, n0, n1))


def draw_replication(config, models, rng):
    target, aux, target_idx, aux_idx = models
    train_x, train_y = gen_genotypes(target, (config.n0_train, config.n1_train), rng)
    test_x, test_y = gen_genotypes(target, (config.n0_test, config.n1_test), rng)
    summary = summarize_aux(aux, (config.n0_aux, config.n1_aux), rng)
    return StudyRealization(target, aux, train_x, train_y, test_x, test_y, summary,
                            target_idx, aux_idx)


def realize_study(config: SimulationConfig) -> StudyRealization:
    """Full realization, reproducible from ``config.seed``."""
    models = draw_models(config, make_rng(config.seed, 0))
    return draw_replication(config, models, make_rng(config.seed, 1))

