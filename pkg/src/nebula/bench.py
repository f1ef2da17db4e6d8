"""Simulation benchmark: misclassification of PRS, adaptive PRS and NEBULA.

Each setting draws its disease models once; every replication redraws the
target training/test genotypes and the auxiliary summary statistics.  The
integrative classifiers only ever see the auxiliary ``AuxSummary``.
"""

import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from . import classifiers as clf
from .errors import DomainError
from .io import write_tsv
from .npmle import DEFAULT_MAX_ITER, DEFAULT_TOL, TargetSufficientStats, build_grid, fit_npmle
from .simulate import SimulationConfig, draw_models, draw_replication, make_rng

log = logging.getLogger(__name__)

CLASSIFIERS = ("oracle", "prs", "adaptive-prs", "nebula")
N_CANDIDATES = 20

LONG_HEADER = [
    "setting_id", "overlap_pct", "aux_n", "nonnull_target", "nonnull_aux", "mu",
    "replication", "classifier", "error", "threshold", "status",
    "em_iterations", "em_converged", "em_min_step",
]
AGG_HEADER = [
    "setting_id", "overlap_pct", "aux_n", "nonnull_target", "nonnull_aux", "mu",
    "classifier", "mean_error", "se", "replications",
]


def misclassification_rate(predicted, truth):
    p = np.asarray(predicted)
    t = np.asarray(truth)
    if p.size == 0 or p.shape != t.shape:
        raise DomainError("need equal-length, nonempty label vectors")
    return float(np.mean(p != t))


def empirical_auc(scores, labels):
    """Mann-Whitney estimate of P(case score > control score), ties count half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    cases, controls = s[y == 1], s[y == 0]
    if cases.size == 0 or controls.size == 0:
        raise DomainError("AUC needs both cases and controls")
    diff = cases[:, None] - controls[None, :]
    return float((np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / diff.size)


def threshold_candidates(magnitudes, n=N_CANDIDATES):
    """Zero plus ``n - 1`` log-spaced values up to the largest magnitude."""
    top = float(np.max(np.abs(magnitudes)))
    if not top > 0:
        return np.zeros(1)
    return np.concatenate([[0.0], np.geomspace(top * 1e-3, top, n - 1)])


@dataclass(frozen=True)
class Setting:
    overlap_pct: float
    aux_n: int
    n_nonnull_target: int
    n_nonnull_aux: int
    mu: float

    def key(self):
        # integer stream key derived from the descriptor, not its list position
        return (int(round(self.overlap_pct * 1000)), int(self.aux_n), int(self.n_nonnull_target),
                int(self.n_nonnull_aux), int(round(self.mu * 1_000_000)) % (2 ** 32))

    def model_key(self):
        # disease models do not depend on the auxiliary sample size, so settings
        # that differ only in aux_n share them
        k = self.key()
        return k[:1] + k[2:]

    def label(self):
        return (f"ov{fmt_num(self.overlap_pct)}_aux{self.aux_n}_t{self.n_nonnull_target}"
                f"_a{self.n_nonnull_aux}_mu{fmt_num(self.mu)}")


def fmt_num(x):
    return format(float(x), "g")


@dataclass
class BenchmarkConfig:
    settings: List[Setting]
    replications: int = 200
    d: int = 10_000
    n0_train: int = 100
    n1_train: int = 100
    n0_test: int = 50
    n1_test: int = 50
    effect_var: float = 0.01
    grid: Sequence[int] = (20, 20, 20)
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    cv_folds: int = 5
    prevalence: float = 0.5
    seed: int = 0
    threads: int = 1
    classifiers: Sequence[str] = field(default_factory=lambda: list(CLASSIFIERS))

    def sim_config(self, s):
        return SimulationConfig(
            d=self.d, n_nonnull_target=s.n_nonnull_target, n_nonnull_aux=s.n_nonnull_aux,
            overlap_pct=s.overlap_pct, mu=s.mu, effect_var=self.effect_var,
            n0_train=self.n0_train, n1_train=self.n1_train, n0_test=self.n0_test,
            n1_test=self.n1_test, n0_aux=s.aux_n, n1_aux=s.aux_n, seed=self.seed,
        )


@dataclass
class BenchmarkResult:
    long_rows: list
    aggregate_rows: list
    failures: int
    total: int

    @property
    def failure_fraction(self):
        return self.failures / self.total if self.total else 0.0


def _error(table, real, prev):
    pred = clf.predict(clf.batch_scores(table, real.test_x, prev))
    return misclassification_rate(pred, real.test_y)


def run_replication(cfg, setting, models, rep):
    """Errors of every requested classifier on one fresh realization."""
    sim = cfg.sim_config(setting)
    rng = make_rng(cfg.seed, *setting.key(), 1, rep)
    real = draw_replication(sim, models, rng)
    cv_seed = int(rng.integers(2 ** 62))
    aux = real.aux_summary
    stats = TargetSufficientStats.from_genotypes(real.train_x, real.train_y)
    out = {}
    for name in cfg.classifiers:
        info = {"threshold": None, "em": None}
        if name == "oracle":
            table = clf.oracle_table(real.target_model)
        elif name == "prs":
            cands = threshold_candidates(clf.fit_log_odds(stats))
            thr = clf.select_threshold_cv(real.train_x, real.train_y, cands, cfg.cv_folds,
                                          "prs", cfg.prevalence, cv_seed)
            table = clf.prs_table(stats, thr)
            info["threshold"] = thr
        elif name == "adaptive-prs":
            cands = threshold_candidates(clf.fit_log_odds(stats) * aux.gamma_hat)
            thr = clf.select_threshold_cv(real.train_x, real.train_y, cands, cfg.cv_folds,
                                          "adaptive_prs", cfg.prevalence, cv_seed, aux=aux)
            table = clf.adaptive_prs_table(stats, aux, thr)
            info["threshold"] = thr
        elif name == "nebula":
            grid = build_grid(stats, aux, *cfg.grid)
            g, report = fit_npmle(stats, aux, grid, cfg.tol, cfg.max_iter)
            table = clf.nebula_table(stats, aux, g)
            info["em"] = report
        else:
            raise DomainError(f"unknown classifier {name!r}")
        out[name] = (_error(table, real, cfg.prevalence), info)
    return out


def _task(args):
    cfg, setting, models, rep = args
    try:
        return rep, run_replication(cfg, setting, models, rep), None
    except Exception as err:  # a failed replication is logged and excluded
        log.debug("replication %d failed: %s", rep, traceback.format_exc())
        return rep, None, f"{type(err).__name__}: {err}"


def _setting_cols(sid, s):
    return [sid, fmt_num(s.overlap_pct), str(s.aux_n), str(s.n_nonnull_target),
            str(s.n_nonnull_aux), fmt_num(s.mu)]


def _long_rows(sid, setting, rep, result, failure, classifiers):
    rows = []
    for name in classifiers:
        base = _setting_cols(sid, setting) + [str(rep), name]
        if failure is not None:
            rows.append(base + [None, None, "failed: " + failure.replace("\t", " "), None, None, None])
            continue
        err, info = result[name]
        em = info["em"]
        if em is None:
            em_cols = [None, None, None]
        else:
            steps = np.diff(em.log_likelihood_trace)
            em_cols = [em.iterations, int(em.converged), float(steps.min()) if steps.size else None]
        rows.append(base + [err, info["threshold"], "ok"] + em_cols)
    return rows


def aggregate(long_rows):
    """Mean error and standard error per (setting, classifier) over ok rows."""
    groups = {}
    for r in long_rows:
        if r[10] != "ok":
            continue
        key = tuple(r[:6]) + (r[7],)
        groups.setdefault(key, []).append(float(r[8]))
    out = []
    for key, errs in groups.items():
        e = np.asarray(errs)
        se = float(e.std(ddof=1) / np.sqrt(e.size)) if e.size > 1 else None
        out.append(list(key) + [float(e.mean()), se, e.size])
    return out


def run_benchmark(cfg, progress=None):
    tasks_per_setting = []
    for s in cfg.settings:
        sim = cfg.sim_config(s)
        models = draw_models(sim, make_rng(cfg.seed, *s.model_key(), 0))
        tasks_per_setting.append([(cfg, s, models, rep) for rep in range(cfg.replications)])

    flat = [t for ts in tasks_per_setting for t in ts]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_task, flat, chunksize=1))
    else:
        results = []
        for i, t in enumerate(flat):
            results.append(_task(t))
            if progress is not None:
                progress(i + 1, len(flat))

    long_rows, failures, k = [], 0, 0
    for s, ts in zip(cfg.settings, tasks_per_setting):
        for _ in ts:
            rep, res, fail = results[k]
            k += 1
            failures += fail is not None
            long_rows.extend(_long_rows(s.label(), s, rep, res, fail, cfg.classifiers))
    return BenchmarkResult(long_rows, aggregate(long_rows), failures, len(flat))


def write_benchmark(result, long_path, aggregate_path):
    write_tsv(long_path, LONG_HEADER, result.long_rows)
    write_tsv(aggregate_path, AGG_HEADER, result.aggregate_rows)


def settings_grid(overlaps, aux_sizes, nonnull_target, nonnull_aux, mus):
    return [Setting(float(o), int(a), int(t), int(n), float(m))
            for o in overlaps for a in aux_sizes for t in nonnull_target
            for n in nonnull_aux for m in mus]

