"""Command-line entry point: ``nebula {simulate,preprocess,fit,predict,benchmark}``.

Every flag can also be given as ``key=value`` in the file passed with
``--config`` (dashes or underscores in keys).  Flags override the config
file, which overrides built-in defaults.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import classifiers as clf
from . import io
from .bench import (
    CLASSIFIERS,
    BenchmarkConfig,
    run_benchmark,
    settings_grid,
    threshold_candidates,
    write_benchmark,
)
from .errors import ConfigError, DomainError, FitError, ResourceError
from .npmle import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    TargetSufficientStats,
    build_grid,
    fit_npmle,
    fit_npmle_bivariate,
)
from .preprocess import hwe_filter, impute_missing, maf_filter
from .simulate import SimulationConfig, realize_study

log = logging.getLogger("nebula")

PREDICT_CLASSIFIERS = ("prs", "adaptive-prs", "nebula", "nebula-annot", "oracle")


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _common(parser):
    g = parser.add_argument_group("common")
    g.add_argument("--config", help="key=value file supplying defaults for any flag")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--out-dir", default=".")
    g.add_argument("--grid-d0", type=int, default=20)
    g.add_argument("--grid-d1", type=int, default=20)
    g.add_argument("--grid-d2", type=int, default=20)
    g.add_argument("--tol", type=float, default=DEFAULT_TOL)
    g.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    g.add_argument("--prevalence", type=float, default=0.5)
    g.add_argument("--classifier", choices=PREDICT_CLASSIFIERS, default="nebula")
    g.add_argument("--threshold", type=float, default=None,
                   help="PRS threshold; cross-validated when omitted and --train is given")
    g.add_argument("--cv-folds", type=int, default=5)
    g.add_argument("--verbose", action="store_true")


def _sim_flags(p):
    p.add_argument("--d", type=int, default=10_000)
    p.add_argument("--mu", type=float, default=0.15)
    p.add_argument("--effect-var", type=float, default=0.01)
    p.add_argument("--n0-train", type=int, default=100)
    p.add_argument("--n1-train", type=int, default=100)
    p.add_argument("--n0-test", type=int, default=50)
    p.add_argument("--n1-test", type=int, default=50)


def build_parser():
    parser = argparse.ArgumentParser(prog="nebula", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write one synthetic study")
    _common(p)
    _sim_flags(p)
    p.add_argument("--n-nonnull-target", type=int, default=100)
    p.add_argument("--n-nonnull-aux", type=int, default=100)
    p.add_argument("--overlap", type=float, default=50.0, help="percent overlap of non-null sets")
    p.add_argument("--n0-aux", type=int, default=1000)
    p.add_argument("--n1-aux", type=int, default=1000)

    p = sub.add_parser("preprocess", help="MAF/HWE filtering and random imputation")
    _common(p)
    p.add_argument("--genotypes", required=False)
    p.add_argument("--min-maf", type=float, default=0.01)
    p.add_argument("--hwe-p", type=float, default=1e-3)
    p.add_argument("--impute", type=int, choices=(0, 1), default=1)

    p = sub.add_parser("fit", help="fit the grid NPMLE prior")
    _common(p)
    p.add_argument("--train", help="training genotype TSV")
    p.add_argument("--counts", help="target count TSV (snp_id s0 s1 n0 n1)")
    p.add_argument("--aux", help="auxiliary summary TSV")
    p.add_argument("--annotations", help="binary SNP annotation TSV")

    p = sub.add_parser("predict", help="score test subjects")
    _common(p)
    p.add_argument("--test")
    p.add_argument("--train")
    p.add_argument("--counts")
    p.add_argument("--aux")
    p.add_argument("--fit-dir")
    p.add_argument("--truth")
    p.add_argument("--annotations")
    p.add_argument("--covariates", help="TSV of subject_id plus covariate columns")
    p.add_argument("--per-snp", type=int, choices=(0, 1), default=0)

    p = sub.add_parser("benchmark", help="simulation benchmark over a settings grid")
    _common(p)
    _sim_flags(p)
    p.add_argument("--overlaps", type=_floats, default=[25.0, 50.0, 100.0])
    p.add_argument("--aux-sizes", type=_ints, default=[1000])
    p.add_argument("--nonnull-target", type=_ints, default=[100])
    p.add_argument("--nonnull-aux", type=_ints, default=[100])
    p.add_argument("--mus", type=_floats, default=[0.15])
    p.add_argument("--replications", type=int, default=200)
    p.add_argument("--classifiers", default=",".join(CLASSIFIERS))
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        conf = io.read_keyvalue(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in conf.items():
            dest = key.replace("-", "_")
            if dest not in actions:
                raise ConfigError(f"{args.config}: unknown key {key!r}")
            if isinstance(actions[dest], argparse._StoreTrueAction):
                value = value.lower() in ("1", "true", "yes", "on")
            defaults[dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _need(path, flag):
    if path is None:
        raise ConfigError(f"{flag} is required")
    if not os.path.exists(path):
        raise ConfigError(f"{flag}: {path} does not exist")
    return path


def _check_grid(args):
    for k in ("grid_d0", "grid_d1", "grid_d2"):
        if getattr(args, k) < 1:
            raise ConfigError(f"--{k.replace('_', '-')} must be at least 1")


def _same_ids(a, b, what):
    if list(a) != list(b):
        raise ConfigError(f"SNP ids in {what} do not match the target data")


def _load_target(args):
    if args.train:
        m = io.read_genotypes(_need(args.train, "--train"))
        if m.labels is None or np.any(m.labels < 0) or np.any(m.values < 0):
            raise ConfigError("--train needs complete genotypes and 0/1 labels")
        return m.snp_ids, TargetSufficientStats.from_genotypes(m.values, m.labels), m
    if args.counts:
        ids, stats = io.read_counts(_need(args.counts, "--counts"))
        return ids, stats, None
    raise ConfigError("one of --train or --counts is required")


def _load_aux(args, snp_ids):
    if not args.aux:
        return None
    ids, aux = io.read_aux_summary(_need(args.aux, "--aux"))
    _same_ids(ids, snp_ids, args.aux)
    return aux


def _load_annotations(args, snp_ids):
    ids, ann = io.read_annotations(_need(args.annotations, "--annotations"))
    _same_ids(ids, snp_ids, args.annotations)
    return ann


def cmd_simulate(args):
    cfg = SimulationConfig(
        d=args.d, n_nonnull_target=args.n_nonnull_target, n_nonnull_aux=args.n_nonnull_aux,
        overlap_pct=args.overlap, mu=args.mu, effect_var=args.effect_var,
        n0_train=args.n0_train, n1_train=args.n1_train, n0_test=args.n0_test,
        n1_test=args.n1_test, n0_aux=args.n0_aux, n1_aux=args.n1_aux, seed=args.seed,
    )
    real = realize_study(cfg)
    io.write_realization(args.out_dir, real, cfg)
    print(f"simulated d={cfg.d} train={cfg.n0_train}/{cfg.n1_train} test={cfg.n0_test}/{cfg.n1_test} "
          f"aux={cfg.n0_aux}/{cfg.n1_aux} overlap={cfg.overlap_count} -> {args.out_dir}")
    return 0


def cmd_preprocess(args):
    m = io.read_genotypes(_need(args.genotypes, "--genotypes"))
    m, drops = maf_filter(m, args.min_maf)
    m, more = hwe_filter(m, args.hwe_p)
    drops += more
    if args.impute:
        m = impute_missing(m, args.seed)
    out = Path(args.out_dir)
    os.makedirs(out, exist_ok=True)
    io.write_genotypes(out / "genotypes.tsv", m)
    io.write_tsv(out / "drop_log.tsv", ["snp_id", "reason", "statistic", "p_value"],
                 ([r.snp_id, r.reason, r.statistic, r.p_value] for r in drops))
    print(f"kept {m.shape[1]} SNPs, dropped {len(drops)} -> {out}")
    return 0


def cmd_fit(args):
    _check_grid(args)
    snp_ids, stats, _ = _load_target(args)
    aux = _load_aux(args, snp_ids)
    out = Path(args.out_dir)
    os.makedirs(out, exist_ok=True)
    io.write_counts(out / "counts.tsv", snp_ids, stats)
    if aux is None and not args.annotations:
        raise ConfigError("fit needs --aux and/or --annotations")
    try:
        if aux is not None:
            grid = build_grid(stats, aux, args.grid_d0, args.grid_d1, args.grid_d2)
            g, report = fit_npmle(stats, aux, grid, args.tol, args.max_iter)
            io.write_mixing(out / "mixing", g, report)
            print(f"fit {grid.shape} grid: {report.iterations} iterations, "
                  f"log-likelihood {report.final_log_likelihood:.6f}, converged={report.converged}")
        if args.annotations:
            ann = _load_annotations(args, snp_ids)
            grid2 = build_grid(stats, None, args.grid_d0, args.grid_d1)
            for value in (0, 1):
                if not np.any(ann == value):
                    continue
                g, report = fit_npmle_bivariate(stats, ann == value, grid2.pi0, grid2.pi1,
                                                args.tol, args.max_iter)
                io.write_mixing(out / f"mixing_annot{value}", g, report)
                print(f"fit annotation {value}: {report.iterations} iterations")
    except FitError as err:
        if err.index is not None:
            raise FitError(f"{err} (snp_id {snp_ids[err.index]})", err.index) from err
        raise
    return 0


def _covariates(args, train, test):
    if not args.covariates:
        return None, None
    if train is None:
        raise ConfigError("--covariates needs --train for class labels")
    header, rows = io.read_tsv(_need(args.covariates, "--covariates"))
    table = {r[0]: [float(v) for v in r[1:]] for r in rows}
    try:
        z_train = np.array([table[s] for s in train.subject_ids])
        z_test = np.array([table[s] for s in test.subject_ids])
    except KeyError as err:
        raise ConfigError(f"--covariates lacks subject {err}") from None
    model = clf.fit_covariate_model(z_train, train.labels)
    return model, clf.covariate_loglr(z_test, model)


def cmd_predict(args):
    snp_ids, stats, train = _load_target(args)
    test = io.read_genotypes(_need(args.test, "--test"))
    _same_ids(test.snp_ids, snp_ids, args.test)
    if np.any(test.values < 0):
        raise ConfigError("--test contains missing genotypes; run preprocess first")
    aux = _load_aux(args, snp_ids)
    name = args.classifier
    if name == "oracle":
        ids, model = io.read_truth(_need(args.truth, "--truth"))
        _same_ids(ids, snp_ids, args.truth)
        table = clf.oracle_table(model)
    elif name in ("prs", "adaptive-prs"):
        if name == "adaptive-prs" and (aux is None or aux.gamma_hat is None):
            raise ConfigError("adaptive-prs needs --aux with gamma_hat")
        thr = args.threshold
        beta = clf.fit_log_odds(stats)
        if thr is None and train is not None:
            mags = beta if name == "prs" else beta * aux.gamma_hat
            scorer = "prs" if name == "prs" else "adaptive_prs"
            thr = clf.select_threshold_cv(train.values, train.labels, threshold_candidates(mags),
                                          args.cv_folds, scorer, args.prevalence, args.seed, aux=aux)
        thr = 0.0 if thr is None else thr
        table = clf.prs_table(stats, thr) if name == "prs" else clf.adaptive_prs_table(stats, aux, thr)
        log.info("threshold %s", thr)
    elif name == "nebula":
        if aux is None:
            raise ConfigError("nebula needs --aux")
        g, _ = io.read_mixing(Path(_need(args.fit_dir, "--fit-dir")) / "mixing")
        table = clf.nebula_table(stats, aux, g)
    else:
        ann = _load_annotations(args, snp_ids)
        fit_dir = Path(_need(args.fit_dir, "--fit-dir"))
        gs = []
        for value in (0, 1):
            prefix = fit_dir / f"mixing_annot{value}"
            gs.append(io.read_mixing(prefix)[0] if Path(str(prefix) + ".tsv").exists() else None)
        table = clf.nebula_annotated_table(stats, ann, gs[0], gs[1])
    _, cov = _covariates(args, train, test)
    contrib = clf.snp_contributions(table, test.values)
    scores = clf.batch_scores(table, test.values, args.prevalence, cov)
    cov = np.zeros(len(scores)) if cov is None else cov
    out = Path(args.out_dir)
    os.makedirs(out, exist_ok=True)
    io.write_scores(out / "scores.tsv", test.subject_ids, scores, clf.predict(scores), cov)
    if args.per_snp:
        io.write_per_snp(out / "per_snp.tsv", test.subject_ids, snp_ids, contrib)
    print(f"scored {len(scores)} subjects with {name} -> {out / 'scores.tsv'}")
    return 0


def cmd_benchmark(args):
    _check_grid(args)
    settings = settings_grid(args.overlaps, args.aux_sizes, args.nonnull_target,
                             args.nonnull_aux, args.mus)
    cfg = BenchmarkConfig(
        settings=settings, replications=args.replications, d=args.d,
        n0_train=args.n0_train, n1_train=args.n1_train, n0_test=args.n0_test,
        n1_test=args.n1_test, effect_var=args.effect_var,
        grid=(args.grid_d0, args.grid_d1, args.grid_d2), tol=args.tol,
        max_iter=args.max_iter, cv_folds=args.cv_folds, prevalence=args.prevalence,
        seed=args.seed, threads=args.threads,
        classifiers=[c for c in args.classifiers.split(",") if c],
    )
    result = run_benchmark(cfg)
    out = Path(args.out_dir)
    os.makedirs(out, exist_ok=True)
    write_benchmark(result, out / "benchmark_long.tsv", out / "benchmark_aggregate.tsv")
    print(f"{result.total} replications, {result.failures} failed -> {out}")
    if result.failure_fraction > 0.10:
        print("more than 10% of replications failed", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "benchmark": cmd_benchmark,
}


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError, FitError, ResourceError, OSError) as err:
        print(f"nebula: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
