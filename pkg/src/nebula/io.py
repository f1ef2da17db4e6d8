"""Tab-separated readers and writers for every on-disk artifact.

Floats are written with 17 significant digits so values round-trip
exactly; ``NA`` marks missing cells.
"""

import os
from pathlib import Path

import numpy as np

from .classifiers import DiseaseModel
from .errors import DomainError
from .npmle import AuxSummary, FitReport, Grid, MixingDistribution, TargetSufficientStats
from .preprocess import MISSING, GenotypeMatrix

NA = "NA"


def fmt(x):
    if x is None:
        return NA
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return NA
    return format(x, ".17g")


def write_tsv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(c if isinstance(c, str) else fmt(c) for c in row) + "\n")


def read_tsv(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DomainError(f"{path}: empty file")
    header = lines[0].split("\t")
    rows = [ln.split("\t") for ln in lines[1:]]
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DomainError(f"{path}: row {i + 1} has {len(r)} fields, header has {len(header)}")
    return header, rows


def _float(s):
    return np.nan if s == NA else float(s)


def write_keyvalue(path, data):
    with open(path, "w", newline="\n") as fh:
        for k, v in data.items():
            fh.write(f"{k}={v if isinstance(v, str) else fmt(v)}\n")


def read_keyvalue(path):
    out = {}
    with open(path) as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            if "=" not in ln:
                raise DomainError(f"{path}: expected key=value, got {ln!r}")
            k, v = ln.split("=", 1)
            out[k.strip()] = v.strip()
    return out


# -- genotypes --------------------------------------------------------------


def write_genotypes(path, m):
    labels = m.labels if m.labels is not None else np.full(m.shape[0], MISSING)
    with open(path, "w", newline="\n") as fh:
        fh.write("\t".join(["subject_id", "label"] + m.snp_ids) + "\n")
        for sid, lab, row in zip(m.subject_ids, labels, m.values):
            cells = [NA if v == MISSING else str(int(v)) for v in row]
            lab = NA if lab == MISSING else str(int(lab))
            fh.write("\t".join([sid, lab] + cells) + "\n")


def read_genotypes(path):
    header, rows = read_tsv(path)
    if header[:2] != ["subject_id", "label"]:
        raise DomainError(f"{path}: header must start with subject_id, label")
    subjects = [r[0] for r in rows]
    labels = np.array([MISSING if r[1] == NA else int(r[1]) for r in rows], dtype=np.int8)
    vals = np.array([[MISSING if c == NA else int(c) for c in r[2:]] for r in rows],
                    dtype=np.int8).reshape(len(rows), len(header) - 2)
    has_labels = bool(np.any(labels != MISSING))
    return GenotypeMatrix(vals, header[2:], subjects, labels if has_labels else None)


def genotype_matrix(x, y, snp_ids, prefix):
    ids = [f"{prefix}{i + 1}" for i in range(x.shape[0])]
    return GenotypeMatrix(x, snp_ids, ids, y)


# -- summaries --------------------------------------------------------------


def write_aux_summary(path, snp_ids, aux):
    g = aux.gamma_hat if aux.gamma_hat is not None else [None] * aux.d
    write_tsv(path, ["snp_id", "t_stat", "gamma_hat"],
              ([s, t, gh] for s, t, gh in zip(snp_ids, aux.t, g)))


def read_aux_summary(path):
    header, rows = read_tsv(path)
    if header[:2] != ["snp_id", "t_stat"]:
        raise DomainError(f"{path}: header must start with snp_id, t_stat")
    ids = [r[0] for r in rows]
    t = np.array([float(r[1]) for r in rows])
    gamma = None
    if len(header) > 2 and header[2] == "gamma_hat":
        g = np.array([_float(r[2]) for r in rows])
        if not np.all(np.isnan(g)):
            gamma = g
    return ids, AuxSummary(t, gamma)


def write_truth(path, snp_ids, model, nonnull_target, nonnull_aux):
    d = len(snp_ids)
    t = np.zeros(d, dtype=int)
    a = np.zeros(d, dtype=int)
    t[nonnull_target] = 1
    a[nonnull_aux] = 1
    write_tsv(path, ["snp_id", "pi0", "pi1", "nonnull_target", "nonnull_aux"],
              ([s, p0, p1, int(x), int(y)] for s, p0, p1, x, y in zip(snp_ids, model.pi0, model.pi1, t, a)))


def read_truth(path):
    header, rows = read_tsv(path)
    ids = [r[0] for r in rows]
    model = DiseaseModel([float(r[1]) for r in rows], [float(r[2]) for r in rows])
    return ids, model


def write_counts(path, snp_ids, stats):
    write_tsv(path, ["snp_id", "s0", "s1", "n0", "n1"],
              ([s, int(a), int(b), stats.n0, stats.n1] for s, a, b in zip(snp_ids, stats.s0, stats.s1)))


def read_counts(path):
    header, rows = read_tsv(path)
    if header != ["snp_id", "s0", "s1", "n0", "n1"]:
        raise DomainError(f"{path}: expected header snp_id s0 s1 n0 n1")
    n0 = {int(r[3]) for r in rows}
    n1 = {int(r[4]) for r in rows}
    if len(n0) != 1 or len(n1) != 1:
        raise DomainError(f"{path}: class sizes must be constant across rows")
    stats = TargetSufficientStats([int(r[1]) for r in rows], [int(r[2]) for r in rows],
                                  n0.pop(), n1.pop())
    return [r[0] for r in rows], stats


def write_annotations(path, snp_ids, annotations):
    write_tsv(path, ["snp_id", "annotation"], ([s, int(a)] for s, a in zip(snp_ids, annotations)))


def read_annotations(path):
    header, rows = read_tsv(path)
    return [r[0] for r in rows], np.array([int(r[1]) for r in rows])


# -- mixing distributions ---------------------------------------------------

_AXES = ("pi0", "pi1", "lambda")


def write_mixing(prefix, g, report=None):
    """Write ``<prefix>.tsv`` (positive-mass support points) and ``<prefix>.meta``."""
    prefix = str(prefix)
    names = list(_AXES[: len(g.grid.axes)])
    rows = [list(point) + [mass] for point, mass in g.support()]
    write_tsv(prefix + ".tsv", names + ["mass"], rows)
    meta = {}
    for name, ax in zip(names, g.grid.axes):
        meta[f"{name}_n"] = int(ax.size)
        meta[f"{name}_min"] = float(ax[0])
        meta[f"{name}_max"] = float(ax[-1])
    if report is not None:
        meta["iterations"] = report.iterations
        meta["converged"] = int(report.converged)
        meta["log_likelihood"] = report.final_log_likelihood
    write_keyvalue(prefix + ".meta", meta)


def read_mixing(prefix):
    prefix = str(prefix)
    meta = read_keyvalue(prefix + ".meta")
    header, rows = read_tsv(prefix + ".tsv")
    names = header[:-1]
    axes = []
    for name in names:
        n = int(meta[f"{name}_n"])
        lo, hi = float(meta[f"{name}_min"]), float(meta[f"{name}_max"])
        axes.append(np.array([lo]) if n == 1 else np.linspace(lo, hi, n))
    grid = Grid(*axes)
    mass = np.zeros(grid.shape)
    for r in rows:
        idx = []
        for ax, v in zip(axes, r[:-1]):
            k = int(np.argmin(np.abs(ax - float(v))))
            if not np.isclose(ax[k], float(v), rtol=1e-12, atol=1e-15):
                raise DomainError(f"{prefix}.tsv: point {v} is not on the grid")
            idx.append(k)
        mass[tuple(idx)] = float(r[-1])
    report = None
    if "iterations" in meta:
        report = FitReport(int(meta["iterations"]), float(meta["log_likelihood"]),
                           bool(int(meta["converged"])), [])
    return MixingDistribution.from_mass(grid, mass), report


# -- reports ----------------------------------------------------------------


def write_scores(path, subject_ids, scores, classes, cov_loglr):
    write_tsv(path, ["subject_id", "score", "predicted_class", "covariate_loglr"],
              ([s, float(a), int(b), float(c)] for s, a, b, c in zip(subject_ids, scores, classes, cov_loglr)))


def write_per_snp(path, subject_ids, snp_ids, contributions):
    write_tsv(path, ["subject_id"] + list(snp_ids),
              ([s] + [float(v) for v in row] for s, row in zip(subject_ids, contributions)))


def write_realization(out_dir, real, config):
    """Directory layout of one simulated study (no auxiliary genotypes)."""
    out = Path(out_dir)
    os.makedirs(out, exist_ok=True)
    snp_ids = [f"snp{j + 1}" for j in range(real.target_model.d)]
    write_genotypes(out / "target_train.tsv", genotype_matrix(real.train_x, real.train_y, snp_ids, "train"))
    write_genotypes(out / "target_test.tsv", genotype_matrix(real.test_x, real.test_y, snp_ids, "test"))
    write_aux_summary(out / "aux_summary.tsv", snp_ids, real.aux_summary)
    write_truth(out / "truth.tsv", snp_ids, real.target_model, real.nonnull_target, real.nonnull_aux)
    write_keyvalue(out / "config.txt", config.as_dict())
    return snp_ids
