import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nebula.densities import log_binom_pmf, log_noncentral_chisq_pdf
from nebula.errors import DomainError, FitError, ResourceError
from nebula.npmle import (
    AuxSummary,
    Grid,
    LogLikelihood,
    MixingDistribution,
    TargetSufficientStats,
    build_grid,
    em_step,
    fit_npmle,
    fit_npmle_bivariate,
    marginal_log_likelihood,
    precompute_log_likelihood_tensor,
    run_em,
)

from oracles import convex_optimum, mixture_loglik_plain, simplex_search


def random_problem(rng, d, n0=30, n1=30):
    s0 = rng.integers(0, 2 * n0 + 1, d)
    s1 = rng.integers(0, 2 * n1 + 1, d)
    t = rng.chisquare(1, d) * rng.uniform(0.5, 4, d)
    return TargetSufficientStats(s0, s1, n0, n1), AuxSummary(t)


# -- sufficient statistics and grids ----------------------------------------


def test_sufficient_stats_from_genotypes():
    x = np.array([[0, 1], [2, 1], [1, 0], [2, 2]])
    y = np.array([0, 0, 1, 1])
    s = TargetSufficientStats.from_genotypes(x, y)
    np.testing.assert_array_equal(s.s0, [2, 2])
    np.testing.assert_array_equal(s.s1, [3, 2])
    assert (s.n0, s.n1) == (2, 2)
    np.testing.assert_allclose(s.pi1_hat, [0.75, 0.5])


def test_sufficient_stats_validation():
    with pytest.raises(DomainError):
        TargetSufficientStats([5], [0], 2, 2)
    with pytest.raises(DomainError):
        TargetSufficientStats([1, 2], [0], 2, 2)
    with pytest.raises(DomainError):
        TargetSufficientStats([], [], 2, 2)


def test_aux_rejects_negative():
    with pytest.raises(DomainError):
        AuxSummary([1.0, -0.1])


def test_grid_spans_observed_ranges():
    stats = TargetSufficientStats([2, 10, 6], [4, 8, 0], 10, 10)
    aux = AuxSummary([0.5, 7.0, 2.0])
    g = build_grid(stats, aux, 20, 20, 20)
    assert g.shape == (20, 20, 20)
    assert g.pi0[0] == pytest.approx(0.1) and g.pi0[-1] == pytest.approx(0.5)
    assert g.pi1[0] == 0.0 and g.pi1[-1] == pytest.approx(0.4)
    assert g.lam[0] == 0.5 and g.lam[-1] == 7.0
    for ax in g.axes:
        gaps = np.diff(ax)
        np.testing.assert_allclose(gaps, gaps[0], rtol=1e-12)


def test_grid_degenerate_axis():
    stats = TargetSufficientStats([4, 4, 4], [1, 3, 5], 10, 10)
    g = build_grid(stats, AuxSummary([1.0, 2.0, 3.0]), 20, 20, 20)
    assert g.shape == (1, 20, 20)
    assert g.pi0[0] == pytest.approx(0.2)


def test_grid_bivariate_and_mismatch():
    stats = TargetSufficientStats([1, 3], [1, 2], 5, 5)
    assert build_grid(stats, None, 4, 5).shape == (4, 5)
    with pytest.raises(DomainError):
        build_grid(stats, AuxSummary([1.0]))
    with pytest.raises(DomainError):
        build_grid(stats, AuxSummary([1.0, 2.0]), 0, 3, 3)


# -- likelihood tensor -------------------------------------------------------


def test_tensor_single_entry():
    stats = TargetSufficientStats([3], [5], 4, 4)
    aux = AuxSummary([2.5])
    grid = Grid(np.array([0.4]), np.array([0.6]), np.array([1.5]))
    L = precompute_log_likelihood_tensor(stats, aux, grid).dense()
    expected = (log_binom_pmf(3, 8, 0.4) + log_binom_pmf(5, 8, 0.6)
                + log_noncentral_chisq_pdf(2.5, 1, 1.5))
    assert L.shape == (1, 1, 1, 1)
    assert L[0, 0, 0, 0] == expected


def test_tensor_spot_entries_bit_equal():
    rng = np.random.default_rng(3)
    stats, aux = random_problem(rng, 7)
    grid = build_grid(stats, aux, 4, 5, 6)
    L = precompute_log_likelihood_tensor(stats, aux, grid, dense=True).dense()
    for j, a, b, c in [(0, 0, 0, 0), (3, 2, 4, 5), (6, 3, 1, 2)]:
        ref = (log_binom_pmf(stats.s0[j], 2 * stats.n0, grid.pi0[a])
               + log_binom_pmf(stats.s1[j], 2 * stats.n1, grid.pi1[b])
               + log_noncentral_chisq_pdf(aux.t[j], 1, grid.lam[c]))
        assert L[j, a, b, c] == ref


def test_tensor_permutation_equivariant():
    rng = np.random.default_rng(4)
    stats, aux = random_problem(rng, 9)
    grid = build_grid(stats, aux, 3, 3, 3)
    perm = rng.permutation(9)
    L = precompute_log_likelihood_tensor(stats, aux, grid).dense()
    Lp = precompute_log_likelihood_tensor(stats.subset(perm), aux.subset(perm), grid).dense()
    np.testing.assert_array_equal(L[perm], Lp)


def test_tensor_memory_cap():
    rng = np.random.default_rng(5)
    stats, aux = random_problem(rng, 50)
    grid = build_grid(stats, aux, 10, 10, 10)
    with pytest.raises(ResourceError, match="50000"):
        precompute_log_likelihood_tensor(stats, aux, grid, dense=True, max_entries=1000)
    # the factorised form needs no dense storage
    L = precompute_log_likelihood_tensor(stats, aux, grid, max_entries=1000)
    assert np.isfinite(marginal_log_likelihood(MixingDistribution.uniform(grid), L))


def test_zero_statistic_row_uses_limit():
    stats = TargetSufficientStats([3, 4], [5, 2], 4, 4)
    aux = AuxSummary([0.0, 1.0])
    grid = Grid(np.array([0.4]), np.array([0.6]), np.array([0.0, 2.0]))
    L = precompute_log_likelihood_tensor(stats, aux, grid).dense()
    # ratio across lambda matches the small-t limit of the density ratio
    t = 1e-12
    ratio = log_noncentral_chisq_pdf(t, 1, 2.0) - log_noncentral_chisq_pdf(t, 1, 0.0)
    assert L[0, 0, 0, 1] - L[0, 0, 0, 0] == pytest.approx(ratio, abs=1e-9)


# -- EM step -----------------------------------------------------------------


def test_em_step_single_point_stays_put():
    stats = TargetSufficientStats([3, 1], [5, 2], 4, 4)
    aux = AuxSummary([2.0, 0.3])
    grid = Grid(np.array([0.4]), np.array([0.6]), np.array([1.0]))
    L = precompute_log_likelihood_tensor(stats, aux, grid)
    g = em_step(MixingDistribution.uniform(grid), L)
    assert g.mass[0, 0, 0] == 1.0


def test_em_step_two_points_hand_computed():
    # posterior masses proportional to 0.3 and 0.1
    L = LogLikelihood(dense=np.log([[[0.3], [0.1]]]))
    grid = Grid(np.array([0.1, 0.2]), np.array([0.5]))
    g = MixingDistribution(grid, np.log(np.full((2, 1), 0.5)))
    out = em_step(g, L)
    np.testing.assert_allclose(out.mass.ravel(), [0.75, 0.25], rtol=1e-14)


def test_em_step_constant_likelihood_keeps_uniform():
    grid = Grid(np.linspace(0.1, 0.5, 3), np.linspace(0.2, 0.6, 4), np.linspace(0, 3, 2))
    L = LogLikelihood(dense=np.full((5, 3, 4, 2), -2.7))
    out = em_step(MixingDistribution.uniform(grid), L)
    np.testing.assert_allclose(out.mass, 1 / 24, rtol=1e-13)


def test_em_step_zero_likelihood_row_is_error():
    dense = np.zeros((3, 2, 1))
    dense[1] = -np.inf
    grid = Grid(np.array([0.1, 0.2]), np.array([0.5]))
    with pytest.raises(FitError) as info:
        em_step(MixingDistribution.uniform(grid), LogLikelihood(dense=dense))
    assert info.value.index == 1
    factors = [np.zeros((3, 2)), np.zeros((3, 1))]
    factors[0][2] = -np.inf
    with pytest.raises(FitError) as info:
        em_step(MixingDistribution.uniform(grid), LogLikelihood(factors=factors))
    assert info.value.index == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_em_monotone_and_mass_conserving(seed, d):
    rng = np.random.default_rng(seed)
    stats, aux = random_problem(rng, d)
    grid = build_grid(stats, aux, 4, 4, 4)
    L = precompute_log_likelihood_tensor(stats, aux, grid)
    g = MixingDistribution.uniform(grid)
    prev = marginal_log_likelihood(g, L)
    for _ in range(15):
        new_mass, _ = L.em_update(g.log_mass)
        assert abs(new_mass.sum() - 1.0) < 1e-12
        g = em_step(g, L)
        assert abs(g.mass.sum() - 1.0) < 1e-10
        assert np.all(g.mass >= 0)
        cur = marginal_log_likelihood(g, L)
        assert cur >= prev - 1e-10
        prev = cur


def test_dense_and_factorised_agree():
    rng = np.random.default_rng(11)
    stats, aux = random_problem(rng, 60)
    grid = build_grid(stats, aux, 5, 6, 7)
    Lf = precompute_log_likelihood_tensor(stats, aux, grid)
    Ld = precompute_log_likelihood_tensor(stats, aux, grid, dense=True)
    gf, rf = fit_npmle(stats, aux, grid, loglik=Lf)
    gd, rd = fit_npmle(stats, aux, grid, loglik=Ld)
    assert rf.iterations == rd.iterations
    np.testing.assert_allclose(gf.mass, gd.mass, atol=1e-10)
    assert rf.final_log_likelihood == pytest.approx(rd.final_log_likelihood, abs=1e-8)


def test_underflowing_rows_fall_back_to_log_space():
    # one SNP far in the tail of every grid point: linear-scale products underflow
    s0 = np.array([0, 400, 200])
    s1 = np.array([400, 0, 200])
    stats = TargetSufficientStats(s0, s1, 200, 200)
    aux = AuxSummary([1.0, 2.0, 3.0])
    grid = Grid(np.array([0.45, 0.5]), np.array([0.5, 0.55]), np.array([0.5, 2.0]))
    Lf = precompute_log_likelihood_tensor(stats, aux, grid)
    Ld = precompute_log_likelihood_tensor(stats, aux, grid, dense=True)
    g = MixingDistribution.uniform(grid)
    np.testing.assert_allclose(Lf.log_norm(g.log_mass), Ld.log_norm(g.log_mass), rtol=1e-12)
    np.testing.assert_allclose(em_step(g, Lf).mass, em_step(g, Ld).mass, atol=1e-12)


# -- marginal log-likelihood --------------------------------------------------


def test_marginal_loglik_single_point():
    stats = TargetSufficientStats([3, 1], [5, 2], 4, 4)
    aux = AuxSummary([2.0, 0.3])
    grid = Grid(np.array([0.4]), np.array([0.6]), np.array([1.0]))
    L = precompute_log_likelihood_tensor(stats, aux, grid)
    v = marginal_log_likelihood(MixingDistribution.uniform(grid), L)
    assert v == pytest.approx(L.dense()[:, 0, 0, 0].sum(), abs=1e-12)


def test_marginal_loglik_matches_plain_loops():
    rng = np.random.default_rng(8)
    stats, aux = random_problem(rng, 3, 6, 6)
    grid = build_grid(stats, aux, 2, 2, 2)
    L = precompute_log_likelihood_tensor(stats, aux, grid)
    mass = rng.dirichlet(np.ones(8))
    g = MixingDistribution.from_mass(grid, mass.reshape(2, 2, 2))
    lik = np.exp(L.dense().reshape(3, 8))
    assert marginal_log_likelihood(g, L) == pytest.approx(mixture_loglik_plain(mass, lik), abs=1e-10)


def test_marginal_loglik_zero_mass_point_is_inert():
    rng = np.random.default_rng(9)
    stats, aux = random_problem(rng, 5)
    g2 = Grid(np.array([0.3, 0.5]), np.array([0.4]), np.array([1.0]))
    g3 = Grid(np.array([0.3, 0.5, 0.7]), np.array([0.4]), np.array([1.0]))
    m2 = MixingDistribution.from_mass(g2, np.array([[[0.4]], [[0.6]]]))
    m3 = MixingDistribution.from_mass(g3, np.array([[[0.4]], [[0.6]], [[0.0]]]))
    v2 = marginal_log_likelihood(m2, precompute_log_likelihood_tensor(stats, aux, g2))
    v3 = marginal_log_likelihood(m3, precompute_log_likelihood_tensor(stats, aux, g3))
    assert v2 == pytest.approx(v3, abs=1e-12)


# -- fitting -------------------------------------------------------------------


def test_fit_trace_and_report():
    rng = np.random.default_rng(12)
    stats, aux = random_problem(rng, 40)
    grid = build_grid(stats, aux, 5, 5, 5)
    g, rep = fit_npmle(stats, aux, grid)
    assert rep.converged
    assert rep.iterations == len(rep.log_likelihood_trace) - 1
    assert np.all(np.diff(rep.log_likelihood_trace) >= -1e-10)
    L = precompute_log_likelihood_tensor(stats, aux, grid)
    assert marginal_log_likelihood(g, L) == pytest.approx(rep.final_log_likelihood, abs=1e-9)


def test_fit_huge_tol_stops_after_one_iteration():
    rng = np.random.default_rng(13)
    stats, aux = random_problem(rng, 20)
    grid = build_grid(stats, aux, 4, 4, 4)
    _, rep = fit_npmle(stats, aux, grid, tol=1e3)
    assert rep.iterations == 1 and rep.converged


def test_fit_max_iter_reports_nonconvergence():
    rng = np.random.default_rng(14)
    stats, aux = random_problem(rng, 30)
    grid = build_grid(stats, aux, 6, 6, 6)
    _, rep = fit_npmle(stats, aux, grid, tol=1e-15, max_iter=3)
    assert not rep.converged and rep.iterations == 3


def test_fit_argument_checks():
    rng = np.random.default_rng(15)
    stats, aux = random_problem(rng, 3)
    grid = build_grid(stats, aux, 2, 2, 2)
    with pytest.raises(DomainError):
        fit_npmle(stats, aux, grid, tol=0.0)
    with pytest.raises(DomainError):
        fit_npmle(stats, aux, grid, max_iter=0)


def test_single_snp_concentrates_on_argmax():
    rng = np.random.default_rng(16)
    stats, aux = random_problem(rng, 1)
    grid = Grid(np.array([0.2, 0.5]), np.array([0.3, 0.6]), np.array([0.5, 3.0]))
    L = precompute_log_likelihood_tensor(stats, aux, grid)
    g, rep = fit_npmle(stats, aux, grid, tol=1e-13, max_iter=20000)
    dense = L.dense()[0]
    assert np.unravel_index(np.argmax(g.mass), grid.shape) == np.unravel_index(np.argmax(dense), grid.shape)
    assert g.mass.max() > 0.999
    assert rep.final_log_likelihood == pytest.approx(dense.max(), abs=1e-6)
    # enumeration over the lattice agrees
    best = simplex_search(np.exp(dense.reshape(1, -1)), max_support=2)
    assert rep.final_log_likelihood >= best - 1e-6


@pytest.mark.parametrize("seed", range(4))
def test_small_fit_reaches_global_optimum(seed):
    rng = np.random.default_rng(100 + seed)
    stats, aux = random_problem(rng, 3, 8, 8)
    grid = build_grid(stats, aux, 2, 2, 2)
    L = precompute_log_likelihood_tensor(stats, aux, grid)
    lik = np.exp(L.dense().reshape(3, 8))
    _, rep = fit_npmle(stats, aux, grid, tol=1e-12, max_iter=100_000)
    assert rep.final_log_likelihood >= simplex_search(lik, max_support=3) - 1e-6
    assert rep.final_log_likelihood >= convex_optimum(lik)[0] - 1e-6


def test_permutation_invariance():
    rng = np.random.default_rng(17)
    stats, aux = random_problem(rng, 50)
    grid = build_grid(stats, aux, 5, 5, 5)
    perm = rng.permutation(50)
    g, _ = fit_npmle(stats, aux, grid)
    gp, _ = fit_npmle(stats.subset(perm), aux.subset(perm), grid)
    np.testing.assert_allclose(g.mass, gp.mass, atol=1e-10)


def test_duplicating_snps_keeps_fixed_point():
    rng = np.random.default_rng(18)
    stats, aux = random_problem(rng, 25)
    grid = build_grid(stats, aux, 4, 4, 4)
    g, _ = fit_npmle(stats, aux, grid, tol=1e-12, max_iter=50_000)
    idx = np.concatenate([np.arange(25), np.arange(25)])
    L2 = precompute_log_likelihood_tensor(stats.subset(idx), aux.subset(idx), grid)
    L1 = precompute_log_likelihood_tensor(stats, aux, grid)
    np.testing.assert_allclose(em_step(g, L2).mass, em_step(g, L1).mass, atol=1e-13)
    np.testing.assert_allclose(em_step(g, L2).mass, g.mass, atol=1e-6)


def test_run_em_from_start():
    rng = np.random.default_rng(19)
    stats, aux = random_problem(rng, 20)
    grid = build_grid(stats, aux, 3, 3, 3)
    L = precompute_log_likelihood_tensor(stats, aux, grid)
    g, rep = run_em(L, grid)
    g2, rep2 = run_em(L, grid, start=g)
    assert rep2.iterations <= 2
    assert rep2.final_log_likelihood >= rep.final_log_likelihood - 1e-10


# -- bivariate fits --------------------------------------------------------------


def test_bivariate_matches_trivariate_with_constant_statistic():
    rng = np.random.default_rng(20)
    stats, _ = random_problem(rng, 40)
    aux = AuxSummary(np.full(40, 2.0))
    grid = build_grid(stats, aux, 5, 5, 4)
    g3, r3 = fit_npmle(stats, aux, grid, tol=1e-12, max_iter=50_000)
    g2, r2 = fit_npmle_bivariate(stats, np.ones(40, bool), grid.pi0, grid.pi1,
                                 tol=1e-12, max_iter=50_000)
    # constant T adds the same per-SNP log factor at each lambda
    chi = float(np.max(log_noncentral_chisq_pdf(2.0, 1, grid.lam)))
    assert r3.final_log_likelihood - 40 * chi == pytest.approx(r2.final_log_likelihood, abs=1e-6)
    np.testing.assert_allclose(g3.mass.sum(axis=2), g2.mass, atol=1e-4)


def test_bivariate_single_snp_and_trivial_grid():
    stats = TargetSufficientStats([3, 9], [7, 1], 5, 5)
    g, _ = fit_npmle_bivariate(stats, [0], [0.2, 0.7], [0.3, 0.7], tol=1e-13, max_iter=20000)
    assert np.unravel_index(np.argmax(g.mass), (2, 2)) == (0, 1)
    assert g.mass[0, 1] > 0.999
    g1, _ = fit_npmle_bivariate(stats, np.array([True, True]), [0.5], [0.5])
    assert g1.mass[0, 0] == 1.0


def test_bivariate_empty_selector():
    stats = TargetSufficientStats([3, 9], [7, 1], 5, 5)
    with pytest.raises(DomainError):
        fit_npmle_bivariate(stats, np.zeros(2, bool), [0.5], [0.5])


def test_mixing_distribution_checks():
    grid = Grid(np.array([0.1, 0.2]), np.array([0.5]))
    with pytest.raises(DomainError):
        MixingDistribution(grid, np.zeros((3, 1)))
    with pytest.raises(DomainError):
        MixingDistribution.from_mass(grid, np.array([[-0.1], [1.1]]))
    g = MixingDistribution.from_mass(grid, np.array([[0.0], [2.0]]))
    assert g.support() == [((0.2, 0.5), 1.0)]


def test_axis_posteriors_dense_and_factorised_agree():
    rng = np.random.default_rng(21)
    stats, aux = random_problem(rng, 30)
    # append SNPs whose linear-scale likelihood underflows everywhere
    stats = TargetSufficientStats(np.r_[stats.s0, 0, 60], np.r_[stats.s1, 60, 0], 30, 30)
    aux = AuxSummary(np.r_[aux.t, 1.0, 2.0])
    grid = Grid(np.array([0.45, 0.5]), np.array([0.5, 0.55]), np.array([0.5, 2.0]))
    g = MixingDistribution.from_mass(grid, rng.dirichlet(np.ones(8)).reshape(2, 2, 2))
    wf = precompute_log_likelihood_tensor(stats, aux, grid).axis_posteriors(g.log_mass)
    wd = precompute_log_likelihood_tensor(stats, aux, grid, dense=True).axis_posteriors(g.log_mass)
    for a, b in zip(wf, wd):
        np.testing.assert_allclose(a, b, atol=1e-12)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
