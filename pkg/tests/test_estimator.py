import numpy as np
import pytest


from berkdemand.basis import BasisSpec, DomainBox, basis_eval
from berkdemand.berkson import BerksonSpec
from berkdemand.estimator import (
    FitOptions,
    InfeasibleError,
    bootstrap,
    build_constraints,
    constraint_matrices,
    constraint_report,
    default_basis,
    default_start,
    fit,
    g_inv,
    load_model,
    log_likelihood,
    log_likelihood_grad,
    save_model,
    _bootstrap_indices,
)
from berkdemand.synth import DgpSpec, simulate

from conftest import make_dataset

NO_BERKSON = BerksonSpec(sigma_by_region={"all": 0.0})
SMALL_BERKSON = BerksonSpec(sigma_by_region={"all": 0.05}, n_nodes=11)


def small_spec(box=None, degs=(1, 1, 2)):
    box = box or DomainBox(p_lo=0.1, p_hi=0.5, y_lo=10.0, y_hi=12.0, q_lo=6.0, q_hi=7.4)
    return BasisSpec(box=box, deg_p=degs[0], deg_y=degs[1], deg_q=degs[2])


class TestGInv:
    def test_constant_member(self):
        spec = small_spec()
        theta = np.zeros(spec.size)
        theta[spec.index_of(0, 0, 0)] = 1.0
        for q in (6.0, 6.7, 7.4):
            assert g_inv(theta, spec, 0.3, 11.0, q) == 1.0

    def test_affine_identity_quartile(self, affine_theta):
        spec = small_spec()
        theta = affine_theta(spec)
        q_quart = spec.box.q_lo + 0.25 * (spec.box.q_hi - spec.box.q_lo)
        assert g_inv(theta, spec, 0.2, 11.0, q_quart) == pytest.approx(0.25)

    def test_equals_dot_product(self):
        spec = small_spec()
        rng = np.random.default_rng(0)
        theta = rng.normal(size=spec.size)
        p, y, q = 0.33, 10.6, 7.0
        expected = float(basis_eval(spec, p, y, q) @ theta)
        assert g_inv(theta, spec, p, y, q) == pytest.approx(expected)

    def test_wrong_length_rejected(self):
        spec = small_spec()
        with pytest.raises(ValueError):
            g_inv(np.ones(spec.size + 1), spec, 0.3, 11.0, 7.0)


class TestLogLikelihood:
    def test_uniform_density_single_household(self, affine_theta):
        spec = small_spec()
        theta = affine_theta(spec)
        data = make_dataset([6.8])
        ll = log_likelihood(theta, data, spec, NO_BERKSON)
        assert ll == pytest.approx(-np.log(spec.box.q_hi - spec.box.q_lo))

    def test_unit_box_density_one(self, unit_q_box, affine_theta):
        spec = BasisSpec(box=unit_q_box, deg_p=1, deg_y=1, deg_q=2)
        theta = affine_theta(spec)
        data = make_dataset([6.2, 6.5, 6.9])
        assert log_likelihood(theta, data, spec, NO_BERKSON) == pytest.approx(0.0, abs=1e-12)

    def test_sigma_invariance_for_q_only_basis(self, affine_theta):
        box = small_spec().box
        spec = BasisSpec(box=box, deg_p=0, deg_y=0, deg_q=3)
        rng = np.random.default_rng(1)
        theta = np.zeros(spec.size)
        theta[0], theta[1] = 0.5, 0.45
        theta[2] = 0.01
        data = make_dataset(rng.uniform(6.2, 7.2, size=40))
        ll0 = log_likelihood(theta, data, spec, NO_BERKSON)
        ll1 = log_likelihood(theta, data, spec, SMALL_BERKSON)
        assert ll1 == pytest.approx(ll0, abs=1e-12)

    def test_infeasible_theta_names_household(self, affine_theta):
        spec = small_spec()
        theta = -affine_theta(spec)  # decreasing in q: negative density
        data = make_dataset([6.8, 7.0])
        with pytest.raises(InfeasibleError, match="household 0"):
            log_likelihood(theta, data, spec, NO_BERKSON)


class TestGradient:
    def test_single_active_coefficient(self, affine_theta):
        # with only the T1(q) coefficient live, d = theta1 * a and the
        # live gradient entry is n / theta1
        spec = BasisSpec(box=small_spec().box, deg_p=0, deg_y=0, deg_q=1)
        theta = np.array([0.5, 0.3])
        data = make_dataset([6.5, 6.8, 7.1, 6.3])
        grad = log_likelihood_grad(theta, data, spec, NO_BERKSON)
        assert grad[1] == pytest.approx(len(data) / theta[1])

    @pytest.mark.parametrize("berkson", [NO_BERKSON, SMALL_BERKSON])
    def test_matches_central_differences(self, berkson, affine_theta):
        spec = small_spec(degs=(2, 1, 3))
        data = make_dataset(
            np.linspace(6.2, 7.2, 25),
            log_p=np.linspace(0.15, 0.45, 25),
            log_y=np.linspace(10.2, 11.8, 25),
        )
        rng = np.random.default_rng(3)
        base = affine_theta(spec)
        for _ in range(4):
            theta = base + 0.02 * rng.normal(size=spec.size)
            grad = log_likelihood_grad(theta, data, spec, berkson)
            fd = np.empty_like(grad)
            h = 1e-6
            for j in range(spec.size):
                e = np.zeros(spec.size)
                e[j] = h
                fd[j] = (
                    log_likelihood(theta + e, data, spec, berkson)
                    - log_likelihood(theta - e, data, spec, berkson)
                ) / (2 * h)
            scale = np.maximum(np.abs(grad), 1.0)
            assert np.max(np.abs(grad - fd) / scale) < 1e-6

    def test_concavity_along_segments(self, affine_theta):
        spec = small_spec()
        data = make_dataset(np.linspace(6.1, 7.3, 30))
        base = affine_theta(spec)
        rng = np.random.default_rng(5)
        for _ in range(5):
            t1 = base + 0.05 * rng.normal(size=spec.size)
            t2 = base + 0.05 * rng.normal(size=spec.size)
            try:
                l1 = log_likelihood(t1, data, spec, NO_BERKSON)
                l2 = log_likelihood(t2, data, spec, NO_BERKSON)
            except InfeasibleError:
                continue
            lam = 0.3
            mix = log_likelihood(lam * t1 + (1 - lam) * t2, data, spec, NO_BERKSON)
            assert mix >= lam * l1 + (1 - lam) * l2 - 1e-10


class TestBuildConstraints:
    def test_unconstrained_regime_has_no_slutsky_rows(self):
        data = make_dataset(np.linspace(6.2, 7.2, 10))
        spec = small_spec()
        cs = build_constraints(data, spec, NO_BERKSON, regime="unconstrained-shape")
        assert len(cs.slutsky_points) == 0

    def test_budget_share_in_slutsky_rows(self):
        # a household with log_p + log_q - log_y = log(0.05)
        log_p, log_q = 0.3, 7.0
        log_y = log_p + log_q - np.log(0.05)
        data = make_dataset([log_q], log_p=[log_p], log_y=[log_y])
        box = DomainBox(p_lo=0.1, p_hi=0.5, y_lo=log_y - 1, y_hi=log_y + 1, q_lo=6.0, q_hi=7.4)
        spec = small_spec(box=box)
        from berkdemand.estimator import SlutskyRegion

        region = SlutskyRegion(price_lo=0.0, price_hi=1.0, income_lo_usd=1.0,
                               income_hi_usd=1e9, q_pct_lo=0.0, q_pct_hi=1.0)
        cs = build_constraints(data, spec, NO_BERKSON, regime="slutsky", slutsky_region=region)
        assert len(cs.slutsky_points) == 1
        assert cs.slutsky_shares[0] == pytest.approx(0.05)

    def test_empty_slutsky_selection_warns(self):
        data = make_dataset(np.linspace(6.2, 7.2, 5), log_p=np.full(5, 0.9))
        spec = small_spec()
        with pytest.warns(UserWarning, match="no household"):
            build_constraints(data, spec, NO_BERKSON, regime="slutsky")

    def test_rows_are_linear_in_theta(self):
        data = make_dataset(np.linspace(6.2, 7.2, 8))
        spec = small_spec()
        cs = build_constraints(data, spec, SMALL_BERKSON)
        g, h = constraint_matrices(cs, spec)
        rng = np.random.default_rng(0)
        t1, t2 = rng.normal(size=(2, spec.size))
        np.testing.assert_allclose(
            g @ (0.3 * t1 + 0.7 * t2), 0.3 * (g @ t1) + 0.7 * (g @ t2), atol=1e-12
        )
        assert len(h) == cs.n_rows

    def test_mono_points_cover_quadrature(self):
        data = make_dataset(np.linspace(6.2, 7.2, 8))
        spec = small_spec()
        cs = build_constraints(data, spec, SMALL_BERKSON, grid=(3, 3, 5))
        assert len(cs.mono_points) == 8 * SMALL_BERKSON.n_nodes + 3 * 3 * 5

    def test_unknown_regime(self):
        data = make_dataset([6.5, 7.0])
        with pytest.raises(ValueError):
            build_constraints(data, small_spec(), NO_BERKSON, regime="huh")


def _uniform_fit_problem(n=300, seed=0, berkson=NO_BERKSON, degs=(1, 1, 2)):
    ds, _ = simulate(DgpSpec(n=n, seed=seed, beta1=0.0, beta2=0.0, noise="uniform",
                             sigma_by_region={"all": 0.0}, with_instrument=False))
    spec = default_basis(ds, berkson, *degs)
    cs = build_constraints(ds, spec, berkson, grid=(3, 3, 7))
    return ds, spec, cs


class TestFit:
    def test_recovers_uniform_rank_function(self):
        ds, spec, cs = _uniform_fit_problem(n=2000, degs=(2, 2, 4))
        model = fit(ds, spec, NO_BERKSON, cs)
        assert model.converged
        box = spec.box
        qs = np.linspace(box.q_lo, box.q_hi, 21)
        got = model.g_inv(np.full_like(qs, 0.3), np.full_like(qs, 11.0), qs)
        want = np.clip((qs - ds.log_q.min()) / (ds.log_q.max() - ds.log_q.min()), 0, 1)
        assert np.max(np.abs(got - want)) < 0.02

    def test_two_starts_agree(self):
        ds, spec, cs = _uniform_fit_problem(n=300)
        m1 = fit(ds, spec, NO_BERKSON, cs)
        start2 = default_start(spec, level=0.14, p_slope=0.02)
        m2 = fit(ds, spec, NO_BERKSON, cs, FitOptions(theta0=start2))
        assert abs(m1.loglik - m2.loglik) < 1e-6
        grid = np.linspace(spec.box.q_lo, spec.box.q_hi, 9)
        v1 = m1.g_inv(np.full_like(grid, 0.3), np.full_like(grid, 11.0), grid)
        v2 = m2.g_inv(np.full_like(grid, 0.3), np.full_like(grid, 11.0), grid)
        assert np.max(np.abs(v1 - v2)) < 1e-4

    def test_matches_convex_solver_reference(self):
        cp = pytest.importorskip("cvxpy")
        ds, spec, cs = _uniform_fit_problem(n=60)
        model = fit(ds, spec, NO_BERKSON, cs)
        g, h = constraint_matrices(cs, spec)
        from berkdemand.estimator import _design_matrix

        a, _ = _design_matrix(ds, spec, NO_BERKSON)
        x = cp.Variable(spec.size)
        problem = cp.Problem(cp.Maximize(cp.sum(cp.log(a @ x))), [g @ x >= h])
        problem.solve()
        assert problem.status == "optimal"
        assert model.loglik == pytest.approx(problem.value, abs=1e-5)

    def test_constraints_hold_at_optimum(self):
        ds, spec, cs = _uniform_fit_problem(n=200, berkson=SMALL_BERKSON)
        model = fit(ds, spec, SMALL_BERKSON, cs)
        report = constraint_report(model.theta, cs, spec)
        assert report["min_mono_slack"] >= -1e-8
        assert report["min_lower_bound_slack"] >= -1e-8
        assert report["min_upper_bound_slack"] >= -1e-8

    def test_sigma_continuity_at_zero(self):
        tiny = BerksonSpec(sigma_by_region={"all": 1e-8}, n_nodes=11)
        ds, spec, cs0 = _uniform_fit_problem(n=200)
        m0 = fit(ds, spec, NO_BERKSON, cs0)
        cs1 = build_constraints(ds, spec, tiny, grid=(3, 3, 7))
        m1 = fit(ds, spec, tiny, cs1)
        assert abs(m0.loglik - m1.loglik) < 1e-4

    def test_infeasible_start_rejected(self):
        ds, spec, cs = _uniform_fit_problem(n=50)
        bad = np.zeros(spec.size)  # rank identically 0: violates mono floor
        with pytest.raises(InfeasibleError, match="feasible"):
            fit(ds, spec, NO_BERKSON, cs, FitOptions(theta0=bad))

    def test_deterministic(self):
        ds, spec, cs = _uniform_fit_problem(n=150)
        m1 = fit(ds, spec, NO_BERKSON, cs)
        m2 = fit(ds, spec, NO_BERKSON, cs)
        np.testing.assert_array_equal(m1.theta, m2.theta)

    def test_slutsky_fit_satisfies_rows(self):
        ds, truth = simulate(DgpSpec(n=250, seed=3, sigma_by_region={"all": 0.0},
                                     with_instrument=False))
        berkson = BerksonSpec(sigma_by_region={"all": 0.0})
        spec = default_basis(ds, berkson, 2, 1, 3)
        cs = build_constraints(ds, spec, berkson, regime="slutsky", grid=(3, 3, 5))
        assert len(cs.slutsky_points) > 0
        model = fit(ds, spec, berkson, cs)
        report = constraint_report(model.theta, cs, spec)
        assert report["min_slutsky_slack"] >= -1e-8


class TestSerialization:
    def test_round_trip(self, tmp_path):
        ds, spec, cs = _uniform_fit_problem(n=80)
        model = fit(ds, spec, NO_BERKSON, cs)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        np.testing.assert_array_equal(loaded.theta, model.theta)
        assert loaded.basis == model.basis
        assert loaded.berkson == model.berkson
        assert loaded.loglik == model.loglik
        assert loaded.converged == model.converged


class TestBootstrap:
    def test_same_seed_same_indices(self):
        i1 = _bootstrap_indices(100, seed=7, rep=3)
        i2 = _bootstrap_indices(100, seed=7, rep=3)
        np.testing.assert_array_equal(i1, i2)
        assert not np.array_equal(i1, _bootstrap_indices(100, seed=7, rep=4))

    def test_percentile_interval_convention(self):
        from berkdemand.estimator import BootstrapResult

        res = BootstrapResult(replicates=list(range(1, 101)), failures=[], n_reps=100, seed=0)
        lo, hi = res.percentile_interval(0.90)
        assert lo == pytest.approx(5.95)
        assert hi == pytest.approx(95.05)

    def test_degenerate_dataset_identical_replicates(self):
        ds = make_dataset(np.full(40, 6.8))
        # identical records: every resample is the same dataset
        box = DomainBox(p_lo=0.2, p_hi=0.4, y_lo=10.5, y_hi=11.5, q_lo=6.3, q_hi=7.3)
        spec = BasisSpec(box=box, deg_p=0, deg_y=0, deg_q=1)
        res = bootstrap(
            ds, spec, NO_BERKSON, n_reps=3, seed=1, grid=(2, 2, 3),
            statistic=lambda m: m.loglik,
        )
        assert res.failures == []
        assert len(set(res.replicates)) == 1

    def test_statistic_extraction_and_failures_recorded(self):
        ds, spec, cs = _uniform_fit_problem(n=60)
        res = bootstrap(
            ds, spec, NO_BERKSON, n_reps=2, seed=2, grid=(3, 3, 7),
            statistic=lambda m: float(m.theta[0]),
        )
        assert res.n_reps == 2
        assert all(isinstance(v, float) for v in res.replicates)
