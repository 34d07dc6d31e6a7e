"""Likelihood-based estimation: exact log likelihood on small fibers,
the simulation-based EM loop with Louis standard errors, and the Gibbs
posterior sampler for route means under Gamma priors."""

import json
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import gammaln, logsumexp
from scipy.stats import gamma as gamma_dist

from routeflow import netmodel
from routeflow.errors import DegenerateInformationWarning, ValidationError
from routeflow.inference import (
    EmConfig,
    _mom_poisson,
    bayes_poisson,
    exact_loglik,
    louis_standard_errors,
    stochastic_em,
)
from routeflow.models import PriorSpec, TrafficModel, log_mass
from routeflow.polytope import enumerate_feasible
from routeflow.sampler import SamplerConfig

IDENTITY3 = netmodel.load_network("1,0,0\n0,1,0\n0,0,1\n")
Y3 = np.array([4, 0, 2])


class TestExactLoglik:
    def test_matches_fiber_sum(self, junction, y_segment):
        m = TrafficModel("poisson",
                         np.array([2.0, 4.0, 6.0, 1.0, 5.0, 5.0]))
        pts = enumerate_feasible(junction, y_segment)
        manual = np.logaddexp.reduce([log_mass(m, s.x) for s in pts])
        assert np.isclose(exact_loglik(junction, y_segment, m), manual)

    def test_identity_network_reduces_to_pmf(self):
        m3 = TrafficModel("poisson", np.array([1.0, 2.0, 3.0]))
        assert np.isclose(exact_loglik(IDENTITY3, Y3, m3),
                          log_mass(m3, Y3))

    def test_additive_over_observations(self, junction, y_segment):
        m = TrafficModel("poisson",
                         np.array([2.0, 4.0, 6.0, 1.0, 5.0, 5.0]))
        one = exact_loglik(junction, y_segment, m)
        two = exact_loglik(junction, np.stack([y_segment, y_segment]), m)
        assert np.isclose(two, 2.0 * one)


class TestEmFullyObserved:
    """On an identity matrix the fiber is a single point, so EM must
    return the complete-data MLE exactly."""

    def test_poisson_theta_is_sample_mean(self):
        rng = np.random.default_rng(7)
        ys = rng.poisson([5.0, 9.0, 2.0], size=(20, 3))
        cfg = EmConfig(m_init=50, burn_in_per_estep=10, pilot_iters=20,
                       n_pilot_phases=1, max_outer_iters=30)
        res = stochastic_em(IDENTITY3, ys, "poisson", cfg,
                            np.random.default_rng(1))
        assert res.converged
        assert np.allclose(res.theta_hat, ys.mean(axis=0), atol=1e-12)
        assert np.allclose(res.std_errors, np.sqrt(res.theta_hat / 20),
                           rtol=1e-6)

    def test_negbin_recovers_dispersion(self):
        rng = np.random.default_rng(31)
        lam = rng.gamma(np.array([20.0, 35.0, 12.0]) / 2.0, 2.0,
                        size=(80, 3))
        xs = rng.poisson(lam)
        cfg = EmConfig(m_init=50, burn_in_per_estep=10, pilot_iters=20,
                       n_pilot_phases=1, max_outer_iters=40)
        res = stochastic_em(IDENTITY3, xs, "negbin", cfg,
                            np.random.default_rng(2))
        assert res.converged
        assert np.allclose(res.theta_hat, xs.mean(axis=0), atol=1e-10)
        assert 0.3 < res.alpha_hat < 6.0
        assert np.isfinite(res.std_errors).all()


class TestEmAgainstExactOracle:
    """Small enough that the incomplete-data likelihood can be maximized
    directly by enumerating every observed fiber."""

    @staticmethod
    @pytest.fixture(scope="class")
    def oracle(smallnet):
        rng = np.random.default_rng(42)
        th_true = np.array([2.0, 1.5, 3.0, 1.0])
        xs = rng.poisson(th_true, size=(30, 4))
        ys = xs @ smallnet.entries.T
        seen = {}
        for row in ys:
            key = tuple(int(v) for v in row)
            if key not in seen:
                fp = np.stack(
                    [s.x for s in enumerate_feasible(smallnet, row)])
                seen[key] = [fp, gammaln(fp + 1.0).sum(axis=1), 0]
            seen[key][2] += 1
        fibers = list(seen.values())

        def exact_ll(theta):
            lt = np.log(theta)
            st = theta.sum()
            return sum(mult * logsumexp(fp @ lt - st - lg)
                       for fp, lg, mult in fibers)

        opt = minimize(lambda lt: -exact_ll(np.exp(lt)),
                       np.log(th_true), method="Nelder-Mead",
                       options={"xatol": 1e-8, "fatol": 1e-12,
                                "maxiter": 40000, "maxfev": 40000})
        theta_star = np.exp(opt.x)
        h = 1e-3
        hess = np.zeros((4, 4))
        for a in range(4):
            for b in range(a, 4):
                ea = np.zeros(4)
                ea[a] = h
                eb = np.zeros(4)
                eb[b] = h
                hess[a, b] = hess[b, a] = (
                    exact_ll(theta_star + ea + eb)
                    - exact_ll(theta_star + ea - eb)
                    - exact_ll(theta_star - ea + eb)
                    + exact_ll(theta_star - ea - eb)) / (4 * h * h)
        se_fd = np.sqrt(np.diag(np.linalg.inv(-hess)))
        return ys, theta_star, se_fd

    @staticmethod
    @pytest.fixture(scope="class")
    def em_result(smallnet, oracle):
        ys, _, _ = oracle
        cfg = EmConfig(m_init=500, burn_in_per_estep=300,
                       pilot_iters=300, n_pilot_phases=2,
                       max_outer_iters=400, increase_tol=2e-5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return stochastic_em(smallnet, ys, "poisson", cfg,
                                 np.random.default_rng(5))

    def test_theta_matches_exact_maximizer(self, oracle, em_result):
        _, theta_star, _ = oracle
        assert em_result.converged
        rel = np.abs(em_result.theta_hat - theta_star) / theta_star
        assert rel.max() < 0.01

    def test_louis_se_matches_hessian(self, oracle, em_result):
        _, _, se_fd = oracle
        rel = np.abs(em_result.std_errors - se_fd) / se_fd
        assert rel.max() < 0.10

    def test_moment_identity_at_convergence(self, smallnet, oracle,
                                            em_result):
        # the Poisson M step equates fitted link means with observed
        # link means, so the residual is numerical noise
        ys, _, _ = oracle
        resid = np.abs(smallnet.entries @ em_result.theta_hat
                       - ys.mean(axis=0)).max()
        assert resid < 1e-9

    def test_trajectory_and_json(self, em_result):
        res = em_result
        assert res.trajectory[0].m_draws == 500
        assert res.trajectory[-1].m_draws == res.m_final
        assert all(t.delta_se >= 0 for t in res.trajectory)
        doc = json.loads(res.to_json())
        assert doc["model"] == "poisson"
        assert doc["alpha_hat"] is None
        assert len(doc["trajectory"]) == res.n_outer


class TestLouis:
    def test_zero_score_draws_give_complete_info(self):
        # at the single-row MLE every per-draw score vanishes, so the
        # missing-information correction is exactly zero
        x0 = np.array([3, 1, 4, 2])
        m0 = TrafficModel("poisson", x0.astype(float))
        info, se = louis_standard_errors(m0, x0.astype(float),
                                         np.tile(x0, (50, 1)))
        assert np.allclose(info, info.T)
        assert np.allclose(se, np.sqrt(x0.astype(float)))


class TestEmNegbinPartial:
    def test_alpha_in_range_and_indefinite_info_flagged(self, junction):
        rng = np.random.default_rng(12)
        th = np.array([30.0, 12.0, 25.0, 8.0, 20.0, 10.0])
        lam = rng.gamma(th / 1.5, 1.5, size=(60, 6))
        ys = rng.poisson(lam) @ junction.entries.T
        cfg = EmConfig(m_init=1000, burn_in_per_estep=300,
                       pilot_iters=300, n_pilot_phases=2,
                       max_outer_iters=60, increase_tol=0.02)
        with warnings.catch_warnings(record=True) as wlog:
            warnings.simplefilter("always")
            res = stochastic_em(junction, ys, "negbin", cfg,
                                np.random.default_rng(8))
        assert 0.5 < res.alpha_hat < 4.0
        assert res.std_errors.shape == (7,)
        if not np.isfinite(res.std_errors).all():
            # weakly identified directions can leave the estimated
            # observed information indefinite; silence would be a bug
            assert any(isinstance(w.message,
                                  DegenerateInformationWarning)
                       for w in wlog)


class TestBayesPoisson:
    def test_unique_fiber_matches_conjugate_posterior(self):
        prior = PriorSpec(np.array([3.0, 2.0, 4.0]),
                          np.array([0.5, 1.0, 0.25]))
        cfg = SamplerConfig(main_iters=20000, seed=11, burn_in=500,
                            pilot_iters=100, n_pilot_phases=1)
        post = bayes_poisson(IDENTITY3, Y3, prior, cfg=cfg)
        shape = prior.shape + Y3
        scale = 1.0 / (prior.rate + 1.0)
        assert np.allclose(post.mean, shape * scale, rtol=0.05)
        assert np.allclose(post.ci_lo,
                           gamma_dist.ppf(0.025, shape, scale=scale),
                           rtol=0.15)
        assert np.allclose(post.ci_hi,
                           gamma_dist.ppf(0.975, shape, scale=scale),
                           rtol=0.15)
        assert ((post.ci_lo <= post.mean)
                & (post.mean <= post.ci_hi)).all()

    def test_no_data_recovers_prior(self):
        prior = PriorSpec(np.array([2.0, 5.0, 1.0]),
                          np.array([1.0, 2.0, 0.5]))
        cfg = SamplerConfig(main_iters=30000, seed=3, burn_in=100,
                            pilot_iters=50, n_pilot_phases=1)
        post = bayes_poisson(IDENTITY3, np.zeros((0, 3), dtype=int),
                             prior, cfg=cfg)
        assert np.allclose(post.mean, prior.mean, rtol=0.05)
        assert np.allclose(post.theta_draws.var(axis=0, ddof=1),
                           prior.shape / prior.rate ** 2, rtol=0.10)

    @staticmethod
    @pytest.fixture(scope="class")
    def mixed_post(junction):
        prior = PriorSpec(np.full(6, 2.0), np.full(6, 0.5))
        cfg = SamplerConfig(main_iters=30000, seed=21, burn_in=1000,
                            pilot_iters=500, n_pilot_phases=2)
        y = np.array([10, 20, 19, 9])
        return (bayes_poisson(junction, y, prior, cfg=cfg),
                bayes_poisson(junction, y, prior, cfg=cfg),
                prior, y)

    def test_marginal_law_vs_exact_mixture(self, junction, mixed_post):
        # the exact route-1 posterior is a finite Gamma mixture over
        # the enumerated fiber, weighted by the marginal likelihood
        post, _, prior, y = mixed_post
        pts = enumerate_feasible(junction, y)

        def log_marg(x):
            a, b = prior.shape, prior.rate
            return float((gammaln(a + x) - gammaln(a)
                          - gammaln(x + 1.0)
                          + a * np.log(b / (b + 1.0))
                          - x * np.log(b + 1.0)).sum())

        lw = np.array([log_marg(s.x) for s in pts])
        w = np.exp(lw - lw.max())
        w /= w.sum()
        a_post = prior.shape[0] + np.array([s.x[0] for s in pts])
        b_post = prior.rate[0] + 1.0
        grid = np.linspace(0.01, 30.0, 400)
        cdf_exact = np.zeros_like(grid)
        for wt, av in zip(w, a_post):
            cdf_exact += wt * gamma_dist.cdf(grid, av,
                                             scale=1.0 / b_post)
        draws = np.sort(post.theta_draws[:, 0])
        cdf_emp = np.searchsorted(draws, grid,
                                  side="right") / draws.size
        assert np.abs(cdf_emp - cdf_exact).max() < 0.05

    def test_repeat_run_identical(self, mixed_post):
        post, again, _, _ = mixed_post
        assert np.array_equal(post.theta_draws, again.theta_draws)

    def test_requires_config(self, junction):
        prior = PriorSpec(np.full(6, 2.0), np.full(6, 0.5))
        with pytest.raises(ValidationError, match="SamplerConfig"):
            bayes_poisson(junction, [10, 20, 19, 9], prior)


class TestConfigValidation:
    @pytest.mark.parametrize("kwargs, match", [
        ({"m_init": 0}, "m_init"),
        ({"m_growth_factor": 1.0}, "m_growth_factor"),
        ({"confidence": 0.4}, "confidence"),
        ({"confidence": 1.0}, "confidence"),
        ({"increase_tol": 0.0}, "increase_tol"),
        ({"burn_in_per_estep": -1}, "burn_in_per_estep"),
    ])
    def test_emconfig_rejects(self, kwargs, match):
        with pytest.raises(ValidationError, match=match):
            EmConfig(**kwargs)

    def test_unknown_model_kind(self):
        cfg = EmConfig(m_init=10, max_outer_iters=2)
        with pytest.raises(ValidationError, match="kind"):
            stochastic_em(IDENTITY3, np.stack([Y3]), "geometric", cfg,
                          np.random.default_rng(0))

    def test_rng_required(self):
        cfg = EmConfig(m_init=10, max_outer_iters=2)
        with pytest.raises(ValidationError, match="rng"):
            stochastic_em(IDENTITY3, np.stack([Y3]), "poisson", cfg)

    def test_empty_data_rejected(self):
        cfg = EmConfig(m_init=10, max_outer_iters=2)
        with pytest.raises(ValidationError, match="observation"):
            stochastic_em(IDENTITY3, np.zeros((0, 3), dtype=int),
                          "poisson", cfg, np.random.default_rng(0))


class TestMomentStart:
    def test_nonnegative_and_shaped(self, junction):
        rng = np.random.default_rng(12)
        th = np.array([30.0, 12.0, 25.0, 8.0, 20.0, 10.0])
        ys = rng.poisson(th, size=(60, 6)) @ junction.entries.T
        theta = _mom_poisson(junction, ys)
        assert theta.shape == (6,)
        assert (theta >= 0).all()

    def test_needs_two_rows(self, junction):
        with pytest.raises(ValidationError, match="two"):
            _mom_poisson(junction, np.array([[10, 20, 19, 9]]))
