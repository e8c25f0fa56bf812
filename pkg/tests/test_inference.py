import numpy as np
import pytest
from scipy import stats
from scipy.optimize import minimize
from scipy.special import expit

from data_loader import read_header
from economy import draw_covariates, firm_preference_split, outside_option, preference_cases
from inference import (
    MIN_THETA1, bootstrap_box, bootstrap_theta_ci, build_theta_grid, contingency_statistic, critical_value,
    decisions_frame, estimate_theta, full_vector_region, generate_dataset, identification_spot_check, loglik,
    make_engine, max_abs_distance, mc_confidence_beta, mc_rank, mc_test, plain_logit_loglik,
    quantile_interval, simulate_contingency, simulate_economy, two_stage_beta, write_beta_decisions
)
from matchprob import MatchProbEngine
from models import BetaDecision, EstimationError, ObservedData, RegionKind
from random_streams import StreamFactory
from tests.conftest import small_economy

FAST_ESTIMATE = {'xatol': 1e-4, 'fatol': 1e-6, 'maxiter': 400}


def single_type_data(n=400, theta2=(0.5, -0.5), seed=8):
    """Economy with one capital type, where beliefs are degenerate and the model is a plain logit"""
    cfg = small_economy(n=n, capital_support=(1.0,), capital_mass=(1.0,), theta2=theta2)
    rng = np.random.default_rng(seed)
    x = draw_covariates(n, cfg, rng)
    offset = cfg.tau * cfg.theta1 * 1.0 * (cfg.h_high - cfg.h_low)
    index = offset + (1 - cfg.tau) * (outside_option(cfg.h_high, x, cfg) - outside_option(cfg.h_low, x, cfg))
    education = np.where(rng.random(n) < expit(index), cfg.h_high, cfg.h_low)
    return cfg, ObservedData(education, x, np.zeros(n, dtype=int)), offset


class TestStatistics:
    def test_distance_to_itself_is_zero(self):
        obs = np.array([[0.2, 0.3], [0.1, 0.4]])
        assert contingency_statistic(obs, [obs, obs]) == 0.0

    def test_disjoint_support(self):
        obs = np.array([[1.0, 0.0], [0.0, 0.0]])
        other = np.array([[0.0, 0.0], [0.0, 1.0]])
        assert contingency_statistic(obs, [other]) == pytest.approx(1.0)
        np.testing.assert_allclose(max_abs_distance(np.stack([obs, other]), np.stack([obs])), [[0.0], [1.0]])

    def test_statistic_needs_simulations(self):
        with pytest.raises(ValueError):
            contingency_statistic(np.zeros((2, 2)), np.zeros((0, 2, 2)))

    def test_critical_value_ranks(self):
        t = np.arange(1, 20, dtype=float)
        assert critical_value(t, 0.05) == 19.0
        t = np.random.default_rng(0).permutation(np.arange(1, 100, dtype=float))
        assert critical_value(t, 0.05) == 95.0
        assert critical_value(t, 0.10) == 90.0

    def test_mc_rank(self):
        assert mc_rank(2.5, [1.0, 2.0, 3.0]) == 3
        assert mc_rank(0.0, [1.0, 2.0]) == 1
        assert mc_rank(2.0, [1.0, 2.0, 2.0]) == 2
        ranks = {mc_rank(2.0, [1.0, 2.0, 2.0], np.random.default_rng(s)) for s in range(50)}
        assert ranks == {2, 3, 4}

    def test_simulated_statistics_are_leave_one_out(self):
        rng = np.random.default_rng(1)
        sims = rng.dirichlet(np.ones(4), size=19).reshape(19, 2, 2)
        obs = rng.dirichlet(np.ones(4)).reshape(2, 2)
        res = mc_test(obs, sims, 0.05, beta=1.5)
        d_obs = max_abs_distance(sims, obs[None])[:, 0]
        D = max_abs_distance(sims, sims)
        expected = (d_obs + D.sum(axis=1)) / 19
        np.testing.assert_allclose(res.t_sims, expected)
        assert res.t_obs == pytest.approx(d_obs.mean())
        assert res.reject == (res.t_obs > res.critical)
        assert res.beta == 1.5

    def test_outlier_is_rejected(self):
        rng = np.random.default_rng(2)
        centre = np.array([[0.25, 0.25], [0.25, 0.25]])
        sims = centre + rng.normal(scale=0.01, size=(19, 2, 2))
        res = mc_test(np.array([[0.5, 0.0], [0.0, 0.5]]), sims, 0.05)
        assert res.reject

    def test_too_few_simulations(self):
        with pytest.raises(ValueError, match="R=10"):
            mc_test(np.zeros((2, 2)), np.zeros((10, 2, 2)), 0.05)

    def test_simulated_contingency(self, economy, observed):
        split = firm_preference_split(economy, observed.covariates)
        table = simulate_contingency(observed.education, split, economy, np.random.default_rng(4))
        assert table.shape == (2, 2)
        assert table.sum() == pytest.approx(1.0)
        assert table[1].sum() == pytest.approx(np.mean(observed.education == economy.h_high))


class TestLikelihood:
    def test_no_structure_means_coin_flips(self, observed, economy):
        assert plain_logit_loglik([0.0, 0.0], observed, economy) == pytest.approx(observed.n * np.log(0.5))

    def test_deterministic_and_case_consistent(self, observed, economy, engine):
        theta = economy.theta
        first = loglik(theta, 1.0, observed, economy, engine=engine)
        second = loglik(theta, 1.0, observed, economy, engine=engine)
        assert first.loglik == second.loglik
        frozen = loglik(theta, 1.0, observed, economy, engine=engine,
                        split=firm_preference_split(economy, observed.covariates))
        assert frozen.loglik == pytest.approx(first.loglik)
        assert first.case_key == (0, 1)
        assert first.case_index == 2
        assert np.all((first.phat > 0) & (first.phat < 1))
        assert np.isfinite(first.loglik) and first.loglik < 0

    def test_nonpositive_theta1(self, observed, economy, engine):
        assert loglik([0.0, 0.2, 0.2], 1.0, observed, economy, engine=engine).loglik == -np.inf
        assert loglik([-1.0, 0.2, 0.2], 1.0, observed, economy, engine=engine).loglik == -np.inf

    def test_theta_shape_checked(self, observed, economy, engine):
        with pytest.raises(ValueError):
            loglik([1.0, 0.2], 1.0, observed, economy, engine=engine)

    def test_engine_size_checked(self, observed, economy):
        with pytest.raises(ValueError, match="engine"):
            loglik(economy.theta, 1.0, observed, economy, engine=MatchProbEngine(small_economy(n=10)))

    def test_single_type_reduces_to_logit(self):
        cfg, data, offset = single_type_data()
        engine = MatchProbEngine(cfg)
        for theta2 in ([0.5, -0.5], [0.1, 0.9]):
            structural = loglik([cfg.theta1, *theta2], 0.7, data, cfg, engine=engine).loglik
            assert structural == pytest.approx(plain_logit_loglik(theta2, data, cfg, offset=offset), rel=1e-10)

    def test_single_type_estimate_matches_logit_fit(self):
        cfg, data, offset = single_type_data()
        engine = MatchProbEngine(cfg)
        est = estimate_theta(0.7, data, cfg, engine=engine, fixed_theta1=cfg.theta1, start=[1.0, 0.0, 0.0])
        fit = minimize(lambda t: -plain_logit_loglik(t, data, cfg, offset=offset), np.zeros(2), method='BFGS',
                       options={'gtol': 1e-8})
        assert est.theta_hat[0] == cfg.theta1
        np.testing.assert_allclose(est.theta_hat[1:], fit.x, atol=1e-3)
        assert est.loglik == pytest.approx(-fit.fun, abs=1e-6)
        assert len(est.per_case) == 2

    def test_degenerate_data_refused(self, observed, economy, engine):
        everyone = ObservedData(np.full(observed.n, economy.h_high), observed.covariates, observed.matched_type)
        with pytest.raises(EstimationError, match="both education levels"):
            estimate_theta(1.0, everyone, economy, engine=engine)

    def test_estimate_picks_the_best_case(self, observed, economy, engine):
        est = estimate_theta(1.0, observed, economy, engine=engine, **FAST_ESTIMATE)
        assert np.isfinite(est.loglik)
        assert est.loglik == max(case['loglik'] for case in est.per_case)
        assert est.loglik == pytest.approx(loglik(est.theta_hat, 1.0, observed, economy, engine=engine).loglik)
        assert est.case_key in {case.key for case in preference_cases(economy)}
        assert len(est.per_case) == len(preference_cases(economy))

    def test_identification_spot_check(self, observed, economy, engine):
        theta = economy.theta
        distinct = identification_spot_check(observed, 1.0, economy, [theta, theta * 0.5], engine=engine)
        assert distinct['unique']
        assert distinct['loglik'].shape == (2,)
        tied = identification_spot_check(observed, 1.0, economy, [theta, theta], engine=engine)
        assert not tied['unique']
        assert tied['ties'] == 2


class TestDataGeneration:
    def test_dataset_is_reproducible(self, economy):
        a = generate_dataset(economy.theta, 1.0, 40, economy, StreamFactory(5))
        b = generate_dataset(economy.theta, 1.0, 40, economy, StreamFactory(5))
        np.testing.assert_array_equal(a.education, b.education)
        np.testing.assert_array_equal(a.matched_type, b.matched_type)
        np.testing.assert_array_equal(a.wages, b.wages)
        c = generate_dataset(economy.theta, 1.0, 40, economy, StreamFactory(6))
        assert not np.array_equal(a.covariates, c.covariates)

    def test_simulated_economy_is_consistent(self, economy, streams, engine):
        data, sol, outcome, stats = simulate_economy(economy, streams, engine)
        assert sol.converged
        assert data.n == economy.n
        assert stats.edu_share == pytest.approx(np.mean(data.education == economy.h_high))
        np.testing.assert_array_equal(data.matched_type, outcome.matched_type)
        assert sol.unique_flag is None

    def test_uniqueness_flag_set_from_the_diagnostic(self, economy, streams, engine):
        _, sol, _, _ = simulate_economy(economy, streams, engine, uniqueness_grid=[0.25, 0.5, 0.75])
        assert sol.unique_flag is True


class TestBootstrap:
    def test_quantile_interval_nests(self):
        values = np.random.default_rng(3).normal(size=500)
        wide = quantile_interval(values, 0.05)
        narrow = quantile_interval(values, 0.2)
        assert wide[0] <= narrow[0] <= narrow[1] <= wide[1]

    def test_box_is_bonferroni(self):
        draws = np.random.default_rng(4).normal(size=(1000, 3))
        lower, upper = bootstrap_box(draws, 0.06)
        np.testing.assert_allclose(lower, np.quantile(draws, 0.01, axis=0))
        np.testing.assert_allclose(upper, np.quantile(draws, 0.99, axis=0))

    def test_bootstrap_interval(self, observed, economy, engine, streams):
        region = bootstrap_theta_ci(economy.theta, 1.0, observed, economy, streams, n_boot=5, alpha=0.1,
                                    engine=engine, max_failure=1.0, estimate_options=FAST_ESTIMATE)
        c = region.contents
        assert region.kind is RegionKind.THETA_BOOTSTRAP
        assert region.level == pytest.approx(0.9)
        assert c['draws'].shape == (5 - c['failures'], 3)
        assert (c['lower'], c['upper']) == pytest.approx(quantile_interval(c['draws'] @ np.ones(3), 0.1))
        assert c['estimate'] == pytest.approx(economy.theta.sum())
        assert c['length'] == pytest.approx(c['upper'] - c['lower'])

    def test_bootstrap_arguments_checked(self, observed, economy, engine, streams):
        with pytest.raises(ValueError):
            bootstrap_theta_ci(economy.theta, 1.0, observed, economy, streams, n_boot=1, engine=engine)
        with pytest.raises(ValueError, match="contrast"):
            bootstrap_theta_ci(economy.theta, 1.0, observed, economy, streams, n_boot=5,
                               contrast=[1.0, 0.0], engine=engine)

    def test_theta_grid_layout(self):
        grid = build_theta_grid([1.0, 0.5], [0.0, 0.0], [2.0, 1.0], 3, np.random.default_rng(0))
        assert grid.shape == (1 + 4 + 1 + 3, 2)
        np.testing.assert_allclose(grid[0], [1.0, 0.5])
        np.testing.assert_allclose(grid[5], [1.0, 0.5])
        assert grid[:, 0].min() == MIN_THETA1
        assert np.all(grid[6:, 1] >= 0.0) and np.all(grid[6:, 1] <= 1.0)


class TestBetaInversion:
    def test_empty_grid(self, observed, economy, streams):
        with pytest.raises(ValueError, match="empty"):
            mc_confidence_beta(observed, economy.theta, economy, streams, [], R=19)

    def test_needs_matched_types(self, observed, economy, streams):
        bare = ObservedData(observed.education, observed.covariates)
        with pytest.raises(ValueError, match="matched"):
            mc_confidence_beta(bare, economy.theta, economy, streams, [1.0], R=19)

    def test_accepted_values_come_from_the_grid(self, observed, economy, streams):
        grid = [0.0, 1.0, 4.0]
        region = mc_confidence_beta(observed, economy.theta, economy, streams, grid, R=19)
        assert set(region.accepted) <= set(grid)
        assert len(region.contents['decisions']) == 3
        assert region.kind is RegionKind.BETA_INVERSION

    def test_parallel_matches_serial(self, observed, economy, streams):
        grid = [0.0, 2.0]
        serial = mc_confidence_beta(observed, economy.theta, economy, streams, grid, R=19, jobs=1)
        parallel = mc_confidence_beta(observed, economy.theta, economy, streams, grid, R=19, jobs=2)
        assert serial.accepted == parallel.accepted
        assert [r['t_obs'] for r in serial.contents['rows']] == [r['t_obs'] for r in parallel.contents['rows']]

    def test_oracle_two_stage_is_the_single_stage_test(self, observed, economy, streams):
        grid = [0.0, 1.0, 3.0]
        single = mc_confidence_beta(observed, economy.theta, economy, streams, grid, R=19)
        oracle = two_stage_beta(observed, economy, streams, grid, R=19, oracle_theta=economy.theta)
        assert oracle.accepted == single.accepted
        for a, b in zip(single.contents['rows'], oracle.contents['rows']):
            assert a['t_obs'] == pytest.approx(b['t_obs'])
            assert a['critical'] == pytest.approx(b['critical'])
        assert oracle.contents['second_stage_alpha'] == 0.05

    def test_observed_statistic_never_grows_with_the_grid(self, observed, economy, streams, engine):
        theta = economy.theta
        small = two_stage_beta(observed, economy, streams, [1.0], R=39, theta_grid=[theta], engine=engine)
        large = two_stage_beta(observed, economy, streams, [1.0], R=39,
                               theta_grid=[theta, [0.8, 0.2, 0.2], [1.2, 0.1, 0.3]], engine=engine)
        assert large.contents['rows'][0]['t_obs'] <= small.contents['rows'][0]['t_obs'] + 1e-12
        assert large.contents['rows'][0]['grid_size'] == 3

    def test_failed_first_stage_is_undetermined(self, observed, economy, streams, engine):
        everyone = ObservedData(np.full(observed.n, economy.h_high), observed.covariates, observed.matched_type)
        region = two_stage_beta(everyone, economy, streams, [0.0, 1.0], R=39, n_boot=2, engine=engine)
        assert region.accepted == []
        assert region.contents['undetermined'] == [0.0, 1.0]
        assert all(d is BetaDecision.UNDETERMINED for d in region.contents['decisions'])
        assert "both education levels" in region.contents['rows'][0]['message']

    def test_overflowing_grid_point_is_undetermined(self, observed, economy, streams, engine):
        extreme = [1e-3, 1080.0, -262.9]
        with np.errstate(over='ignore', invalid='ignore'):
            region = two_stage_beta(observed, economy, streams, [1.0], R=39,
                                    theta_grid=[economy.theta, extreme], engine=engine)
        assert region.contents['decisions'] == [BetaDecision.UNDETERMINED]
        assert region.contents['undetermined'] == [1.0]
        assert "not finite" in region.contents['rows'][0]['message']

    def test_two_stage_alpha_split(self, observed, economy, streams):
        with pytest.raises(ValueError):
            two_stage_beta(observed, economy, streams, [1.0], R=19, theta_grid=[economy.theta])

    def test_full_vector_region(self, observed, economy, streams, engine):
        region = full_vector_region(observed, economy, streams, [1.0], [0.0, 1.0], R=19, engine=engine)
        rows = region.contents['rows']
        assert [(r['theta1'], r['beta']) for r in rows] == [(1.0, 0.0), (1.0, 1.0)]
        assert set(region.accepted) <= {(1.0, 0.0), (1.0, 1.0)}

    def test_decision_file(self, observed, economy, streams, tmp_path):
        region = mc_confidence_beta(observed, economy.theta, economy, streams, [0.5, 1.5], R=19)
        path = write_beta_decisions(region, tmp_path / "out" / "decisions.csv", "0123456789abcdef")
        assert path.read_text().splitlines()[0] == "# config_hash=0123456789abcdef version=1.0.0"
        assert read_header(path) == {'config_hash': '0123456789abcdef', 'version': '1.0.0'}
        assert list(decisions_frame(region).columns) == ['beta', 't_obs', 'critical', 'accepted', 'decision']


@pytest.mark.slow
def test_rank_of_observed_statistic_is_uniform():
    """Under the null the observed matrix is one more exchangeable draw"""
    cfg = small_economy(n=100)
    rng = np.random.default_rng(17)
    x = draw_covariates(cfg.n, cfg, rng)
    split = firm_preference_split(cfg, x)
    education = np.where(rng.random(cfg.n) < 0.6, cfg.h_high, cfg.h_low)
    trials, R = 500, 99
    ranks = np.empty(trials, dtype=int)
    rejections = 0
    for i in range(trials):
        pool = np.stack([simulate_contingency(education, split, cfg, rng) for _ in range(R + 1)])
        res = mc_test(pool[0], pool[1:], 0.05)
        rejections += res.reject
        ranks[i] = mc_rank(round(res.t_obs, 12), np.round(res.t_sims, 12), rng)
    # ten bins of ten ranks keep the expected count per cell at fifty
    counts = np.bincount((ranks - 1) // 10, minlength=10)
    assert stats.chisquare(counts).pvalue > 0.01
    assert rejections / trials <= 0.05 + 3 * np.sqrt(0.05 * 0.95 / trials)


@pytest.mark.slow
def test_known_theta_inversion_covers_the_true_beta():
    cfg = small_economy(n=100, n_beta_draws=100)
    streams = StreamFactory(41)
    engine = make_engine(cfg, streams)
    covered = 0
    for rep in range(200):
        rep_streams = streams.child('coverage', rep)
        data = generate_dataset(cfg.theta, cfg.beta, cfg.n, cfg, rep_streams.child('data'), engine)
        region = mc_confidence_beta(data, cfg.theta, cfg, rep_streams.child('inversion'), [cfg.beta], R=99)
        covered += region.accepted == [cfg.beta]
    assert covered / 200 >= 0.92


@pytest.mark.slow
def test_two_stage_region_covers_the_true_beta():
    cfg = small_economy(n=100, n_beta_draws=100)
    streams = StreamFactory(43)
    engine = make_engine(cfg, streams)
    covered = 0
    for rep in range(100):
        rep_streams = streams.child('coverage', rep)
        data = generate_dataset(cfg.theta, cfg.beta, cfg.n, cfg, rep_streams.child('data'), engine)
        region = two_stage_beta(data, cfg, rep_streams.child('two_stage'), [cfg.beta], R=99, n_boot=19,
                                lhs_points=1, engine=engine, estimate_options=FAST_ESTIMATE, max_failure=1.0)
        covered += region.accepted == [cfg.beta]
    assert covered / 100 >= 0.90
