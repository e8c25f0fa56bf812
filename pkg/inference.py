"""
Structural Inference
Logit likelihood estimation of the preference parameters, parametric-bootstrap intervals, and Monte Carlo test inversion for the matching friction.
"""

import itertools
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import qmc

from config import get_logger
from data_loader import write_csv
from economy import (
    cost_c0, draw_covariates, draw_firm_types, firm_preference_split, outside_option, preference_cases
)
from equilibrium import private_gap, sample_actions, solve_fixed_point, uniqueness_diagnostic
from matcher import (
    contingency_by_headcount, contingency_matrix, dictatorship_order, simulate_market
)
from matchprob import MatchProbEngine, expected_production
from models import (
    HIGH, LOW, BetaDecision, ConfidenceRegion, EconomyConfig, EquilibriumSolution, EstimationError,
    FirmPreferenceSplit, LikelihoodEvaluation, MatchingOutcome, McTestResult, NumericalError,
    ObservedData, OutcomeStats, RegionKind, ThetaEstimate, WorkerSample
)
from random_streams import StreamFactory

logger = get_logger('inference')

MIN_THETA1 = 1e-3


def make_engine(cfg: EconomyConfig, streams: StreamFactory) -> MatchProbEngine:
    """Belief engine whose frozen beta draws come from the shared 'beta_draws' stream"""
    return MatchProbEngine(cfg, streams.generator('beta_draws'))


def _check_engine(engine: Optional[MatchProbEngine], cfg: EconomyConfig,
                  rng: Optional[np.random.Generator] = None) -> MatchProbEngine:
    if engine is None:
        return MatchProbEngine(cfg, rng if rng is not None else np.random.default_rng(0))
    if engine.cfg.n != cfg.n:
        raise ValueError(f"engine was built for n={engine.cfg.n}, economy has n={cfg.n}")
    return engine


def _check_theta(theta: np.ndarray, cfg: EconomyConfig):
    if theta.shape != (cfg.theta_dim,):
        raise ValueError(f"theta must have {cfg.theta_dim} entries, got {theta.shape}")


def _high(data: ObservedData, cfg: EconomyConfig) -> np.ndarray:
    return data.education == cfg.h_high


def _bernoulli_loglik(delta: np.ndarray, high: np.ndarray) -> float:
    """sum h log expit(delta) + (1 - h) log expit(-delta), without overflow"""
    return float(-np.sum(np.where(high, np.logaddexp(0.0, -delta), np.logaddexp(0.0, delta))))


def _case_index(split: FirmPreferenceSplit, cfg: EconomyConfig) -> int:
    keys = [case.key for case in preference_cases(cfg)]
    return keys.index(split.key) if split.key in keys else -1


# Likelihood

def loglik(theta, beta: float, data: ObservedData, cfg: EconomyConfig,
           rng: Optional[np.random.Generator] = None, engine: Optional[MatchProbEngine] = None,
           split: Optional[FirmPreferenceSplit] = None) -> LikelihoodEvaluation:
    """Logit log-likelihood of the education choices at (theta, beta)

    Beliefs are evaluated at the empirical share of high education. The
    preference split is induced by theta unless one is passed, which
    freezes the case.
    """
    theta = np.asarray(theta, dtype=float)
    _check_theta(theta, cfg)
    high = _high(data, cfg)
    if not theta[0] > 0:
        return LikelihoodEvaluation(theta, beta, -np.inf, np.full(data.n, np.nan), -1)

    engine = _check_engine(engine, cfg, rng)
    cfg_t = cfg.with_theta(theta).with_beta(beta)
    if split is None:
        split = firm_preference_split(cfg_t, data.covariates)
    table = engine.table(split, float(high.mean()), beta)
    f_gap = expected_production(HIGH, table, cfg_t) - expected_production(LOW, table, cfg_t)
    delta = cfg_t.tau * f_gap + private_gap(data.covariates, cfg_t)
    return LikelihoodEvaluation(theta, beta, _bernoulli_loglik(delta, high), expit(delta),
                                _case_index(split, cfg), split.key)


def plain_logit_loglik(theta2, data: ObservedData, cfg: EconomyConfig, offset: float = 0.0) -> float:
    """Logit log-likelihood with index offset + (1 - tau) (g_high - g_low) - c0 gap

    No beliefs or matching enter; with one capital type and theta1
    fixed the structural likelihood is this one with a constant offset.
    """
    cfg_2 = cfg.with_theta(np.concatenate([[cfg.theta1], np.atleast_1d(theta2)]))
    x = data.covariates
    g_gap = outside_option(cfg.h_high, x, cfg_2) - outside_option(cfg.h_low, x, cfg_2)
    c_gap = np.asarray(cost_c0(cfg.h_high, x, cfg_2)) - np.asarray(cost_c0(cfg.h_low, x, cfg_2))
    index = offset + (1.0 - cfg.tau) * g_gap - c_gap
    return _bernoulli_loglik(index, _high(data, cfg))


def estimate_theta(beta: float, data: ObservedData, cfg: EconomyConfig,
                   rng: Optional[np.random.Generator] = None, engine: Optional[MatchProbEngine] = None,
                   start=None, fixed_theta1: Optional[float] = None, xatol: float = 1e-6,
                   fatol: float = 1e-8, maxiter: int = 2000) -> ThetaEstimate:
    """Maximum-likelihood theta for fixed beta

    Beliefs only move with theta when the preference case changes, so the
    likelihood is piecewise smooth. A Nelder-Mead search runs inside every
    achievable case with that case frozen; each case optimum is then
    scored with its own induced case and the best one wins.
    """
    high = _high(data, cfg)
    if high.all() or not high.any():
        raise EstimationError("Estimation needs both education levels in the data; "
                              f"all {data.n} workers chose the same level")
    if data.covariates.shape[1] != cfg.covariate_dim:
        raise EstimationError(f"data has {data.covariates.shape[1]} covariates, economy expects {cfg.covariate_dim}")

    engine = _check_engine(engine, cfg, rng)
    start = np.array(cfg.theta if start is None else start, dtype=float)
    _check_theta(start, cfg)
    free = slice(None)
    if fixed_theta1 is not None:
        start[0] = fixed_theta1
        free = slice(1, None)
    start[0] = max(start[0], MIN_THETA1)

    def full(x):
        theta = start.copy()
        theta[free] = x
        return theta

    per_case: List[Dict[str, Any]] = []
    best: Optional[LikelihoodEvaluation] = None
    for index, case in enumerate(preference_cases(cfg)):
        def objective(x, case=case):
            value = loglik(full(x), beta, data, cfg, engine=engine, split=case).loglik
            return -value if np.isfinite(value) else np.inf

        result = minimize(objective, start[free], method='Nelder-Mead',
                          options={'xatol': xatol, 'fatol': fatol, 'maxiter': maxiter})
        theta = full(result.x)
        scored = loglik(theta, beta, data, cfg, engine=engine)
        per_case.append({
            'case_index': index,
            'case_key': case.key,
            'theta': theta,
            'case_loglik': float(-result.fun),
            'loglik': scored.loglik,
            'induces_case': scored.case_key == case.key,
            'iterations': int(result.nit),
            'converged': bool(result.success),
        })
        logger.debug(f"case {case.key}: theta={np.round(theta, 6)} loglik={scored.loglik:.6f} "
                     f"self-consistent={scored.case_key == case.key}")
        if best is None or scored.loglik > best.loglik:
            best = scored

    if best is None or not np.isfinite(best.loglik):
        raise EstimationError("No preference case produced a finite likelihood")
    return ThetaEstimate(best.theta, best.loglik, best.case_key, per_case)


# Parametric bootstrap

def quantile_interval(values, alpha: float) -> Tuple[float, float]:
    lo, hi = np.quantile(np.asarray(values, dtype=float), [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


def bootstrap_box(draws: np.ndarray, alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    """Componentwise quantile box with joint coverage at least 1 - alpha (Bonferroni)"""
    draws = np.atleast_2d(draws)
    d = draws.shape[1]
    lower, upper = np.quantile(draws, [alpha / (2.0 * d), 1.0 - alpha / (2.0 * d)], axis=0)
    return lower, upper


def _bootstrap_replication(b: int, sol, covariates: np.ndarray, beta: float, cfg: EconomyConfig,
                           streams: StreamFactory, engine: MatchProbEngine, start: np.ndarray,
                           estimate_options: Dict[str, Any]) -> Optional[np.ndarray]:
    workers = WorkerSample(covariates)
    education = sample_actions(sol, workers, streams.generator('bootstrap', b))
    try:
        return estimate_theta(beta, ObservedData(education, covariates), cfg, engine=engine,
                              start=start, **estimate_options).theta_hat
    except NumericalError as e:
        logger.debug(f"bootstrap replication {b} failed: {e}")
        return None


def bootstrap_theta_ci(theta_hat, beta: float, data: ObservedData, cfg: EconomyConfig,
                       streams: StreamFactory, n_boot: int = 200, contrast=None, alpha: float = 0.05,
                       engine: Optional[MatchProbEngine] = None, jobs: int = 1,
                       max_failure: float = 0.05, estimate_options: Optional[Dict[str, Any]] = None,
                       solver_options: Optional[Dict[str, Any]] = None) -> ConfidenceRegion:
    """Parametric-bootstrap interval for contrast' theta

    Covariates stay at their observed values; each replication redraws
    education from the equilibrium at (theta_hat, beta) and re-estimates.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    _check_theta(theta_hat, cfg)
    if n_boot < 2:
        raise ValueError("n_boot must be at least 2")
    contrast = np.ones(len(theta_hat)) if contrast is None else np.asarray(contrast, dtype=float)
    if contrast.shape != theta_hat.shape:
        raise ValueError("contrast must have one entry per preference parameter")
    engine = _check_engine(engine, cfg)
    estimate_options = dict(estimate_options or {})
    estimate_options.pop('fixed_theta1', None)

    cfg_hat = cfg.with_theta(theta_hat).with_beta(beta)
    split = firm_preference_split(cfg_hat, data.covariates)
    sol = solve_fixed_point(WorkerSample(data.covariates), split, cfg_hat, engine=engine,
                            raise_on_failure=True, **(solver_options or {}))

    draws = Parallel(n_jobs=jobs)(
        delayed(_bootstrap_replication)(b, sol, data.covariates, beta, cfg, streams, engine,
                                        theta_hat, estimate_options)
        for b in range(n_boot)
    )
    ok = [d for d in draws if d is not None]
    failures = n_boot - len(ok)
    if failures:
        logger.warning(f"{failures} of {n_boot} bootstrap replications failed")
    if not ok or failures > max_failure * n_boot:
        raise EstimationError(f"{failures} of {n_boot} bootstrap replications failed "
                              f"(limit {max_failure:.0%})")

    draws = np.vstack(ok)
    lower, upper = quantile_interval(draws @ contrast, alpha)
    return ConfidenceRegion(RegionKind.THETA_BOOTSTRAP, 1.0 - alpha, {
        'contrast': contrast,
        'estimate': float(contrast @ theta_hat),
        'lower': lower,
        'upper': upper,
        'length': upper - lower,
        'draws': draws,
        'failures': failures,
        'n_boot': n_boot,
        'p_star': sol.p_star,
    })


# Monte Carlo tests

def max_abs_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """max_{h,m} |a - b| for every pair of contingency matrices, shape (len(a), len(b))"""
    return np.abs(a[:, None] - b[None, :]).max(axis=(2, 3))


def contingency_statistic(observed: np.ndarray, sims) -> float:
    """Mean over simulations of the largest contingency-cell gap to the observed matrix"""
    sims = np.asarray(sims, dtype=float)
    if sims.ndim != 3 or len(sims) == 0:
        raise ValueError("need a nonempty stack of contingency matrices")
    return float(max_abs_distance(sims, np.asarray(observed)[None])[:, 0].mean())


def critical_value(t_sims, alpha: float) -> float:
    """Smallest c with at least a 1 - alpha share of the simulated statistics at or below it"""
    t = np.sort(np.asarray(t_sims, dtype=float))
    R = len(t)
    if R == 0:
        raise ValueError("no simulated statistics")
    rank = int(np.ceil((1.0 - alpha) * R - 1e-9))
    return float(t[min(max(rank, 1), R) - 1])


def mc_rank(t_obs: float, t_sims, rng: Optional[np.random.Generator] = None) -> int:
    """Rank of t_obs in the pool {t_obs, t_sims}, 1 = smallest; ties split at random when rng is given"""
    t = np.asarray(t_sims, dtype=float)
    below = int(np.sum(t < t_obs))
    ties = int(np.sum(t == t_obs))
    if rng is not None and ties:
        return 1 + below + int(rng.integers(0, ties + 1))
    return 1 + below


def _check_sims(R: int, alpha: float):
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if (R + 1) * alpha < 1 - 1e-9:
        raise ValueError(f"R={R} simulations cannot give a level-{alpha} Monte Carlo test; need R >= {int(np.ceil(1 / alpha)) - 1}")


def _sup_inf_statistics(observed: np.ndarray, sims: np.ndarray) -> Tuple[float, np.ndarray]:
    """(S, S*_r) for simulations indexed by grid point t and replication r

    With a single grid point these are the observed statistic and the
    leave-one-out statistics of the exchangeable pool.
    """
    T, R = sims.shape[:2]
    flat = sims.reshape(T * R, *sims.shape[2:])
    d_obs = max_abs_distance(flat, observed[None])[:, 0].reshape(T, R)
    s_obs = float(d_obs.mean(axis=1).min())
    s_star = np.full(R, -np.inf)
    for u in range(T):
        D = max_abs_distance(sims[u], flat).reshape(R, T, R)
        own = D[np.arange(R), :, np.arange(R)]
        inner = ((d_obs[u][:, None] + D.sum(axis=2) - own) / R).min(axis=1)
        s_star = np.maximum(s_star, inner)
    return s_obs, s_star


def mc_test(observed: np.ndarray, sims, alpha: float = 0.05, beta: float = float('nan')) -> McTestResult:
    """Monte Carlo test of the observed contingency matrix against R exchangeable simulations"""
    sims = np.asarray(sims, dtype=float)
    _check_sims(len(sims), alpha)
    t_obs, t_sims = _sup_inf_statistics(np.asarray(observed, dtype=float), sims[None])
    critical = critical_value(t_sims, alpha)
    return McTestResult(beta, t_obs, t_sims, critical, t_obs > critical)


def simulate_contingency(education: np.ndarray, split: FirmPreferenceSplit, cfg: EconomyConfig,
                         rng: np.random.Generator) -> np.ndarray:
    """Contingency matrix of one fresh matching (firm types and signal noise) for fixed education"""
    types = draw_firm_types(cfg.n_f, cfg, rng)
    eta = rng.normal(0.0, cfg.sigma, size=cfg.n_f)
    order = dictatorship_order(cfg.beta * cfg.k[types] + eta)
    n_high = int(np.sum(np.asarray(education) == cfg.h_high))
    return contingency_by_headcount(types[order], split.mask[types[order]], cfg.M, [n_high])[0]


def _observed_contingency(data: ObservedData, cfg: EconomyConfig) -> np.ndarray:
    if data.matched_type is None:
        raise ValueError("observed data carries no matched capital types")
    return contingency_matrix(data.education, data.matched_type, cfg)


def _validate_grid(beta_grid) -> np.ndarray:
    grid = np.asarray(list(beta_grid), dtype=float)
    if grid.size == 0:
        raise ValueError("beta grid is empty")
    return grid


def _sims_at(theta, beta: float, data: ObservedData, cfg: EconomyConfig, streams: StreamFactory,
             R: int, engine: Optional[MatchProbEngine], regenerate: bool,
             solver_options: Optional[Dict[str, Any]] = None) -> np.ndarray:
    """R simulated contingency matrices at (theta, beta)

    Replication r always uses the streams ('mc', r) and ('education', r),
    so simulations at different grid points share random numbers.
    """
    cfg_t = cfg.with_theta(theta).with_beta(beta)
    split = firm_preference_split(cfg_t, data.covariates)
    sol = None
    if regenerate:
        engine = _check_engine(engine, cfg)
        workers = WorkerSample(data.covariates)
        sol = solve_fixed_point(workers, split, cfg_t, engine=engine, raise_on_failure=True,
                                **(solver_options or {}))
    out = np.empty((R, 2, cfg.M))
    for r in range(1, R + 1):
        education = data.education if sol is None else \
            sample_actions(sol, WorkerSample(data.covariates), streams.generator('education', r))
        out[r - 1] = simulate_contingency(education, split, cfg_t, streams.generator('mc', r))
    return out


def _beta_test(beta: float, theta, data: ObservedData, cfg: EconomyConfig, streams: StreamFactory,
               R: int, alpha: float) -> McTestResult:
    sims = _sims_at(theta, beta, data, cfg, streams, R, None, regenerate=False)
    return mc_test(_observed_contingency(data, cfg), sims, alpha, beta)


def mc_confidence_beta(data: ObservedData, theta, cfg: EconomyConfig, streams: StreamFactory,
                       beta_grid: Sequence[float], R: int = 99, alpha: float = 0.05,
                       jobs: int = 1) -> ConfidenceRegion:
    """Grid values of beta not rejected by the Monte Carlo test at known theta

    Simulations keep the observed education vector and redraw firms and
    signal noise.
    """
    grid = _validate_grid(beta_grid)
    _check_sims(R, alpha)
    theta = np.asarray(theta, dtype=float)
    _check_theta(theta, cfg)
    _observed_contingency(data, cfg)

    results = Parallel(n_jobs=jobs)(
        delayed(_beta_test)(float(beta), theta, data, cfg, streams, R, alpha) for beta in grid
    )
    decisions = [BetaDecision.REJECTED if res.reject else BetaDecision.ACCEPTED for res in results]
    accepted = [float(beta) for beta, dec in zip(grid, decisions) if dec is BetaDecision.ACCEPTED]
    logger.info(f"Monte Carlo inversion accepted {len(accepted)} of {len(grid)} beta values")
    return ConfidenceRegion(RegionKind.BETA_INVERSION, 1.0 - alpha, {
        'accepted': accepted,
        'results': results,
        'decisions': decisions,
        'grid': grid,
        'rows': [{'beta': res.beta, 't_obs': res.t_obs, 'critical': res.critical,
                  'accepted': not res.reject, 'decision': dec.value}
                 for res, dec in zip(results, decisions)],
    })


def build_theta_grid(center, lower, upper, lhs_points: int, rng: np.random.Generator) -> np.ndarray:
    """center, the 2^d box vertices, the box centroid and Latin-hypercube interior points"""
    center = np.asarray(center, dtype=float)
    lower = np.minimum(np.asarray(lower, dtype=float), center)
    upper = np.maximum(np.asarray(upper, dtype=float), center)
    vertices = np.array(list(itertools.product(*zip(lower, upper))))
    parts = [center[None], vertices, ((lower + upper) / 2.0)[None]]
    if lhs_points > 0:
        unit = qmc.LatinHypercube(d=len(center), seed=rng).random(lhs_points)
        parts.append(lower + unit * (upper - lower))
    grid = np.vstack(parts)
    grid[:, 0] = np.maximum(grid[:, 0], MIN_THETA1)
    return grid


def _two_stage_point(g: int, beta: float, data: ObservedData, cfg: EconomyConfig, streams: StreamFactory,
                     R: int, first_alpha: float, second_alpha: float, n_boot: int, lhs_points: int,
                     theta_grid: Optional[np.ndarray], engine: Optional[MatchProbEngine],
                     estimate_options: Dict[str, Any], solver_options: Dict[str, Any],
                     max_failure: float) -> Dict[str, Any]:
    row: Dict[str, Any] = {'beta': beta, 't_obs': float('nan'), 'critical': float('nan'),
                           'accepted': False, 'decision': BetaDecision.UNDETERMINED.value,
                           'grid_size': 0, 'message': ''}
    engine = _check_engine(engine, cfg, streams.generator('beta_draws'))
    try:
        if theta_grid is None:
            est = estimate_theta(beta, data, cfg, engine=engine, **estimate_options)
            region = bootstrap_theta_ci(est.theta_hat, beta, data, cfg, streams.child('first_stage', g),
                                        n_boot=n_boot, alpha=first_alpha, engine=engine,
                                        max_failure=max_failure, estimate_options=estimate_options,
                                        solver_options=solver_options)
            lower, upper = bootstrap_box(region.contents['draws'], first_alpha)
            grid = build_theta_grid(est.theta_hat, lower, upper, lhs_points, streams.generator('lhs', g))
        else:
            grid = np.atleast_2d(np.asarray(theta_grid, dtype=float))

        sims = np.stack([
            _sims_at(theta, beta, data, cfg, streams, R, engine, regenerate=(t > 0),
                     solver_options=solver_options)
            for t, theta in enumerate(grid)
        ])
    except NumericalError as e:
        logger.warning(f"beta={beta}: first stage failed ({e}); marked undetermined")
        row['message'] = str(e)
        return row

    s_obs, s_star = _sup_inf_statistics(_observed_contingency(data, cfg), sims)
    critical = critical_value(s_star, second_alpha)
    accepted = s_obs <= critical
    row.update({
        't_obs': s_obs, 'critical': critical, 'accepted': bool(accepted),
        'decision': (BetaDecision.ACCEPTED if accepted else BetaDecision.REJECTED).value,
        'grid_size': len(grid), 'theta_lower': grid.min(axis=0), 'theta_upper': grid.max(axis=0),
    })
    return row


def two_stage_beta(data: ObservedData, cfg: EconomyConfig, streams: StreamFactory,
                   beta_grid: Sequence[float], R: int = 99, alpha: float = 0.05,
                   first_stage_alpha: Optional[float] = None, second_stage_alpha: Optional[float] = None,
                   n_boot: int = 200, lhs_points: int = 8, oracle_theta=None, theta_grid=None,
                   engine: Optional[MatchProbEngine] = None, jobs: int = 1,
                   estimate_options: Optional[Dict[str, Any]] = None,
                   solver_options: Optional[Dict[str, Any]] = None,
                   max_failure: float = 0.05) -> ConfidenceRegion:
    """Confidence set for beta when theta is unknown

    Stage one bounds theta at each grid beta with a bootstrap box; stage
    two compares the smallest observed statistic over a theta grid in the
    box with the sup-inf simulated statistics. The first grid point is
    the point estimate, whose simulations reuse the observed education;
    the others redraw education from their own equilibrium. Passing
    oracle_theta collapses the grid to that point and spends the whole of
    alpha on stage two.
    """
    grid = _validate_grid(beta_grid)
    if oracle_theta is not None:
        theta_grid = np.atleast_2d(np.asarray(oracle_theta, dtype=float))
        second_alpha = alpha if second_stage_alpha is None else second_stage_alpha
    else:
        second_alpha = alpha / 2.0 if second_stage_alpha is None else second_stage_alpha
    first_alpha = alpha / 2.0 if first_stage_alpha is None else first_stage_alpha
    _check_sims(R, second_alpha)
    _observed_contingency(data, cfg)
    if theta_grid is not None:
        for theta in np.atleast_2d(theta_grid):
            _check_theta(np.asarray(theta, dtype=float), cfg)

    rows = Parallel(n_jobs=jobs)(
        delayed(_two_stage_point)(g, float(beta), data, cfg, streams, R, first_alpha, second_alpha,
                                  n_boot, lhs_points, theta_grid, engine, dict(estimate_options or {}),
                                  dict(solver_options or {}), max_failure)
        for g, beta in enumerate(grid)
    )
    decisions = [BetaDecision(row['decision']) for row in rows]
    accepted = [row['beta'] for row, dec in zip(rows, decisions) if dec is BetaDecision.ACCEPTED]
    undetermined = [row['beta'] for row, dec in zip(rows, decisions) if dec is BetaDecision.UNDETERMINED]
    if undetermined:
        logger.warning(f"Undetermined beta values: {undetermined}")
    return ConfidenceRegion(RegionKind.TWO_STAGE, 1.0 - alpha, {
        'accepted': accepted,
        'undetermined': undetermined,
        'decisions': decisions,
        'rows': rows,
        'grid': grid,
        'first_stage_alpha': first_alpha,
        'second_stage_alpha': second_alpha,
    })


def full_vector_region(data: ObservedData, cfg: EconomyConfig, streams: StreamFactory,
                       theta1_grid: Sequence[float], beta_grid: Sequence[float], R: int = 99,
                       alpha: float = 0.05, engine: Optional[MatchProbEngine] = None) -> ConfidenceRegion:
    """Joint Monte Carlo region for (theta1, beta) with theta2 held at its configured value

    Education is part of the simulated outcome here, so every simulation
    redraws it from the equilibrium at the tested point.
    """
    theta1_grid = _validate_grid(theta1_grid)
    beta_grid = _validate_grid(beta_grid)
    _check_sims(R, alpha)
    observed = _observed_contingency(data, cfg)
    engine = _check_engine(engine, cfg, streams.generator('beta_draws'))

    rows, accepted = [], []
    for theta1 in theta1_grid:
        theta = np.concatenate([[theta1], cfg.theta2])
        for beta in beta_grid:
            try:
                sims = _sims_at(theta, float(beta), data, cfg, streams, R, engine, regenerate=True)
            except NumericalError as e:
                logger.warning(f"(theta1={theta1}, beta={beta}) undetermined: {e}")
                rows.append({'theta1': float(theta1), 'beta': float(beta), 't_obs': float('nan'),
                             'critical': float('nan'), 'decision': BetaDecision.UNDETERMINED.value})
                continue
            res = mc_test(observed, sims, alpha, float(beta))
            decision = BetaDecision.REJECTED if res.reject else BetaDecision.ACCEPTED
            if not res.reject:
                accepted.append((float(theta1), float(beta)))
            rows.append({'theta1': float(theta1), 'beta': float(beta), 't_obs': res.t_obs,
                         'critical': res.critical, 'decision': decision.value})
    return ConfidenceRegion(RegionKind.FULL_VECTOR, 1.0 - alpha, {'accepted': accepted, 'rows': rows})


def identification_spot_check(data: ObservedData, beta: float, cfg: EconomyConfig, theta_points,
                              engine: Optional[MatchProbEngine] = None, tol: float = 1e-8) -> Dict[str, Any]:
    """Whether the log-likelihood has a single maximizer over a finite theta grid"""
    points = np.atleast_2d(np.asarray(theta_points, dtype=float))
    engine = _check_engine(engine, cfg)
    values = np.array([loglik(theta, beta, data, cfg, engine=engine).loglik for theta in points])
    best = int(np.argmax(values))
    ties = int(np.sum(values >= values[best] - tol))
    if ties > 1:
        logger.warning(f"{ties} grid points attain the maximal log-likelihood {values[best]:.6f}")
    return {'argmax': points[best], 'max_loglik': float(values[best]), 'loglik': values,
            'unique': ties == 1, 'ties': ties}


# Data generation

def simulate_economy(cfg: EconomyConfig, streams: StreamFactory, engine: Optional[MatchProbEngine] = None,
                     solver_options: Optional[Dict[str, Any]] = None,
                     uniqueness_grid: Optional[Sequence[float]] = None
                     ) -> Tuple[ObservedData, EquilibriumSolution, MatchingOutcome, OutcomeStats]:
    """Draw covariates, solve the equilibrium, draw education, match and pay wages

    With a uniqueness_grid the circulant-determinant diagnostic runs on it
    and sets sol.unique_flag.
    """
    covariates = draw_covariates(cfg.n, cfg, streams.generator('covariates'))
    split = firm_preference_split(cfg, covariates)
    engine = _check_engine(engine, cfg, streams.generator('beta_draws'))
    workers = WorkerSample(covariates)
    workers.validate(cfg)
    sol = solve_fixed_point(workers, split, cfg, engine=engine, raise_on_failure=True,
                            **(solver_options or {}))
    if uniqueness_grid is not None:
        report = uniqueness_diagnostic(uniqueness_grid, workers, split, cfg, engine=engine)
        sol.unique_flag = not report.flagged
    education = sample_actions(sol, workers, streams.generator('education'))
    outcome, stats = simulate_market(education, covariates, split, cfg, streams.generator('matching'))
    data = ObservedData(education, covariates, outcome.matched_type, outcome.wages)
    return data, sol, outcome, stats


def generate_dataset(theta, beta: float, n: int, cfg: EconomyConfig, streams: StreamFactory,
                     engine: Optional[MatchProbEngine] = None,
                     solver_options: Optional[Dict[str, Any]] = None) -> ObservedData:
    cfg_t = cfg.with_theta(theta).with_beta(beta).with_size(n)
    data, _, _, _ = simulate_economy(cfg_t, streams, engine, solver_options)
    return data


# Result files

def decisions_frame(region: ConfidenceRegion) -> pd.DataFrame:
    return pd.DataFrame(region.contents['rows'], columns=['beta', 't_obs', 'critical', 'accepted', 'decision'])


def write_beta_decisions(region: ConfidenceRegion, path, config_hash: str):
    return write_csv(decisions_frame(region), path, config_hash)


def coverage_frame(rows: List[Dict[str, Any]], d: int) -> pd.DataFrame:
    columns = ['replication', 'theta1_hat'] + [f"theta2_hat_{i + 1}" for i in range(d)] + \
        ['ci_lo', 'ci_hi', 'covered']
    return pd.DataFrame(rows, columns=columns)


def write_coverage(rows: List[Dict[str, Any]], d: int, path, config_hash: str):
    return write_csv(coverage_frame(rows, d), path, config_hash)
