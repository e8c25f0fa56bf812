"""
Investment Equilibrium
Expected utility gaps, the logit best-response operator, the fixed-point solver and its uniqueness diagnostic.
"""

from typing import Iterable, Optional, Tuple

import numpy as np
from scipy.special import expit

from config import get_logger
from economy import cost_c0, outside_option, production
from matchprob import MatchProbEngine, expected_production
from models import (
    HIGH, LOW, ConvergenceError, EconomyConfig, EquilibriumSolution, FirmPreferenceSplit,
    SolverTraceRow, UniquenessReport, WorkerSample
)

logger = get_logger('equilibrium')

BOUNDARY_TOL = 1e-10


def private_gap(covariates: np.ndarray, cfg: EconomyConfig) -> np.ndarray:
    """(1 - tau) (g_high - g_low) - (c0_high - c0_low) for each worker"""
    covariates = np.atleast_2d(covariates)
    g_gap = outside_option(cfg.h_high, covariates, cfg) - outside_option(cfg.h_low, covariates, cfg)
    c_gap = np.asarray(cost_c0(cfg.h_high, covariates, cfg)) - np.asarray(cost_c0(cfg.h_low, covariates, cfg))
    return (1.0 - cfg.tau) * g_gap - c_gap


def production_gap(split: FirmPreferenceSplit, p_high: float, cfg: EconomyConfig,
                   engine: MatchProbEngine) -> Tuple[float, np.ndarray]:
    """(f_high - f_low under beliefs at p_high, expected outputs by level)"""
    table = engine.table(split, p_high, cfg.beta)
    f_tilde = np.array([expected_production(LOW, table, cfg), expected_production(HIGH, table, cfg)])
    return float(f_tilde[HIGH] - f_tilde[LOW]), f_tilde


def production_gap_slope(split: FirmPreferenceSplit, p_high: float, cfg: EconomyConfig,
                         engine: MatchProbEngine) -> float:
    dpi = engine.table_derivative(split, p_high, cfg.beta)
    f_high = production(cfg.h_high, cfg.k, cfg)
    f_low = production(cfg.h_low, cfg.k, cfg)
    return float(f_high @ dpi[:, HIGH] - f_low @ dpi[:, LOW])


def _engine(cfg: EconomyConfig, rng, engine: Optional[MatchProbEngine]) -> MatchProbEngine:
    return engine if engine is not None else MatchProbEngine(cfg, rng)


def utility_gap(x, p_high: float, split: FirmPreferenceSplit, cfg: EconomyConfig,
                rng: Optional[np.random.Generator] = None,
                engine: Optional[MatchProbEngine] = None):
    """Expected utility of high minus low education for covariates x, given others choose high with p_high"""
    if not 0.0 <= p_high <= 1.0:
        raise ValueError(f"p_high={p_high} outside [0, 1]")
    engine = _engine(cfg, rng, engine)
    f_gap, _ = production_gap(split, p_high, cfg, engine)
    x = np.asarray(x, dtype=float)
    delta = cfg.tau * f_gap + private_gap(np.atleast_2d(x), cfg)
    return float(delta[0]) if x.ndim == 1 else delta


def best_response(p_high: float, workers: WorkerSample, split: FirmPreferenceSplit, cfg: EconomyConfig,
                  rng: Optional[np.random.Generator] = None,
                  engine: Optional[MatchProbEngine] = None) -> Tuple[float, np.ndarray]:
    """(mean logit choice probability, per-worker probabilities) at p_high"""
    delta = utility_gap(workers.covariates, p_high, split, cfg, rng, engine)
    psi = expit(delta)
    return float(psi.mean()), psi


def best_response_slope(p_high: float, workers: WorkerSample, split: FirmPreferenceSplit,
                        cfg: EconomyConfig, engine: MatchProbEngine) -> float:
    """d Psi / d p_high through the beliefs"""
    delta = utility_gap(workers.covariates, p_high, split, cfg, engine=engine)
    psi = expit(delta)
    return float(np.mean(psi * (1.0 - psi)) * cfg.tau * production_gap_slope(split, p_high, cfg, engine))


def solve_fixed_point(workers: WorkerSample, split: FirmPreferenceSplit, cfg: EconomyConfig,
                      rng: Optional[np.random.Generator] = None, tol: float = 1e-8, max_iter: int = 500,
                      damping: float = 1.0, p0: float = 0.5,
                      engine: Optional[MatchProbEngine] = None,
                      raise_on_failure: bool = False) -> EquilibriumSolution:
    """Damped successive approximation p <- (1 - damping) p + damping Psi(p)

    A non-finite best response (overflowing outside options, say) always
    raises ConvergenceError; running out of iterations raises only when
    raise_on_failure is set.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    engine = _engine(cfg, rng, engine)
    private = private_gap(workers.covariates, cfg)

    def respond(p_now: float) -> Tuple[np.ndarray, np.ndarray]:
        f_gap, f_now = production_gap(split, p_now, cfg, engine)
        psi_now = expit(cfg.tau * f_gap + private)
        if not np.all(np.isfinite(psi_now)):
            bad = int(np.sum(~np.isfinite(psi_now)))
            raise ConvergenceError(f"Best response is not finite for {bad} of {len(psi_now)} workers "
                                   f"at p={p_now:.6g} (theta={np.round(cfg.theta, 6)})", trace)
        return psi_now, f_now

    p = float(p0)
    trace = []
    residual = np.inf
    converged = False
    for iteration in range(1, max_iter + 1):
        psi, _ = respond(p)
        psi_mean = float(psi.mean())
        residual = abs(psi_mean - p)
        trace.append(SolverTraceRow(iteration, p, residual))
        logger.debug(f"iteration {iteration}: p={p:.10f} residual={residual:.3e}")
        if residual <= tol:
            p = psi_mean
            converged = True
            break
        p = (1.0 - damping) * p + damping * psi_mean
        if not np.isfinite(p):
            raise ConvergenceError(f"Choice probability became {p} at iteration {iteration}", trace)

    # beliefs, outputs and choice probabilities all at the reported p
    psi, f_tilde = respond(p)
    if not converged:
        message = f"Fixed point not reached in {max_iter} iterations (residual {residual:.3e})"
        logger.warning(message)
        if raise_on_failure:
            raise ConvergenceError(message, trace)
        return EquilibriumSolution(p, psi, max_iter, residual, False, f_tilde=f_tilde,
                                   edu_levels=cfg.edu_levels, trace=trace)

    boundary = boundary_check(p)
    if boundary:
        logger.warning(f"Equilibrium choice probability {p:.3e} sits on the boundary of [0, 1]")
    table = engine.table(split, p, cfg.beta)
    return EquilibriumSolution(
        p_star=p, psi_star=psi, iterations=len(trace), residual=residual,
        converged=True, boundary=boundary, f_tilde=f_tilde, table=table,
        edu_levels=cfg.edu_levels, trace=trace,
    )


def boundary_check(p: float, tol: float = BOUNDARY_TOL) -> bool:
    """True when p sits within tol of 0 or 1"""
    return min(p, 1.0 - p) < tol


def circulant_log_det(phi: float, n: int) -> Tuple[float, float]:
    """(log |det J_n|, sign) for the n-player Jacobian with off-diagonal phi"""
    a = phi * (n - 1) - 1.0
    b = -(1.0 + phi)
    if a == 0.0 or (b == 0.0 and n > 1):
        return -np.inf, 0.0
    log_abs = np.log(abs(a)) + (n - 1) * np.log(abs(b)) if n > 1 else np.log(abs(a))
    sign = np.sign(a) * (np.sign(b) ** (n - 1) if n > 1 else 1.0)
    return float(log_abs), float(sign)


def uniqueness_diagnostic(p_grid: Iterable[float], workers: WorkerSample, split: FirmPreferenceSplit,
                          cfg: EconomyConfig, engine: Optional[MatchProbEngine] = None,
                          rng: Optional[np.random.Generator] = None, step: float = 1e-5,
                          flag_tol: float = 1e-6) -> UniquenessReport:
    """Finite-difference phi(p) and the circulant determinant over a grid of p"""
    grid = np.asarray(list(p_grid), dtype=float)
    if grid.size == 0:
        raise ValueError("p_grid is empty")
    engine = _engine(cfg, rng, engine)
    n = cfg.n
    critical = 1.0 / (n - 1) if n > 1 else np.inf
    phis = np.empty(grid.size)
    log_dets = np.empty(grid.size)
    for i, p in enumerate(grid):
        lo, hi = max(p - step, 0.0), min(p + step, 1.0)
        up, _ = best_response(hi, workers, split, cfg, engine=engine)
        down, _ = best_response(lo, workers, split, cfg, engine=engine)
        slope = (up - down) / (hi - lo)
        phis[i] = slope / (n - 1) if n > 1 else 0.0
        log_dets[i], _ = circulant_log_det(phis[i], n)
    flagged = bool(np.any(np.abs(phis - critical) < flag_tol))
    if flagged:
        logger.warning("Best-response Jacobian is singular somewhere on the grid; uniqueness is not guaranteed")
    return UniquenessReport(flagged, float(log_dets.min()), phis, log_dets)


def sample_actions(sol: EquilibriumSolution, workers: WorkerSample, rng: np.random.Generator) -> np.ndarray:
    """Education draws with P(high) = psi_i, via uniform thresholds"""
    if sol.psi_star is None:
        raise ValueError("solution carries no best-response probabilities")
    omega = rng.random(len(sol.psi_star))
    high = omega < sol.psi_star
    h_low, h_high = sol.edu_levels
    return np.where(high, h_high, h_low)
