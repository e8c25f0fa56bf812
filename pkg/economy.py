"""
Economy Primitives
Production, outside options, Nash-bargaining payoffs and the firm preference split.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from config import get_logger
from models import (
    CovariateLayout, EconomyConfig, FirmPreferenceSplit, IRReport, OutsideForm, ProductionForm
)

logger = get_logger('economy')


def production(h, k, cfg: EconomyConfig):
    """Match output f(h, k; theta1)"""
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(h <= 0) or np.any(k <= 0):
        raise ValueError("education and capital must be positive")
    if cfg.production_form is ProductionForm.MULTIPLICATIVE:
        out = cfg.theta1 * h * k
    else:
        out = cfg.theta1 * (h + k)
    return out if out.ndim else float(out)


def _index(h, x, cfg: EconomyConfig) -> np.ndarray:
    """Outside-option index at education h: x'theta2, or x_j theta2 with per-level covariates"""
    x = np.asarray(x, dtype=float)
    if cfg.covariate_layout is CovariateLayout.PER_LEVEL:
        if x.shape[-1] != 2:
            raise ValueError(f"per_level covariates need 2 columns, got {x.shape[-1]}")
        at_high = np.asarray(h) == cfg.h_high
        return np.where(at_high, x[..., 1], x[..., 0]) * cfg.theta2[0]
    if x.shape[-1] != len(cfg.theta2):
        raise ValueError(f"covariate dimension {x.shape[-1]} does not match theta2 dimension {len(cfg.theta2)}")
    return x @ np.asarray(cfg.theta2)


def outside_option(h, x, cfg: EconomyConfig):
    """Outside option g(h, x; theta2); x is one covariate vector or a matrix of rows"""
    idx = _index(h, x, cfg)
    h = np.asarray(h, dtype=float)
    if cfg.outside_form is OutsideForm.G1_EXP_INTERACTION:
        out = np.exp(h * idx)
    else:
        out = h * np.exp(idx)
    return out if np.ndim(out) else float(out)


def cost_c0(h, x, cfg: EconomyConfig):
    """Separable schooling cost c0(h, x); zero unless configured"""
    if cfg.cost_fn is not None:
        return cfg.cost_fn(h, np.asarray(x, dtype=float))
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    return np.full(shape, cfg.cost_scale * float(h)) if shape else cfg.cost_scale * float(h)


def bargain_payoffs(h, k, x, cfg: EconomyConfig) -> Tuple:
    """Nash-bargaining (wage, profit) of a match between education h and capital k"""
    f = production(h, k, cfg)
    g = outside_option(h, x, cfg)
    wage = cfg.tau * f + (1.0 - cfg.tau) * g
    profit = (1.0 - cfg.tau) * (f - g)
    return wage, profit


def analytic_outside_mean(h: float, cfg: EconomyConfig) -> float:
    """Population mean of g(h, X) for X uniform on [low, high]^d"""
    lo, hi = cfg.covariate_low, cfg.covariate_high
    scale = h if cfg.outside_form is OutsideForm.G1_EXP_INTERACTION else 1.0
    total = 1.0
    for t in cfg.theta2:
        c = scale * t
        if abs(c) < 1e-12:
            continue
        total *= (np.exp(c * hi) - np.exp(c * lo)) / (c * (hi - lo))
    if cfg.outside_form is OutsideForm.G2_LEVEL_EXP:
        total *= h
    return float(total)


def outside_means(cfg: EconomyConfig, covariates: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """(g_low, g_high): sample means over covariates, or analytic means when none are given"""
    if covariates is None:
        return analytic_outside_mean(cfg.h_low, cfg), analytic_outside_mean(cfg.h_high, cfg)
    covariates = np.atleast_2d(covariates)
    if covariates.shape[0] == 0:
        raise ValueError("covariate sample is empty")
    return (float(np.mean(outside_option(cfg.h_low, covariates, cfg))),
            float(np.mean(outside_option(cfg.h_high, covariates, cfg))))


def split_from_means(cfg: EconomyConfig, g_low: float, g_high: float) -> FirmPreferenceSplit:
    k = cfg.k
    rho_high = (1.0 - cfg.tau) * (production(cfg.h_high, k, cfg) - g_high)
    rho_low = (1.0 - cfg.tau) * (production(cfg.h_low, k, cfg) - g_low)
    return FirmPreferenceSplit.from_mask(rho_high >= rho_low, cfg.q)


def firm_preference_split(cfg: EconomyConfig, covariates: Optional[np.ndarray] = None,
                          g_means: Optional[Tuple[float, float]] = None) -> FirmPreferenceSplit:
    """Which capital types prefer high education given theta

    Uses the sample mean of g over covariates; an explicit (g_low, g_high)
    pair or, failing both, the analytic population mean may be used instead.
    """
    if g_means is None:
        g_means = outside_means(cfg, covariates)
    split = split_from_means(cfg, *g_means)
    log_split(split)
    return split


def preference_cases(cfg: EconomyConfig) -> List[FirmPreferenceSplit]:
    """Every preference split a theta can induce under the configured production form"""
    M = cfg.M
    if cfg.production_form is ProductionForm.ADDITIVE:
        masks = [np.zeros(M, dtype=bool), np.ones(M, dtype=bool)]
    else:
        # the high-vs-low profit gap is increasing in k, so prefer-high sets are upper sets
        masks = [np.arange(M) >= t for t in range(M, -1, -1)]
    return [FirmPreferenceSplit.from_mask(mask, cfg.q) for mask in masks]


def check_individual_rationality(cfg: EconomyConfig, covariates: np.ndarray) -> IRReport:
    """Share of (education, capital) cells where f < g over the covariate sample"""
    covariates = np.atleast_2d(covariates)
    shares = {}
    worst = np.inf
    for h in cfg.edu_levels:
        g = outside_option(h, covariates, cfg)
        for k in cfg.capital_support:
            gap = production(h, k, cfg) - g
            shares[(h, k)] = float(np.mean(gap < 0))
            worst = min(worst, float(gap.min()))
    report = IRReport(shares, worst)
    if not report.ok:
        bad = {cell: share for cell, share in shares.items() if share > 0}
        logger.warning(f"Individual rationality fails for some covariates: {bad} (worst f - g = {worst:.4f})")
    return report


def draw_covariates(n: int, cfg: EconomyConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(cfg.covariate_low, cfg.covariate_high, size=(n, cfg.covariate_dim))


def draw_firm_types(n: int, cfg: EconomyConfig, rng: np.random.Generator) -> np.ndarray:
    """Capital type index of each of n firms"""
    if not cfg.deterministic_capital:
        return rng.choice(cfg.M, size=n, p=cfg.q)
    exact = n * cfg.q
    counts = np.floor(exact).astype(int)
    short = n - counts.sum()
    if short:
        order = np.argsort(-(exact - counts), kind='stable')
        counts[order[:short]] += 1
    types = np.repeat(np.arange(cfg.M), counts)
    return rng.permutation(types)


def log_split(split: FirmPreferenceSplit, level: int = logging.DEBUG) -> None:
    if not logger.isEnabledFor(level):
        return
    logger.log(level, f"Firms preferring high education: {sorted(split.prefers_high)} (q_high={split.q_high:.4f})")
