"""
Serial Dictatorship Matcher
Simulates firm-ordered matchings, attaches bargained wages and computes the outcome statistics.
"""

from typing import Optional, Tuple

import numpy as np

from config import get_logger
from economy import bargain_payoffs, draw_firm_types
from models import (
    HIGH, LOW, EconomyConfig, FirmPreferenceSplit, MatchingOutcome, OutcomeStats
)

logger = get_logger('matcher')


def capital_types(capital: np.ndarray, cfg: EconomyConfig) -> np.ndarray:
    """Map realized capital values onto capital type indices"""
    capital = np.asarray(capital, dtype=float)
    idx = np.clip(np.searchsorted(cfg.k, capital), 0, cfg.M - 1)
    if not np.allclose(cfg.k[idx], capital, rtol=0, atol=1e-12):
        raise ValueError("capital values must come from capital_support")
    return idx


def dictatorship_order(v: np.ndarray) -> np.ndarray:
    """Firm indices by descending signal, ties to the lower index"""
    return np.lexsort((np.arange(len(v)), -v))


def simulate_matching(education: np.ndarray, capital: np.ndarray, split: FirmPreferenceSplit,
                      cfg: EconomyConfig, rng: np.random.Generator,
                      eta: Optional[np.ndarray] = None) -> MatchingOutcome:
    """One serial-dictatorship matching

    Firms move in descending v = beta K + eta. Each takes a uniformly
    random remaining worker of its preferred level and falls back to the
    other level once that pool is empty. Shuffling each pool once up front
    is the same as drawing uniformly at every turn.
    """
    education = np.asarray(education, dtype=float)
    n = len(education)
    if n != cfg.n_h or len(capital) != cfg.n_f:
        raise ValueError("matching needs n_h workers and n_f firms of equal number")
    if not np.all(np.isin(education, cfg.edu_levels)):
        raise ValueError("education entries must be one of the configured edu_levels")

    types = capital_types(capital, cfg)
    firm_capital = cfg.k[types]
    if eta is None:
        eta = rng.normal(0.0, cfg.sigma, size=n)
    v = cfg.beta * firm_capital + eta

    high_pool = list(rng.permutation(np.flatnonzero(education == cfg.h_high)))
    low_pool = list(rng.permutation(np.flatnonzero(education == cfg.h_low)))
    prefers_high = split.mask[types]

    assignment = np.empty(n, dtype=int)
    for firm in dictatorship_order(v):
        first, second = (high_pool, low_pool) if prefers_high[firm] else (low_pool, high_pool)
        worker = first.pop() if first else second.pop()
        assignment[worker] = firm

    return MatchingOutcome(
        assignment=assignment,
        matched_type=types[assignment],
        matched_capital=firm_capital[assignment],
        firm_types=types,
        firm_capital=firm_capital,
        v_index=v,
    )


def assign_wages(outcome: MatchingOutcome, education: np.ndarray, covariates: np.ndarray,
                 cfg: EconomyConfig) -> np.ndarray:
    """W(i) = tau f(H_i, K(i)) + (1 - tau) g(H_i, X_i)"""
    wage, _ = bargain_payoffs(np.asarray(education, dtype=float), outcome.matched_capital,
                              np.atleast_2d(covariates), cfg)
    return np.asarray(wage)


def attach_wages(outcome: MatchingOutcome, education: np.ndarray, covariates: np.ndarray,
                 cfg: EconomyConfig) -> MatchingOutcome:
    """Outcome with wages and a flag on every match that loses the firm money"""
    wage, profit = bargain_payoffs(np.asarray(education, dtype=float), outcome.matched_capital,
                                   np.atleast_2d(covariates), cfg)
    negative = np.asarray(profit) < 0
    if negative.any():
        logger.warning(f"{int(negative.sum())} of {len(negative)} matches have negative firm profit")
    return outcome.with_wages(wage, negative)


def gini(wages) -> float:
    """sum_ij |w_i - w_j| / (2 n^2 mean(w))"""
    w = np.sort(np.asarray(wages, dtype=float))
    if w.size == 0:
        raise ValueError("no wages")
    if np.any(w < 0):
        raise ValueError("wages must be nonnegative")
    total = w.sum()
    if total == 0:
        raise ValueError("Gini coefficient is undefined when every wage is zero")
    n = w.size
    ranks = np.arange(1, n + 1)
    return float(np.sum((2 * ranks - n - 1) * w) / (n * total))


def contingency_matrix(education: np.ndarray, matched_type: np.ndarray, cfg: EconomyConfig) -> np.ndarray:
    """Empirical joint distribution of (education level, matched capital type), 2 x M"""
    education = np.asarray(education, dtype=float)
    rows = (education == cfg.h_high).astype(int)
    counts = np.zeros((2, cfg.M))
    np.add.at(counts, (rows, np.asarray(matched_type, dtype=int)), 1.0)
    return counts / len(education)


def contingency_by_headcount(types_in_order: np.ndarray, prefers_high_in_order: np.ndarray, M: int,
                             n_high=None) -> np.ndarray:
    """Contingency matrices of a serial dictatorship for every number of high-education workers

    Firms are listed in dictatorship order. Workers of one level are
    interchangeable to firms, so the matched (level, type) counts depend
    on the workers only through how many chose high. Returns an array
    of shape (len(n_high), 2, M).
    """
    types_in_order = np.asarray(types_in_order, dtype=int)
    prefers = np.asarray(prefers_high_in_order, dtype=bool)
    n = len(types_in_order)
    onehot = np.zeros((n, M))
    onehot[np.arange(n), types_in_order] = 1.0

    cum_high = np.vstack([np.zeros(M), np.cumsum(onehot[prefers], axis=0)])
    cum_low = np.vstack([np.zeros(M), np.cumsum(onehot[~prefers], axis=0)])
    A = int(prefers.sum())
    total_high, total_low = cum_high[-1], cum_low[-1]

    nH = np.arange(n + 1) if n_high is None else np.atleast_1d(np.asarray(n_high, dtype=int))
    nL = n - nH
    enough_high = (A <= nH)[:, None]
    from_low = cum_low[np.minimum(nL, n - A)]
    from_high = cum_high[np.minimum(nH, A)]

    out = np.empty((len(nH), 2, M))
    out[:, HIGH] = np.where(enough_high, total_high + total_low - from_low, from_high)
    out[:, LOW] = np.where(enough_high, from_low, total_high - from_high + total_low)
    return out / n


def dominance_violations(outcome: MatchingOutcome, education: np.ndarray, split: FirmPreferenceSplit,
                         cfg: EconomyConfig) -> int:
    """Firms holding a less-preferred worker while a later firm holds a preferred one"""
    education = np.asarray(education, dtype=float)
    n = len(education)
    firm_level = np.empty(n, dtype=int)
    firm_level[outcome.assignment] = (education == cfg.h_high).astype(int)
    order = dictatorship_order(outcome.v_index)
    levels = firm_level[order]
    wants_high = split.mask[outcome.firm_types[order]]

    later_high = np.concatenate([np.cumsum(levels[::-1] == HIGH)[::-1][1:], [0]]) > 0
    later_low = np.concatenate([np.cumsum(levels[::-1] == LOW)[::-1][1:], [0]]) > 0
    bad = (wants_high & (levels == LOW) & later_high) | (~wants_high & (levels == HIGH) & later_low)
    return int(bad.sum())


def summarize(outcome: MatchingOutcome, education: np.ndarray, cfg: EconomyConfig) -> OutcomeStats:
    education = np.asarray(education, dtype=float)
    high = education == cfg.h_high
    capital = outcome.matched_capital

    if high.all() or not high.any() or np.all(capital == capital[0]):
        sort_corr = float('nan')
    else:
        sort_corr = float(np.corrcoef(high.astype(float), capital)[0, 1])

    wages = outcome.wages
    if wages is None:
        inequality, premium = float('nan'), float('nan')
    else:
        inequality = gini(wages)
        premium = float(wages[high].mean() - wages[~high].mean()) if high.any() and not high.all() else float('nan')

    negative_share = float(outcome.negative_profit.mean()) if outcome.negative_profit is not None else 0.0
    return OutcomeStats(
        edu_share=float(high.mean()),
        gini=inequality,
        sort_corr=sort_corr,
        wage_premium=premium,
        contingency=contingency_matrix(education, outcome.matched_type, cfg),
        negative_profit_share=negative_share,
    )


def simulate_market(education: np.ndarray, covariates: np.ndarray, split: FirmPreferenceSplit,
                    cfg: EconomyConfig, rng: np.random.Generator) -> Tuple[MatchingOutcome, OutcomeStats]:
    """Draw firms and signal noise, match, pay wages and summarize"""
    types = draw_firm_types(cfg.n_f, cfg, rng)
    outcome = simulate_matching(education, cfg.k[types], split, cfg, rng)
    outcome = attach_wages(outcome, education, covariates, cfg)
    return outcome, summarize(outcome, education, cfg)
