"""
Matching Probabilities
Worker beliefs over the capital type of the matched firm, built from conditional serial-dictatorship probabilities and binomial mixing.
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import stats
from scipy.special import gammaln, xlog1py, xlogy

from config import get_logger
from economy import production
from models import (
    HIGH, LOW, DrawScheme, EconomyConfig, FirmPreferenceSplit, MatchProbTable,
    SupportWeighting, ThresholdPool
)
from orderstat import BetaDrawBank, OrderStatKernel, component_mixture

logger = get_logger('matchprob')

TAIL_MASS = 1e-12
DRIFT_WARNING = 1e-3


def binomial_pmf(x, n: int, p: float):
    """C(n, x) p^x (1-p)^(n-x), evaluated in log space"""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > n):
        raise ValueError("count outside 0..n")
    log_pmf = gammaln(n + 1) - gammaln(x + 1) - gammaln(n - x + 1) + xlogy(x, p) + xlog1py(n - x, -p)
    out = np.exp(log_pmf)
    return out if out.ndim else float(out)


def _binomial_pmf_slope(x: np.ndarray, n: int, p: float) -> np.ndarray:
    """d/dp of the binomial pmf, n (b(x - 1; n - 1, p) - b(x; n - 1, p)); one-sided at p in {0, 1}"""
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.zeros_like(x)
    return n * (stats.binom.pmf(x - 1, n - 1, p) - stats.binom.pmf(x, n - 1, p))


def node_count(n: int, cfg: EconomyConfig) -> int:
    return max(math.ceil(n / cfg.support_divisor), cfg.min_support_points)


@dataclass(frozen=True, eq=False)
class SupportAxis:
    """Interpolation nodes on the integer lattice 0..trials"""
    trials: int
    nodes: np.ndarray
    weighting: SupportWeighting

    def mass(self, p: float) -> Tuple[np.ndarray, np.ndarray]:
        """Binomial mass apportioned to the nodes, and its derivative in p

        Every lattice point's mass lands on the nodes, so the weights sum
        to one exactly whatever the node count.
        """
        x = np.arange(self.trials + 1, dtype=float)
        pmf = binomial_pmf(x, self.trials, p) if self.trials > 0 else np.ones(1)
        pmf = np.atleast_1d(pmf)
        slope = _binomial_pmf_slope(x, self.trials, p)
        K = len(self.nodes)
        if K == 1:
            return np.array([pmf.sum()]), np.array([slope.sum()])

        if self.weighting is SupportWeighting.VORONOI:
            mids = 0.5 * (self.nodes[:-1] + self.nodes[1:])
            cell = np.searchsorted(mids, x, side='left')
            return (np.bincount(cell, weights=pmf, minlength=K),
                    np.bincount(cell, weights=slope, minlength=K))

        xc = np.clip(x, self.nodes[0], self.nodes[-1])
        left = np.clip(np.searchsorted(self.nodes, xc, side='right') - 1, 0, K - 2)
        frac = (xc - self.nodes[left]) / (self.nodes[left + 1] - self.nodes[left])
        weights = (np.bincount(left, weights=(1.0 - frac) * pmf, minlength=K)
                   + np.bincount(left + 1, weights=frac * pmf, minlength=K))
        dweights = (np.bincount(left, weights=(1.0 - frac) * slope, minlength=K)
                    + np.bincount(left + 1, weights=frac * slope, minlength=K))
        return weights, dweights


def support_nodes(trials: int, cfg: EconomyConfig, p: Optional[float] = None) -> SupportAxis:
    """Equally spaced integer nodes over 0..trials, or over the effective support of B(trials, p)

    Small lattices are enumerated exactly.
    """
    if p is None:
        lo, hi = 0, trials
    elif p <= 0.0:
        lo = hi = 0
    elif p >= 1.0:
        lo = hi = trials
    else:
        lo = int(stats.binom.ppf(TAIL_MASS, trials, p))
        hi = int(stats.binom.isf(TAIL_MASS, trials, p))
        lo, hi = max(lo, 0), min(max(hi, lo), trials)
    count = min(hi - lo + 1, node_count(cfg.n, cfg))
    nodes = np.unique(np.round(np.linspace(lo, hi, count)).astype(int))
    return SupportAxis(trials, nodes.astype(float), cfg.support_weighting)


def _ranks(case: str, count: int, pool: int, cfg: EconomyConfig) -> Tuple[int, int]:
    """(kappa, b) of the threshold order statistic

    'top': the firm must be among the best `count` of `pool` firms.
    'bottom': the firm must be among the worst `count` of `pool` firms.
    """
    if cfg.threshold_pool is ThresholdPool.LEAVE_ONE_OUT:
        return (pool - count, pool - 1) if case == 'top' else (count, pool - 1)
    return (pool - count, pool) if case == 'top' else (count + 1, pool)


def conditional_match_vector(j: int, n_j: int, n_pref: int, split: FirmPreferenceSplit,
                             cfg: EconomyConfig, kernel: OrderStatKernel,
                             beta: Optional[float] = None) -> np.ndarray:
    """P(matched capital type = m) for a worker choosing level j, for every m

    n_j other workers chose level j and n_pref firms prefer level j.
    """
    n = cfg.n
    if not 0 <= n_j <= n - 1:
        raise ValueError(f"n_j={n_j} outside 0..{n - 1}")
    if not 0 <= n_pref <= n:
        raise ValueError(f"n_pref={n_pref} outside 0..{n}")
    plus, post_plus, minus, post_minus, _ = split.side(j)
    nbar = n_j + 1
    out = np.zeros(split.M)

    if nbar >= n_pref:
        if n_pref > 0:
            if not plus.any():
                raise ValueError("firms prefer this level but no capital type does")
            out += post_plus * (n_pref / nbar)
        spill = nbar - n_pref
        if spill > 0:
            others = n - n_pref
            if not minus.any():
                raise ValueError("fewer than n firms prefer this level but every capital type does")
            kappa, b = _ranks('bottom', spill, others, cfg)
            below = kernel.below_prob(kappa, b, component_mixture(post_minus, cfg, beta))
            mass = post_minus * below
            total = mass.sum()
            share = mass / total if total > 0 else post_minus
            out += share * (spill / nbar)
    else:
        kappa, b = _ranks('top', nbar, n_pref, cfg)
        above = kernel.exceed_prob(kappa, b, component_mixture(post_plus, cfg, beta))
        mass = post_plus * above
        total = mass.sum()
        out += mass / total if total > 0 else post_plus

    assert abs(out.sum() - 1.0) < 1e-9, "conditional probabilities must cover the preference split"
    return out


@dataclass(eq=False)
class ConditionalMatchBlock:
    """Conditional match probabilities on the (n_j, n_pref) node grid for one preference case"""
    j: int
    split_key: Tuple[int, ...]
    beta: float
    nj_axis: SupportAxis
    npref_axis: SupportAxis
    npref_weights: np.ndarray
    probs: np.ndarray  # (len(nj nodes), len(npref nodes), M)

    def belief(self, p_j: float) -> Tuple[np.ndarray, np.ndarray]:
        """(pi_j, d pi_j / d p_j) before renormalization"""
        w, dw = self.nj_axis.mass(p_j)
        pi = np.einsum('a,b,abm->m', w, self.npref_weights, self.probs)
        dpi = np.einsum('a,b,abm->m', dw, self.npref_weights, self.probs)
        return pi, dpi


class MatchProbCache:
    """Write-once store of conditional blocks keyed by (preference case, level, beta)"""

    def __init__(self):
        self._blocks: Dict[Tuple, ConditionalMatchBlock] = {}

    def get(self, key: Tuple) -> Optional[ConditionalMatchBlock]:
        return self._blocks.get(key)

    def put(self, key: Tuple, block: ConditionalMatchBlock):
        if key in self._blocks:
            raise KeyError(f"block {key} already cached")
        self._blocks[key] = block

    def __len__(self) -> int:
        return len(self._blocks)

    def cases(self):
        return sorted({key[0] for key in self._blocks})


class MatchProbEngine:
    """Builds belief tables, reusing one frozen set of beta draws and the per-case block cache"""

    def __init__(self, cfg: EconomyConfig, rng: Optional[np.random.Generator] = None,
                 bank: Optional[BetaDrawBank] = None):
        self.cfg = cfg
        if bank is None and cfg.draw_scheme is not DrawScheme.QUADRATURE:
            bank = BetaDrawBank(cfg.n_beta_draws, cfg.draw_scheme, rng)
        self.bank = bank
        self.kernel = OrderStatKernel(cfg.sigma, bank, cfg.draw_scheme)
        self.cache = MatchProbCache()

    def block(self, split: FirmPreferenceSplit, j: int, beta: Optional[float] = None) -> ConditionalMatchBlock:
        cfg = self.cfg
        beta = cfg.beta if beta is None else float(beta)
        key = (split.key, j, beta)
        block = self.cache.get(key)
        if block is not None:
            return block

        q_j = split.q_high if j == HIGH else 1.0 - split.q_high
        nj_axis = support_nodes(cfg.n - 1, cfg)
        npref_axis = support_nodes(cfg.n, cfg, q_j)
        npref_weights, _ = npref_axis.mass(q_j)
        probs = np.empty((len(nj_axis.nodes), len(npref_axis.nodes), split.M))
        for a, n_j in enumerate(nj_axis.nodes.astype(int)):
            for b, n_pref in enumerate(npref_axis.nodes.astype(int)):
                probs[a, b] = conditional_match_vector(j, n_j, n_pref, split, cfg, self.kernel, beta)
        block = ConditionalMatchBlock(j, split.key, beta, nj_axis, npref_axis, npref_weights, probs)
        self.cache.put(key, block)
        logger.debug(f"Built belief block case={split.key} level={j} beta={beta} grid={probs.shape[:2]}")
        return block

    def _beliefs(self, split: FirmPreferenceSplit, p_high: float, beta: Optional[float]):
        pi = np.empty((split.M, 2))
        dpi = np.empty((split.M, 2))
        for j in (LOW, HIGH):
            p_j = p_high if j == HIGH else 1.0 - p_high
            sign = 1.0 if j == HIGH else -1.0
            raw, draw = self.block(split, j, beta).belief(p_j)
            total = raw.sum()
            if abs(total - 1.0) > DRIFT_WARNING:
                logger.warning(f"Belief column {j} sums to {total:.6f}; raise min_support_points")
            pi[:, j] = raw / total
            # quotient rule through the renormalization
            dpi[:, j] = sign * (draw / total - raw * draw.sum() / total ** 2)
        return pi, dpi

    def table(self, split: FirmPreferenceSplit, p_high: float, beta: Optional[float] = None) -> MatchProbTable:
        if not 0.0 <= p_high <= 1.0:
            raise ValueError(f"p_high={p_high} outside [0, 1]")
        pi, _ = self._beliefs(split, p_high, beta)
        b_low, b_high = self.block(split, LOW, beta), self.block(split, HIGH, beta)
        return MatchProbTable(
            pi=pi,
            meta={'beta': self.cfg.beta if beta is None else beta, 'p_high': p_high,
                  'q_high': split.q_high, 'case': split.key},
            support_grid={'n_j': b_high.nj_axis.nodes, 'n_pref_high': b_high.npref_axis.nodes,
                          'n_pref_low': b_low.npref_axis.nodes},
        )

    def table_derivative(self, split: FirmPreferenceSplit, p_high: float, beta: Optional[float] = None) -> np.ndarray:
        """d pi / d p_high, an M x 2 array"""
        _, dpi = self._beliefs(split, p_high, beta)
        return dpi


def conditional_match_prob(m: int, j: int, n_j: int, n_pref: int, split: FirmPreferenceSplit,
                           cfg: EconomyConfig, rng: Optional[np.random.Generator] = None,
                           engine: Optional[MatchProbEngine] = None) -> float:
    """P(worker choosing level j matches capital type m | n_j, n_pref)"""
    engine = engine or MatchProbEngine(cfg, rng)
    return float(conditional_match_vector(j, n_j, n_pref, split, cfg, engine.kernel)[m])


def pi_table(split: FirmPreferenceSplit, p_high: float, cfg: EconomyConfig,
             rng: Optional[np.random.Generator] = None,
             engine: Optional[MatchProbEngine] = None) -> MatchProbTable:
    engine = engine or MatchProbEngine(cfg, rng)
    return engine.table(split, p_high, cfg.beta)


def pi_table_derivative(split: FirmPreferenceSplit, p_high: float, cfg: EconomyConfig,
                        engine: MatchProbEngine) -> np.ndarray:
    return engine.table_derivative(split, p_high, cfg.beta)


def expected_production(j: int, table: MatchProbTable, cfg: EconomyConfig) -> float:
    """f_j' pi_j: expected output of a worker choosing level j"""
    return float(production(cfg.edu_levels[j], cfg.k, cfg) @ table.column(j))


def frictions_gap(m_tilde: int, m: int, j: int, n_j: int, n_pref: int, split: FirmPreferenceSplit,
                  cfg: EconomyConfig, engine: MatchProbEngine) -> float:
    """How much more type m_tilde matches than its prevalence relative to type m predicts"""
    probs = conditional_match_vector(j, n_j, n_pref, split, cfg, engine.kernel)
    return float(probs[m_tilde] * cfg.q[m] / cfg.q[m_tilde] - probs[m])
