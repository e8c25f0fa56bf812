"""
Order Statistics of Normal Mixtures
Mixture distributions for the firm signal index and the beta order-statistic kernel behind the matching probabilities.
"""

from typing import Dict, Optional, Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import stats
from scipy.special import betainc, ndtr, ndtri

from config import get_logger
from models import DrawScheme, EconomyConfig, NormalMixture

logger = get_logger('orderstat')

QUANTILE_TOL = 1e-10
HERMITE_NODES = 80


def _live(mix: NormalMixture) -> Tuple[np.ndarray, np.ndarray]:
    live = mix.weights > 0
    return mix.means[live], mix.weights[live]


def mixture_cdf(x, mix: NormalMixture):
    """sum_m w_m Phi((x - mu_m) / sd)"""
    means, weights = _live(mix)
    x = np.asarray(x, dtype=float)
    out = ndtr((x[..., None] - means) / mix.sd) @ weights
    return out if out.ndim else float(out)


def mixture_pdf(x, mix: NormalMixture):
    means, weights = _live(mix)
    x = np.asarray(x, dtype=float)
    out = stats.norm.pdf(x[..., None], loc=means, scale=mix.sd) @ weights
    return out if out.ndim else float(out)


def _quantile(p: np.ndarray, mix: NormalMixture, tol: float = QUANTILE_TOL) -> np.ndarray:
    """Vectorized bracketing bisection; p is assumed to lie strictly inside (0, 1)"""
    means, weights = _live(mix)
    p = np.asarray(p, dtype=float)
    if means.size == 1:
        return means[0] + mix.sd * ndtri(p)

    lo = np.full(p.shape, means.min() - 10.0 * mix.sd)
    hi = np.full(p.shape, means.max() + 10.0 * mix.sd)
    step = hi - lo
    for _ in range(200):
        low_bad = mixture_cdf(lo, mix) > p
        high_bad = mixture_cdf(hi, mix) < p
        if not (low_bad.any() or high_bad.any()):
            break
        lo = np.where(low_bad, lo - step, lo)
        hi = np.where(high_bad, hi + step, hi)
        step = 2.0 * step

    n_iter = int(np.ceil(np.log2(max(np.max(hi - lo), tol) / tol))) + 1
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        below = mixture_cdf(mid, mix) < p
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def mixture_quantile(p, mix: NormalMixture):
    """x with mixture_cdf(x) = p to 1e-10"""
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr <= 0) | (p_arr >= 1)) or np.any(~np.isfinite(p_arr)):
        raise ValueError("quantile probability must lie strictly inside (0, 1)")
    out = _quantile(p_arr, mix)
    return out if np.ndim(out) else float(out)


def beta_sample(alpha: float, beta_: float, rng: np.random.Generator, size=None):
    """Beta(alpha, beta_) draws by the gamma-ratio method"""
    if alpha <= 0 or beta_ <= 0:
        raise ValueError("beta shapes must be positive")
    x = rng.standard_gamma(alpha, size=size)
    y = rng.standard_gamma(beta_, size=size)
    return x / (x + y)


def _uniform_order_stats(u: np.ndarray, kappa: int, n: int) -> np.ndarray:
    draws = stats.beta.ppf(u, kappa, n + 1 - kappa)
    return np.clip(draws, 1e-15, 1.0 - 1e-15)


def a_coeff(kappa: int, n: int, m: int, mix: NormalMixture, n_draws: int = 100,
            rng: Optional[np.random.Generator] = None, bank: Optional['BetaDrawBank'] = None) -> float:
    """E Phi((G^{-1}(U_(kappa; n)) - mu_m) / sd), the chance component m falls below the kappa-th of n draws from G

    mu_m is mix.means[m]; m need not carry positive weight in G. Draws come
    from the frozen bank when one is given, otherwise n_draws fresh beta
    variates from rng.
    """
    if not 1 <= kappa <= n:
        raise ValueError(f"rank {kappa} outside 1..{n}")
    if bank is not None:
        u = bank.order_stats(kappa, n)
    else:
        if rng is None:
            raise ValueError("either rng or bank is required")
        u = np.clip(beta_sample(kappa, n + 1 - kappa, rng, size=n_draws), 1e-15, 1.0 - 1e-15)
    x = _quantile(u, mix)
    return float(np.mean(ndtr((x - mix.means[m]) / mix.sd)))


class BetaDrawBank:
    """Frozen uniforms behind every beta order-statistic draw

    The same uniforms are pushed through each Beta(kappa, n + 1 - kappa)
    quantile function, so one bank gives a deterministic likelihood and
    best-response surface.
    """

    def __init__(self, n_draws: int, scheme: DrawScheme = DrawScheme.RANDOM,
                 rng: Optional[np.random.Generator] = None):
        self.n_draws = int(n_draws)
        self.scheme = DrawScheme(scheme)
        if self.scheme is DrawScheme.RANDOM:
            if rng is None:
                raise ValueError("random draw scheme needs a generator")
            self.uniforms = rng.random(self.n_draws)
        else:
            self.uniforms = (np.arange(self.n_draws) + 0.5) / self.n_draws
        self._order_stats: Dict[Tuple[int, int], np.ndarray] = {}

    def order_stats(self, kappa: int, n: int) -> np.ndarray:
        key = (kappa, n)
        if key not in self._order_stats:
            self._order_stats[key] = _uniform_order_stats(self.uniforms, kappa, n)
        return self._order_stats[key]


class OrderStatKernel:
    """Cached threshold probabilities P(v_m < X_(kappa; n)) for every capital type at once"""

    def __init__(self, sd: float, bank: Optional[BetaDrawBank] = None,
                 scheme: DrawScheme = DrawScheme.RANDOM):
        self.sd = sd
        self.bank = bank
        self.scheme = DrawScheme(scheme)
        if self.scheme is not DrawScheme.QUADRATURE and bank is None:
            raise ValueError("sampling schemes need a BetaDrawBank")
        self._quantiles: Dict[Tuple, np.ndarray] = {}
        self._below: Dict[Tuple, np.ndarray] = {}
        if self.scheme is DrawScheme.QUADRATURE:
            nodes, weights = hermgauss(HERMITE_NODES)
            self._gh_nodes = np.sqrt(2.0) * nodes
            self._gh_weights = weights / np.sqrt(np.pi)

    def _threshold_draws(self, kappa: int, n: int, mix: NormalMixture) -> np.ndarray:
        key = (mix.key, kappa, n)
        if key not in self._quantiles:
            self._quantiles[key] = _quantile(self.bank.order_stats(kappa, n), mix)
        return self._quantiles[key]

    def below_prob(self, kappa: int, n: int, mix: NormalMixture) -> np.ndarray:
        """P(v_m < X_(kappa; n)) for each component mean in mix.means

        kappa < 1 puts the threshold at minus infinity and kappa > n at
        plus infinity.
        """
        M = len(mix.means)
        if kappa < 1:
            return np.zeros(M)
        if kappa > n:
            return np.ones(M)
        key = (mix.key, tuple(np.round(mix.means, 12)), kappa, n)
        cached = self._below.get(key)
        if cached is not None:
            return cached
        if self.scheme is DrawScheme.QUADRATURE:
            v = mix.means[:, None] + self.sd * self._gh_nodes[None, :]
            at_or_below = betainc(kappa, n - kappa + 1, np.clip(mixture_cdf(v, mix), 0.0, 1.0))
            out = (1.0 - at_or_below) @ self._gh_weights
        else:
            x = self._threshold_draws(kappa, n, mix)
            out = ndtr((x[None, :] - mix.means[:, None]) / self.sd).mean(axis=1)
        out = np.clip(out, 0.0, 1.0)
        self._below[key] = out
        return out

    def exceed_prob(self, kappa: int, n: int, mix: NormalMixture) -> np.ndarray:
        return 1.0 - self.below_prob(kappa, n, mix)

    def clear(self):
        self._quantiles.clear()
        self._below.clear()


def component_mixture(weights, cfg: EconomyConfig, beta: Optional[float] = None) -> NormalMixture:
    """Signal mixture sum_m w_m N(beta k_m, sigma^2) over capital types

    Pass the type masses q for G, or one side's posterior weights for
    the mixture of the firms preferring (or not) an education level.
    """
    beta = cfg.beta if beta is None else beta
    return NormalMixture(beta * cfg.k, cfg.sigma, np.asarray(weights, dtype=float))


def threshold_below_prob(kappa: int, n: int, m: int, mix: NormalMixture, n_draws: int = 100,
                         rng: Optional[np.random.Generator] = None,
                         bank: Optional[BetaDrawBank] = None) -> float:
    """P(v_m < kappa-th smallest of n draws from mix), with the rank edge cases"""
    if kappa < 1:
        return 0.0
    if kappa > n:
        return 1.0
    return a_coeff(kappa, n, m, mix, n_draws, rng, bank)


def threshold_exceed_prob(kappa: int, n: int, m: int, mix: NormalMixture, n_draws: int = 100,
                          rng: Optional[np.random.Generator] = None,
                          bank: Optional[BetaDrawBank] = None) -> float:
    return 1.0 - threshold_below_prob(kappa, n, m, mix, n_draws, rng, bank)
