"""
Labor Market Matching Models
This module defines the data structures for the economy, preference splits, beliefs, equilibria, matchings and inference results.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, FrozenSet, List, Optional, Tuple
from enum import Enum

import numpy as np
import pandas as pd


class ProductionForm(Enum):
    """Functional form of match output f(h, k)"""
    MULTIPLICATIVE = "multiplicative"
    ADDITIVE = "additive"


class OutsideForm(Enum):
    """Functional form of the worker outside option g(h, x)"""
    G1_EXP_INTERACTION = "g1_exp_interaction"
    G2_LEVEL_EXP = "g2_level_exp"


class CovariateLayout(Enum):
    """How covariates enter the outside-option index

    shared: one covariate vector, index x'theta2 for both education levels.
    per_level: one covariate column per education level and a scalar
    theta2, index x_j * theta2 for level j.
    """
    SHARED = "shared"
    PER_LEVEL = "per_level"


class ThresholdPool(Enum):
    """Order-statistic pool used for the rank thresholds of the matching probabilities"""
    LEAVE_ONE_OUT = "leave_one_out"
    FULL_POOL = "full_pool"


class DrawScheme(Enum):
    """How the beta order-statistic expectations are evaluated"""
    RANDOM = "random"
    STRATIFIED = "stratified"
    QUADRATURE = "quadrature"


class SupportWeighting(Enum):
    """How binomial mass is apportioned to interpolation nodes"""
    LINEAR = "linear"
    VORONOI = "voronoi"


class RegionKind(Enum):
    """Confidence region types"""
    THETA_BOOTSTRAP = "theta_bootstrap"
    BETA_INVERSION = "beta_inversion"
    TWO_STAGE = "two_stage"
    FULL_VECTOR = "full_vector"


class BetaDecision(Enum):
    """Outcome of testing one grid value of beta"""
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    UNDETERMINED = "undetermined"


class ExperimentKind(Enum):
    """Batch experiment types"""
    FIGURE1 = "figure1"
    FIGURE2 = "figure2"
    FIGURE3 = "figure3"
    TABLE1 = "table1"
    TABLE2 = "table2"
    ESTIMATE = "estimate"
    CONFINT_BETA = "confint-beta"
    SIMULATE = "simulate"


LOW = 0
HIGH = 1


class LaborMarketError(Exception):
    """Base class for errors raised by the matching engine"""


class ConfigurationError(LaborMarketError):
    """Invalid or incomplete configuration"""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        self.errors = list(errors or [])
        if self.errors:
            message = message + ": " + "; ".join(self.errors)
        super().__init__(message)


class DataFormatError(LaborMarketError):
    """Malformed observed-data file"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(LaborMarketError):
    """A numerical routine failed"""


class ConvergenceError(NumericalError):
    """Fixed-point iteration did not converge"""

    def __init__(self, message: str, trace: Optional[List['SolverTraceRow']] = None):
        self.trace = list(trace or [])
        super().__init__(message)


class EstimationError(NumericalError):
    """Estimation refused or failed"""


@dataclass(frozen=True)
class EconomyConfig:
    """All primitives of one economy"""
    n_h: int
    n_f: int
    edu_levels: Tuple[float, float] = (1.0, 2.0)
    capital_support: Tuple[float, ...] = (0.5, 1.0)
    capital_mass: Tuple[float, ...] = (0.5, 0.5)
    theta1: float = 1.0
    theta2: Tuple[float, ...] = (1.0, 1.0)
    beta: float = 0.0
    sigma: float = 1.0
    tau: float = 0.5
    production_form: ProductionForm = ProductionForm.MULTIPLICATIVE
    outside_form: OutsideForm = OutsideForm.G1_EXP_INTERACTION
    covariate_dim: int = 2
    covariate_layout: CovariateLayout = CovariateLayout.SHARED
    covariate_low: float = 0.0
    covariate_high: float = 1.0
    cost_scale: float = 0.0
    cost_fn: Optional[Callable[[float, np.ndarray], np.ndarray]] = field(default=None, compare=False, repr=False)
    n_beta_draws: int = 100
    draw_scheme: DrawScheme = DrawScheme.RANDOM
    threshold_pool: ThresholdPool = ThresholdPool.LEAVE_ONE_OUT
    support_divisor: int = 50
    min_support_points: int = 41
    support_weighting: SupportWeighting = SupportWeighting.LINEAR
    deterministic_capital: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'edu_levels', tuple(float(h) for h in self.edu_levels))
        object.__setattr__(self, 'capital_support', tuple(float(k) for k in self.capital_support))
        object.__setattr__(self, 'capital_mass', tuple(float(q) for q in self.capital_mass))
        object.__setattr__(self, 'theta2', tuple(float(t) for t in np.atleast_1d(self.theta2)))
        for name, enum_cls in (('production_form', ProductionForm), ('outside_form', OutsideForm),
                               ('draw_scheme', DrawScheme), ('threshold_pool', ThresholdPool),
                               ('support_weighting', SupportWeighting),
                               ('covariate_layout', CovariateLayout)):
            value = getattr(self, name)
            if not isinstance(value, enum_cls):
                object.__setattr__(self, name, enum_cls(value))

        errors = self.validation_errors()
        if errors:
            raise ConfigurationError("Invalid economy", errors)

    def validation_errors(self) -> List[str]:
        """List every violated invariant"""
        errors = []
        k = np.asarray(self.capital_support)
        q = np.asarray(self.capital_mass)
        if self.n_h < 1 or self.n_f < 1:
            errors.append("n_h and n_f must be positive")
        if self.n_h != self.n_f:
            errors.append(f"n_h ({self.n_h}) must equal n_f ({self.n_f})")
        if len(self.edu_levels) != 2:
            errors.append("edu_levels must hold exactly two values")
        elif not self.edu_levels[1] > self.edu_levels[0]:
            errors.append("edu_levels must satisfy h_high > h_low")
        elif self.edu_levels[0] <= 0:
            errors.append("edu_levels must be positive")
        if len(k) != len(q):
            errors.append("capital_support and capital_mass must have equal length")
        if len(k) == 0:
            errors.append("capital_support must be nonempty")
        if len(k) > 1 and np.any(np.diff(k) <= 0):
            errors.append("capital_support must be strictly increasing")
        if len(k) and np.any(k <= 0):
            errors.append("capital_support must be positive")
        if len(q) and np.any(q <= 0):
            errors.append("capital_mass entries must be positive")
        if len(q) and abs(q.sum() - 1.0) > 1e-12:
            errors.append(f"capital_mass must sum to 1 (got {q.sum():.15f})")
        if not self.theta1 > 0:
            errors.append("theta1 must be positive for production to increase in both inputs")
        if self.covariate_layout is CovariateLayout.PER_LEVEL:
            if self.covariate_dim != 2:
                errors.append(f"per_level covariates need covariate_dim 2 (one column per education level), "
                              f"got {self.covariate_dim}")
            if len(self.theta2) != 1:
                errors.append(f"per_level covariates need a scalar theta2, got dimension {len(self.theta2)}")
        elif len(self.theta2) != self.covariate_dim:
            errors.append(f"theta2 has dimension {len(self.theta2)} but covariate_dim is {self.covariate_dim}")
        if not np.isfinite(self.beta):
            errors.append("beta must be finite")
        if not self.sigma > 0:
            errors.append("sigma must be positive")
        if not 0 < self.tau < 1:
            errors.append("tau must lie in (0, 1)")
        if not self.covariate_high > self.covariate_low:
            errors.append("covariate_high must exceed covariate_low")
        if self.n_beta_draws < 1:
            errors.append("n_beta_draws must be at least 1")
        if self.support_divisor < 1 or self.min_support_points < 2:
            errors.append("support_divisor must be >= 1 and min_support_points >= 2")
        return errors

    @property
    def n(self) -> int:
        return self.n_h

    @property
    def M(self) -> int:
        return len(self.capital_support)

    @property
    def k(self) -> np.ndarray:
        return np.asarray(self.capital_support)

    @property
    def q(self) -> np.ndarray:
        return np.asarray(self.capital_mass)

    @property
    def h_low(self) -> float:
        return self.edu_levels[0]

    @property
    def h_high(self) -> float:
        return self.edu_levels[1]

    @property
    def theta(self) -> np.ndarray:
        """Stacked preference vector (theta1, theta2...)"""
        return np.concatenate([[self.theta1], self.theta2])

    @property
    def theta_dim(self) -> int:
        return 1 + len(self.theta2)

    def with_theta(self, theta) -> 'EconomyConfig':
        theta = np.asarray(theta, dtype=float)
        return replace(self, theta1=float(theta[0]), theta2=tuple(theta[1:]))

    def with_beta(self, beta: float) -> 'EconomyConfig':
        return replace(self, beta=float(beta))

    def with_size(self, n: int) -> 'EconomyConfig':
        return replace(self, n_h=int(n), n_f=int(n))


@dataclass(eq=False)
class WorkerSample:
    """Worker covariates with optional education choices and taste shocks"""
    covariates: np.ndarray
    education: Optional[np.ndarray] = None
    taste_shocks: Optional[np.ndarray] = None

    def __post_init__(self):
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        if self.education is not None:
            self.education = np.asarray(self.education, dtype=float)
            if len(self.education) != len(self.covariates):
                raise ValueError("education and covariates must have the same number of rows")

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    def validate(self, cfg: EconomyConfig) -> None:
        """Check the sample against an economy"""
        if self.n != cfg.n_h:
            raise ValueError(f"covariates have {self.n} rows but n_h is {cfg.n_h}")
        if self.covariates.shape[1] != cfg.covariate_dim:
            raise ValueError(f"covariates have {self.covariates.shape[1]} columns but covariate_dim is {cfg.covariate_dim}")
        if self.education is not None and not np.all(np.isin(self.education, cfg.edu_levels)):
            raise ValueError("education entries must be one of the configured edu_levels")


@dataclass(frozen=True, eq=False)
class FirmPreferenceSplit:
    """Partition of capital types by preferred education level

    Indices are 0-based capital-type positions. Posterior vectors are
    full length M with zeros outside their set.
    """
    prefers_high: FrozenSet[int]
    prefers_low: FrozenSet[int]
    q_high: float
    posterior_high: np.ndarray
    posterior_low: np.ndarray

    def __post_init__(self):
        if self.prefers_high & self.prefers_low:
            raise ValueError("preference sets overlap")
        M = len(self.posterior_high)
        if self.prefers_high | self.prefers_low != frozenset(range(M)):
            raise ValueError("preference sets must cover every capital type")
        for post, members in ((self.posterior_high, self.prefers_high), (self.posterior_low, self.prefers_low)):
            if members and abs(post.sum() - 1.0) > 1e-12:
                raise ValueError("posterior weights must sum to one")

    @classmethod
    def from_mask(cls, mask, q) -> 'FirmPreferenceSplit':
        mask = np.asarray(mask, dtype=bool)
        q = np.asarray(q, dtype=float)
        q_high = float(q[mask].sum())
        post_high = np.where(mask, q, 0.0)
        post_low = np.where(~mask, q, 0.0)
        if q_high > 0:
            post_high = post_high / post_high.sum()
        if q_high < 1:
            post_low = post_low / post_low.sum()
        high = frozenset(int(m) for m in np.flatnonzero(mask))
        low = frozenset(int(m) for m in np.flatnonzero(~mask))
        # pin the homogeneous cases exactly; a float sum of q can land just off 1
        if not low:
            q_high = 1.0
        elif not high:
            q_high = 0.0
        return cls(high, low, q_high, post_high, post_low)

    @property
    def M(self) -> int:
        return len(self.posterior_high)

    @property
    def key(self) -> Tuple[int, ...]:
        return tuple(sorted(self.prefers_high))

    @property
    def mask(self) -> np.ndarray:
        mask = np.zeros(self.M, dtype=bool)
        mask[list(self.prefers_high)] = True
        return mask

    @property
    def homogeneous(self) -> bool:
        return not self.prefers_high or not self.prefers_low

    def side(self, j: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
        """(plus mask, plus posterior, minus mask, minus posterior, q_j) for education index j"""
        mask = self.mask
        if j == HIGH:
            return mask, self.posterior_high, ~mask, self.posterior_low, self.q_high
        return ~mask, self.posterior_low, mask, self.posterior_high, 1.0 - self.q_high


@dataclass(frozen=True, eq=False)
class NormalMixture:
    """Equal-variance normal mixture sum_m w_m N(mu_m, sd^2)"""
    means: np.ndarray
    sd: float
    weights: np.ndarray

    def __post_init__(self):
        means = np.atleast_1d(np.asarray(self.means, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, 'means', means)
        object.__setattr__(self, 'weights', weights)
        if means.shape != weights.shape:
            raise ValueError("means and weights must have the same shape")
        if not self.sd > 0:
            raise ValueError("sd must be positive")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be a probability vector")

    @property
    def key(self) -> Tuple:
        live = self.weights > 0
        return (tuple(np.round(self.means[live], 12)), round(self.sd, 12), tuple(np.round(self.weights[live], 12)))


@dataclass(frozen=True)
class OrderStatSpec:
    """The rank-th smallest of sample_size draws from distribution"""
    rank: int
    sample_size: int
    distribution: NormalMixture

    def __post_init__(self):
        if not 1 <= self.rank <= self.sample_size:
            raise ValueError(f"rank {self.rank} outside 1..{self.sample_size}")


@dataclass(eq=False)
class MatchProbTable:
    """Beliefs over matched capital type by education level (M x 2, columns low/high)"""
    pi: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)
    support_grid: Dict[str, Any] = field(default_factory=dict)

    def column(self, j: int) -> np.ndarray:
        return self.pi[:, j]

    def to_frame(self, cfg: Optional[EconomyConfig] = None) -> pd.DataFrame:
        rows = []
        for j in (LOW, HIGH):
            for m in range(self.pi.shape[0]):
                rows.append({
                    'edu_level': cfg.edu_levels[j] if cfg is not None else j,
                    'capital_type': m + 1,
                    'pi': float(self.pi[m, j]),
                })
        return pd.DataFrame(rows, columns=['edu_level', 'capital_type', 'pi'])


@dataclass(frozen=True)
class SolverTraceRow:
    iteration: int
    p: float
    residual: float


@dataclass(eq=False)
class EquilibriumSolution:
    """Fixed point of the best-response operator"""
    p_star: float
    psi_star: np.ndarray
    iterations: int
    residual: float
    converged: bool
    unique_flag: Optional[bool] = None
    boundary: bool = False
    f_tilde: Optional[np.ndarray] = None
    table: Optional[MatchProbTable] = None
    edu_levels: Tuple[float, float] = (1.0, 2.0)
    trace: List[SolverTraceRow] = field(default_factory=list)

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(row) for row in self.trace], columns=['iteration', 'p', 'residual'])


@dataclass(frozen=True)
class UniquenessReport:
    """Circulant-determinant check over a grid of aggregate choice probabilities"""
    flagged: bool
    min_log_abs_det: float
    phis: np.ndarray
    log_abs_dets: np.ndarray


@dataclass(frozen=True)
class IRReport:
    """Spot-check of f >= g over a covariate sample"""
    violation_share: Dict[Tuple[float, float], float]
    worst_gap: float

    @property
    def ok(self) -> bool:
        return all(share == 0 for share in self.violation_share.values())


@dataclass(frozen=True, eq=False)
class MatchingOutcome:
    """One realized serial-dictatorship matching"""
    assignment: np.ndarray
    matched_type: np.ndarray
    matched_capital: np.ndarray
    firm_types: np.ndarray
    firm_capital: np.ndarray
    v_index: np.ndarray
    wages: Optional[np.ndarray] = None
    negative_profit: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.assignment)
        if len(self.firm_types) != n or np.unique(self.assignment).size != n:
            raise ValueError("assignment must be a bijection between workers and firms")

    def with_wages(self, wages: np.ndarray, negative_profit: np.ndarray) -> 'MatchingOutcome':
        return replace(self, wages=np.asarray(wages, dtype=float), negative_profit=np.asarray(negative_profit, dtype=bool))

    def to_frame(self, education: np.ndarray) -> pd.DataFrame:
        return pd.DataFrame({
            'worker_id': np.arange(len(self.assignment)),
            'education': np.asarray(education, dtype=float),
            'firm_id': self.assignment,
            'capital': self.matched_capital,
            'wage': self.wages if self.wages is not None else np.full(len(self.assignment), np.nan),
        })


@dataclass(frozen=True, eq=False)
class OutcomeStats:
    """Summary statistics of a matching"""
    edu_share: float
    gini: float
    sort_corr: float
    wage_premium: float
    contingency: np.ndarray
    negative_profit_share: float = 0.0

    def as_row(self) -> Dict[str, float]:
        return {
            'edu_share': self.edu_share,
            'gini': self.gini,
            'sort_corr': self.sort_corr,
            'wage_premium': self.wage_premium,
        }


@dataclass(eq=False)
class ObservedData:
    """What the econometrician sees: education, covariates and matched capital types"""
    education: np.ndarray
    covariates: np.ndarray
    matched_type: Optional[np.ndarray] = None
    wages: Optional[np.ndarray] = None

    def __post_init__(self):
        self.education = np.asarray(self.education, dtype=float)
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        if len(self.education) != len(self.covariates):
            raise ValueError("education and covariates must have the same length")
        if self.matched_type is not None:
            self.matched_type = np.asarray(self.matched_type, dtype=int)

    @property
    def n(self) -> int:
        return len(self.education)


@dataclass(eq=False)
class LikelihoodEvaluation:
    theta: np.ndarray
    beta: float
    loglik: float
    phat: np.ndarray
    case_index: int
    case_key: Tuple[int, ...] = ()


@dataclass(eq=False)
class ThetaEstimate:
    """Maximum-likelihood estimate with the optimum found inside each preference case"""
    theta_hat: np.ndarray
    loglik: float
    case_key: Tuple[int, ...]
    per_case: List[Dict[str, Any]] = field(default_factory=list)


@dataclass(eq=False)
class ConfidenceRegion:
    kind: RegionKind
    level: float
    contents: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")

    @property
    def accepted(self) -> List[float]:
        return list(self.contents.get('accepted', []))


@dataclass(eq=False)
class McTestResult:
    beta: float
    t_obs: float
    t_sims: np.ndarray
    critical: float
    reject: bool


@dataclass
class ExperimentPlan:
    """One batch run"""
    kind: ExperimentKind
    config_path: Optional[str] = None
    seed: int = 20240601
    replications: Optional[int] = None
    output_dir: str = "results"
    parallelism: int = 1
    scale: str = "paper"
