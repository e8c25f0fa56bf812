"""
Configuration Management System
Manages configuration for the labor market matching engine.
"""

import os
import json
import hashlib
import logging
import logging.handlers
import yaml
from typing import Dict, Any, List, Optional
from dataclasses import dataclass, asdict, field
from pathlib import Path
from dotenv import load_dotenv

from models import ConfigurationError, EconomyConfig

# Load environment variables
load_dotenv()

LOGGER_ROOT = 'labor_matching'
__version__ = "1.0.0"


@dataclass
class EconomySection:
    """Economy primitives"""
    n: int = 500
    edu_levels: List[float] = field(default_factory=lambda: [1.0, 2.0])
    capital_support: List[float] = field(default_factory=lambda: [0.5, 1.0])
    capital_mass: List[float] = field(default_factory=lambda: [0.5, 0.5])
    theta1: float = 1.0
    theta2: List[float] = field(default_factory=lambda: [1.0, 1.0])
    beta: float = 0.0
    sigma: float = 1.0
    tau: float = 0.5
    production_form: str = "multiplicative"
    outside_form: str = "g1_exp_interaction"
    covariate_dim: int = 2
    covariate_layout: str = "shared"
    covariate_low: float = 0.0
    covariate_high: float = 1.0
    cost_scale: float = 0.0
    deterministic_capital: bool = False


@dataclass
class SimulationSection:
    """Numerical settings for beliefs and the equilibrium solver"""
    n_beta_draws: int = 100
    draw_scheme: str = "random"
    threshold_pool: str = "leave_one_out"
    support_divisor: int = 50
    min_support_points: int = 41
    support_weighting: str = "linear"
    fixed_point_tol: float = 1e-8
    max_iter: int = 500
    damping: float = 1.0
    p0: float = 0.5


@dataclass
class InferenceSection:
    """Estimation and testing settings"""
    alpha: float = 0.05
    n_sims: int = 99
    bootstrap: int = 200
    beta_grid: List[float] = field(default_factory=lambda: [0.25 * i for i in range(21)])
    contrast: Optional[List[float]] = None
    lhs_points: int = 8
    max_bootstrap_failure: float = 0.05
    xatol: float = 1e-6
    fatol: float = 1e-8
    maxiter: int = 2000


@dataclass
class ExperimentSection:
    """Batch experiment settings"""
    seed: int = 20240601
    jobs: int = 1
    scale: str = "paper"
    replications: int = 500
    output_dir: str = "results"
    figure_beta_grid: List[float] = field(default_factory=lambda: [0.5 * i for i in range(11)])
    table_betas: List[float] = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0])
    table_sizes: List[int] = field(default_factory=lambda: [500, 1000])
    quick_replications: int = 100
    quick_bootstrap: int = 100
    quick_n: int = 250


@dataclass
class LoggingConfig:
    """Logging configuration"""
    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    file_path: str = "logs/labor_matching.log"
    max_file_size: int = 10485760  # 10MB
    backup_count: int = 5
    console_output: bool = True


SECTIONS = ('economy', 'simulation', 'inference', 'experiment', 'logging')
VALID_LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']

_configured = False


def get_logger(name: str) -> logging.Logger:
    """Named logger under the package root"""
    return logging.getLogger(f"{LOGGER_ROOT}.{name}")


def setup_logging(settings: Optional[LoggingConfig] = None, force: bool = False) -> logging.Logger:
    """Install console and rotating-file handlers on the package logger once"""
    global _configured
    settings = settings or LoggingConfig()
    root = logging.getLogger(LOGGER_ROOT)
    if _configured and not force:
        return root
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    root.setLevel(settings.level)
    formatter = logging.Formatter(settings.format)
    if settings.console_output:
        console = logging.StreamHandler()
        console.setFormatter(formatter)
        root.addHandler(console)
    if settings.file_path:
        Path(settings.file_path).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            settings.file_path, maxBytes=settings.max_file_size, backupCount=settings.backup_count
        )
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)
    root.propagate = False
    _configured = True
    return root


class ConfigManager:
    """Configuration manager for the matching engine"""

    def __init__(self, config_file: Optional[str] = "config.yaml", use_environment: bool = True):
        self.config_file = Path(config_file) if config_file else None
        self.logger = get_logger('config_manager')
        self.unknown_keys: List[str] = []

        # Initialize default configurations
        self.economy = EconomySection()
        self.simulation = SimulationSection()
        self.inference = InferenceSection()
        self.experiment = ExperimentSection()
        self.logging = LoggingConfig()

        # Load configuration from file and environment
        self.load_configuration(use_environment)

    def load_configuration(self, use_environment: bool = True):
        """Load configuration from file and environment variables"""
        if self.config_file is not None and self.config_file.exists():
            try:
                with open(self.config_file, 'r') as f:
                    config_data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigurationError(f"Cannot parse {self.config_file}", [str(e)])
            if not isinstance(config_data, dict):
                raise ConfigurationError(f"{self.config_file} must hold a mapping of sections")
            self._apply_config_data(config_data)
            self.logger.info(f"Configuration loaded from {self.config_file}")

        if use_environment:
            self._load_from_environment()

    def _apply_config_data(self, config_data: Dict[str, Any]):
        """Apply configuration data to config objects"""
        for section in SECTIONS:
            if section in config_data:
                self._update_config_object(getattr(self, section), config_data[section] or {}, section)
        for section in config_data:
            if section not in SECTIONS:
                self.unknown_keys.append(section)

    def _update_config_object(self, config_obj, data: Dict[str, Any], section: str = ""):
        """Update configuration object with data"""
        for key, value in data.items():
            if hasattr(config_obj, key):
                setattr(config_obj, key, value)
            else:
                self.unknown_keys.append(f"{section}.{key}")

    def _load_from_environment(self):
        """Load configuration from environment variables"""
        self.experiment.seed = int(os.getenv('LMM_SEED', self.experiment.seed))
        self.experiment.jobs = int(os.getenv('LMM_JOBS', self.experiment.jobs))
        self.experiment.scale = os.getenv('LMM_SCALE', self.experiment.scale)
        self.experiment.output_dir = os.getenv('LMM_OUTPUT_DIR', self.experiment.output_dir)

        # Logging configuration
        self.logging.level = os.getenv('LOG_LEVEL', self.logging.level)
        self.logging.file_path = os.getenv('LOG_FILE', self.logging.file_path)

    def as_dict(self) -> Dict[str, Any]:
        return {section: asdict(getattr(self, section)) for section in SECTIONS}

    def save_configuration(self, path: Optional[str] = None):
        """Save current configuration to file"""
        target = Path(path) if path else self.config_file
        with open(target, 'w') as f:
            yaml.dump(self.as_dict(), f, default_flow_style=False, indent=2, sort_keys=True)
        self.logger.info(f"Configuration saved to {target}")

    def config_hash(self) -> str:
        """Short digest of the resolved model settings (logging excluded)"""
        data = {section: asdict(getattr(self, section)) for section in ('economy', 'simulation', 'inference')}
        canonical = yaml.safe_dump(data, default_flow_style=False, sort_keys=True)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]

    def apply_scale(self, scale: Optional[str] = None):
        """Switch to the quick desk-scale preset when asked"""
        scale = scale or self.experiment.scale
        self.experiment.scale = scale
        if scale == 'quick':
            self.experiment.replications = self.experiment.quick_replications
            self.inference.bootstrap = self.experiment.quick_bootstrap
            self.experiment.table_sizes = [self.experiment.quick_n]
            self.economy.n = self.experiment.quick_n

    def build_economy(self, **overrides):
        """EconomyConfig from the economy and simulation sections"""
        econ = asdict(self.economy)
        sim = self.simulation
        params = dict(
            n_h=econ['n'], n_f=econ['n'],
            edu_levels=tuple(econ['edu_levels']),
            capital_support=tuple(econ['capital_support']),
            capital_mass=tuple(econ['capital_mass']),
            theta1=econ['theta1'], theta2=tuple(econ['theta2']),
            beta=econ['beta'], sigma=econ['sigma'], tau=econ['tau'],
            production_form=econ['production_form'], outside_form=econ['outside_form'],
            covariate_dim=econ['covariate_dim'], covariate_layout=econ['covariate_layout'],
            covariate_low=econ['covariate_low'], covariate_high=econ['covariate_high'],
            cost_scale=econ['cost_scale'], deterministic_capital=econ['deterministic_capital'],
            n_beta_draws=sim.n_beta_draws, draw_scheme=sim.draw_scheme,
            threshold_pool=sim.threshold_pool, support_divisor=sim.support_divisor,
            min_support_points=sim.min_support_points, support_weighting=sim.support_weighting,
        )
        params.update(overrides)
        return EconomyConfig(**params)

    def validate_configuration(self) -> Dict[str, Any]:
        """Validate configuration and return validation results"""
        validation_results = {
            'valid': True,
            'errors': [],
            'warnings': []
        }
        errors = validation_results['errors']

        try:
            self.build_economy()
        except ConfigurationError as e:
            errors.extend(f"economy: {msg}" for msg in e.errors)
        except (TypeError, ValueError) as e:
            errors.append(f"economy: {e}")

        sim = self.simulation
        if sim.fixed_point_tol <= 0:
            errors.append("simulation.fixed_point_tol must be positive")
        if sim.max_iter < 1:
            errors.append("simulation.max_iter must be at least 1")
        if not 0 < sim.damping <= 1:
            errors.append("simulation.damping must lie in (0, 1]")
        if not 0 <= sim.p0 <= 1:
            errors.append("simulation.p0 must lie in [0, 1]")

        inf = self.inference
        if not 0 < inf.alpha < 1:
            errors.append("inference.alpha must lie in (0, 1)")
        if inf.n_sims < 1:
            errors.append("inference.n_sims must be positive")
        elif (inf.n_sims + 1) * inf.alpha < 1:
            errors.append(f"inference.n_sims={inf.n_sims} is too small for alpha={inf.alpha}")
        elif abs((inf.n_sims + 1) * inf.alpha - round((inf.n_sims + 1) * inf.alpha)) > 1e-9:
            validation_results['warnings'].append("(n_sims + 1) * alpha is not an integer; the Monte Carlo test is conservative")
        if inf.bootstrap < 2:
            errors.append("inference.bootstrap must be at least 2")
        if not inf.beta_grid:
            errors.append("inference.beta_grid must be nonempty")
        if inf.contrast is not None and len(inf.contrast) != 1 + len(self.economy.theta2):
            errors.append("inference.contrast must have one entry per preference parameter")

        exp = self.experiment
        if exp.scale not in ('paper', 'quick'):
            errors.append("experiment.scale must be 'paper' or 'quick'")
        if exp.jobs == 0:
            errors.append("experiment.jobs must be nonzero")
        if exp.seed < 0:
            errors.append("experiment.seed must be non-negative")

        # Validate logging configuration
        if self.logging.level not in VALID_LEVELS:
            errors.append("Invalid logging level")

        for key in self.unknown_keys:
            validation_results['warnings'].append(f"Unknown configuration key ignored: {key}")

        validation_results['valid'] = not errors
        return validation_results

    def require_valid(self):
        """Raise ConfigurationError listing every problem"""
        results = self.validate_configuration()
        for warning in results['warnings']:
            self.logger.warning(warning)
        if not results['valid']:
            raise ConfigurationError("Invalid configuration", results['errors'])

    def get_config_summary(self) -> Dict[str, Any]:
        """Get configuration summary"""
        return {
            'economy': {
                'n': self.economy.n,
                'production_form': self.economy.production_form,
                'outside_form': self.economy.outside_form,
                'theta': [self.economy.theta1, *self.economy.theta2],
                'beta': self.economy.beta,
            },
            'simulation': {
                'n_beta_draws': self.simulation.n_beta_draws,
                'draw_scheme': self.simulation.draw_scheme,
                'threshold_pool': self.simulation.threshold_pool,
            },
            'inference': {
                'alpha': self.inference.alpha,
                'n_sims': self.inference.n_sims,
                'bootstrap': self.inference.bootstrap,
            },
            'experiment': {
                'seed': self.experiment.seed,
                'jobs': self.experiment.jobs,
                'scale': self.experiment.scale,
            },
            'config_hash': self.config_hash(),
        }


def create_sample_config_file(path: str = 'config.yaml') -> Path:
    """Create a sample configuration file holding every default"""
    target = Path(path)
    if target.exists():
        raise ConfigurationError(f"{target} already exists; refusing to overwrite it")
    target.parent.mkdir(parents=True, exist_ok=True)
    manager = ConfigManager(config_file=None, use_environment=False)
    manager.save_configuration(str(target))
    return target


if __name__ == "__main__":
    config_manager = ConfigManager()

    print("📋 Configuration Summary:")
    print(json.dumps(config_manager.get_config_summary(), indent=2))

    print("\n✅ Configuration Validation:")
    print(json.dumps(config_manager.validate_configuration(), indent=2))
