"""
Experiment Runner
Seeded batch experiments: comparative-statics figures, bootstrap coverage tables, simulation, estimation and beta confidence sets.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from config import ConfigManager, get_logger
from data_loader import load_observed_data, observed_frame, write_csv
from inference import (
    bootstrap_theta_ci, estimate_theta, generate_dataset, make_engine, simulate_economy,
    two_stage_beta, write_beta_decisions, write_coverage
)
from matchprob import MatchProbEngine
from models import (
    ConfigurationError, EconomyConfig, ExperimentKind, ExperimentPlan, NumericalError, ObservedData,
    OutsideForm, ProductionForm
)
from random_streams import StreamFactory

logger = get_logger('experiments')

# aggregate choice probabilities scanned by the uniqueness diagnostic after a simulate run
UNIQUENESS_GRID = np.linspace(0.05, 0.95, 19)

# (production form, (high theta1, low theta1)) behind each comparative-statics figure
FIGURE_CASES: Dict[ExperimentKind, Tuple[ProductionForm, Tuple[float, float]]] = {
    ExperimentKind.FIGURE1: (ProductionForm.MULTIPLICATIVE, (3.0, 1.0)),
    ExperimentKind.FIGURE2: (ProductionForm.ADDITIVE, (2.0, 1.0)),
    ExperimentKind.FIGURE3: (ProductionForm.MULTIPLICATIVE, (2.5, 0.7)),
}

TABLE_SPECS: List[Tuple[str, OutsideForm, ProductionForm]] = [
    ('g1_f1', OutsideForm.G1_EXP_INTERACTION, ProductionForm.MULTIPLICATIVE),
    ('g1_f2', OutsideForm.G1_EXP_INTERACTION, ProductionForm.ADDITIVE),
    ('g2_f1', OutsideForm.G2_LEVEL_EXP, ProductionForm.MULTIPLICATIVE),
    ('g2_f2', OutsideForm.G2_LEVEL_EXP, ProductionForm.ADDITIVE),
]

FIGURE_COLUMNS = ['beta', 'theta_case', 'theta1', 'edu_share', 'gini', 'sort_corr', 'wage_premium', 'p_star']
TABLE_COLUMNS = ['spec', 'beta0', 'n', 'coverage', 'mean_length', 'replications', 'failures']
COVERAGE_COLUMNS = ['spec', 'beta0', 'n', 'coverage', 'replications', 'failures']
LENGTH_COLUMNS = ['spec', 'beta0', 'n', 'mean_length', 'replications', 'failures']


class ExperimentRunner:
    """Runs one ExperimentPlan against a loaded configuration"""

    def __init__(self, plan: ExperimentPlan, manager: ConfigManager):
        self.plan = plan
        self.manager = manager
        self.logger = get_logger('experiment_runner')
        self.streams = StreamFactory(plan.seed)
        self.output_dir = Path(plan.output_dir)
        self.config_hash = manager.config_hash()

    @property
    def replications(self) -> int:
        return self.plan.replications or self.manager.experiment.replications

    def _solver_options(self) -> Dict[str, Any]:
        sim = self.manager.simulation
        return {'tol': sim.fixed_point_tol, 'max_iter': sim.max_iter, 'damping': sim.damping, 'p0': sim.p0}

    def _estimate_options(self) -> Dict[str, Any]:
        inf = self.manager.inference
        return {'xatol': inf.xatol, 'fatol': inf.fatol, 'maxiter': inf.maxiter}

    def _contrast(self, cfg: EconomyConfig) -> np.ndarray:
        contrast = self.manager.inference.contrast
        return np.ones(cfg.theta_dim) if contrast is None else np.asarray(contrast, dtype=float)

    def _write(self, frame: pd.DataFrame, name: str) -> Path:
        return write_csv(frame, self.output_dir / name, self.config_hash)

    # Figures

    def run_figures(self, kinds: Optional[Sequence[ExperimentKind]] = None) -> List[Path]:
        """Average outcome statistics over replications along the figure beta grid"""
        kinds = list(kinds or FIGURE_CASES)
        base = self.manager.build_economy()
        betas = [float(b) for b in self.manager.experiment.figure_beta_grid]
        if not betas:
            raise ConfigurationError("experiment.figure_beta_grid is empty")
        engine = make_engine(base, self.streams)
        paths = []
        for kind in kinds:
            form, theta1_values = FIGURE_CASES[kind]
            rows = []
            for case_name, theta1 in zip(('high_theta1', 'low_theta1'), theta1_values):
                for beta in betas:
                    cfg = EconomyConfig(**{**_fields(base), 'production_form': form,
                                           'theta1': theta1, 'beta': beta})
                    rows.append(self._figure_point(cfg, case_name, engine))
                    self.logger.info(f"{kind.value} {case_name} beta={beta}: "
                                     f"sort_corr={rows[-1]['sort_corr']:.3f} edu_share={rows[-1]['edu_share']:.3f}")
            paths.append(self._write(pd.DataFrame(rows, columns=FIGURE_COLUMNS), f"{kind.value}.csv"))
        return paths

    def _figure_point(self, cfg: EconomyConfig, case_name: str, engine: MatchProbEngine) -> Dict[str, Any]:
        results = Parallel(n_jobs=self.plan.parallelism)(
            delayed(_figure_replication)(cfg, self.streams.child('replication', rep), engine, self._solver_options())
            for rep in range(self.replications)
        )
        ok = [r for r in results if r is not None]
        if len(ok) < len(results):
            self.logger.warning(f"{len(results) - len(ok)} replications failed at beta={cfg.beta}")
        frame = pd.DataFrame(ok)
        row = {'beta': cfg.beta, 'theta_case': case_name, 'theta1': cfg.theta1}
        for col in FIGURE_COLUMNS[3:]:
            row[col] = float(np.nanmean(frame[col])) if len(frame) and frame[col].notna().any() else float('nan')
        return row

    # Tables

    def run_tables(self) -> List[Path]:
        """Coverage and mean length of the bootstrap interval for contrast' theta"""
        exp = self.manager.experiment
        base = self.manager.build_economy()
        inf = self.manager.inference
        rows = []
        paths = []
        for spec_name, outside, production in TABLE_SPECS:
            for n in exp.table_sizes:
                engine = make_engine(base.with_size(int(n)), self.streams)
                for beta0 in exp.table_betas:
                    cfg = EconomyConfig(**{**_fields(base), 'outside_form': outside,
                                           'production_form': production}).with_size(int(n))
                    cell = f"{spec_name}_beta{beta0:g}_n{int(n)}"
                    try:
                        reps = self._coverage_cell(cfg, float(beta0), engine, inf.alpha, inf.bootstrap)
                    except (NumericalError, ValueError) as e:
                        self.logger.error(f"Table cell {cell} failed: {e}")
                        rows.append({'spec': spec_name, 'beta0': beta0, 'n': n, 'coverage': float('nan'),
                                     'mean_length': float('nan'), 'replications': 0, 'failures': self.replications})
                        continue
                    paths.append(write_coverage(reps, len(cfg.theta2),
                                                self.output_dir / 'coverage' / f"{cell}.csv", self.config_hash))
                    frame = pd.DataFrame(reps)
                    failures = self.replications - len(frame)
                    coverage = float(frame['covered'].mean()) if len(frame) else float('nan')
                    length = float((frame['ci_hi'] - frame['ci_lo']).mean()) if len(frame) else float('nan')
                    self.logger.info(f"{cell}: coverage={coverage:.4f} length={length:.4f} failures={failures}")
                    rows.append({'spec': spec_name, 'beta0': beta0, 'n': n, 'coverage': coverage,
                                 'mean_length': length, 'replications': len(frame), 'failures': failures})
        frame = pd.DataFrame(rows, columns=TABLE_COLUMNS)
        paths.append(self._write(frame[COVERAGE_COLUMNS], 'table1.csv'))
        paths.append(self._write(frame[LENGTH_COLUMNS], 'table2.csv'))
        return paths

    def _coverage_cell(self, cfg: EconomyConfig, beta0: float, engine: MatchProbEngine,
                       alpha: float, n_boot: int) -> List[Dict[str, Any]]:
        theta0 = cfg.theta
        contrast = self._contrast(cfg)
        cell_streams = self.streams.child('table', int(round(beta0 * 1000)), cfg.n,
                                          list(ProductionForm).index(cfg.production_form),
                                          list(OutsideForm).index(cfg.outside_form))
        results = Parallel(n_jobs=self.plan.parallelism)(
            delayed(coverage_replication)(rep, theta0, beta0, cfg, cell_streams, engine, n_boot, contrast,
                                          alpha, self._estimate_options(), self._solver_options(),
                                          self.manager.inference.max_bootstrap_failure)
            for rep in range(self.replications)
        )
        return [r for r in results if r is not None]

    # Single-dataset commands

    def run_simulate(self) -> List[Path]:
        cfg = self.manager.build_economy()
        data, sol, outcome, stats = simulate_economy(cfg, self.streams.child('simulate'),
                                                     make_engine(cfg, self.streams), self._solver_options(),
                                                     uniqueness_grid=UNIQUENESS_GRID)
        self.logger.info(f"Simulated n={cfg.n}: p*={sol.p_star:.4f} edu_share={stats.edu_share:.3f} "
                         f"gini={stats.gini:.4f} sort_corr={stats.sort_corr:.3f}")
        paths = [self._write(observed_frame(outcome, data.education, data.covariates), 'observed.csv')]
        paths.append(self._write(pd.DataFrame([{**stats.as_row(), 'p_star': sol.p_star,
                                                'iterations': sol.iterations,
                                                'unique': sol.unique_flag}]), 'summary.csv'))
        paths.append(self._write(sol.trace_frame(), 'solver_trace.csv'))
        return paths

    def run_estimate(self, data_path) -> List[Path]:
        cfg, data = self._load(data_path)
        engine = make_engine(cfg, self.streams)
        inf = self.manager.inference
        est = estimate_theta(cfg.beta, data, cfg, engine=engine, **self._estimate_options())
        region = bootstrap_theta_ci(est.theta_hat, cfg.beta, data, cfg, self.streams.child('bootstrap'),
                                    n_boot=inf.bootstrap, contrast=self._contrast(cfg), alpha=inf.alpha,
                                    engine=engine, jobs=self.plan.parallelism,
                                    max_failure=inf.max_bootstrap_failure,
                                    estimate_options=self._estimate_options(),
                                    solver_options=self._solver_options())
        theta_cols = ['theta1'] + [f"theta2_{i + 1}" for i in range(len(cfg.theta2))]
        case_rows = []
        for case in est.per_case:
            row = {'case': '-'.join(str(m + 1) for m in case['case_key']) or 'none'}
            row.update(dict(zip(theta_cols, case['theta'])))
            row.update({'loglik': case['loglik'], 'induces_case': case['induces_case'],
                        'selected': np.allclose(case['theta'], est.theta_hat)})
            case_rows.append(row)
        c = region.contents
        ci_row = {**dict(zip(theta_cols, est.theta_hat)), 'loglik': est.loglik, 'estimate': c['estimate'],
                  'ci_lo': c['lower'], 'ci_hi': c['upper'], 'level': region.level, 'failures': c['failures']}
        return [self._write(pd.DataFrame(case_rows, columns=['case', *theta_cols, 'loglik', 'induces_case', 'selected']),
                            'estimate_cases.csv'),
                self._write(pd.DataFrame([ci_row]), 'estimate.csv')]

    def run_confint_beta(self, data_path, oracle_theta: bool = False) -> List[Path]:
        inf = self.manager.inference
        if not inf.beta_grid:
            raise ConfigurationError("inference.beta_grid is empty")
        cfg, data = self._load(data_path)
        region = two_stage_beta(
            data, cfg, self.streams.child('confint'), inf.beta_grid, R=inf.n_sims, alpha=inf.alpha,
            n_boot=inf.bootstrap, lhs_points=inf.lhs_points,
            oracle_theta=cfg.theta if oracle_theta else None,
            engine=make_engine(cfg, self.streams), jobs=self.plan.parallelism,
            estimate_options=self._estimate_options(), solver_options=self._solver_options(),
            max_failure=inf.max_bootstrap_failure,
        )
        self.logger.info(f"Accepted beta values: {region.accepted}")
        region_frame = pd.DataFrame({'beta': region.accepted})
        return [write_beta_decisions(region, self.output_dir / 'confint_beta.csv', self.config_hash),
                self._write(region_frame, 'confint_beta_region.csv')]

    def _load(self, data_path) -> Tuple[EconomyConfig, ObservedData]:
        """Observed data and the configured economy sized to it"""
        data = load_observed_data(data_path, self.manager.build_economy())
        return self.manager.build_economy().with_size(data.n), data

    def run(self, data_path=None, oracle_theta: bool = False) -> List[Path]:
        kind = self.plan.kind
        self.logger.info(f"Running {kind.value} (seed={self.plan.seed}, jobs={self.plan.parallelism}, "
                         f"config_hash={self.config_hash})")
        if kind in FIGURE_CASES:
            return self.run_figures([kind])
        if kind in (ExperimentKind.TABLE1, ExperimentKind.TABLE2):
            return self.run_tables()
        if kind is ExperimentKind.SIMULATE:
            return self.run_simulate()
        if data_path is None:
            raise ConfigurationError(f"{kind.value} needs an observed-data file")
        if kind is ExperimentKind.ESTIMATE:
            return self.run_estimate(data_path)
        return self.run_confint_beta(data_path, oracle_theta)


def _fields(cfg: EconomyConfig) -> Dict[str, Any]:
    return {name: getattr(cfg, name) for name in cfg.__dataclass_fields__}


def _figure_replication(cfg: EconomyConfig, streams: StreamFactory, engine: MatchProbEngine,
                        solver_options: Dict[str, Any]) -> Optional[Dict[str, float]]:
    try:
        _, sol, _, stats = simulate_economy(cfg, streams, engine, solver_options)
    except NumericalError as e:
        logger.warning(f"figure replication failed: {e}")
        return None
    return {**stats.as_row(), 'p_star': sol.p_star}


def coverage_replication(rep: int, theta0, beta0: float, cfg: EconomyConfig, streams: StreamFactory,
                         engine: MatchProbEngine, n_boot: int, contrast: np.ndarray, alpha: float,
                         estimate_options: Dict[str, Any], solver_options: Dict[str, Any],
                         max_failure: float = 0.05) -> Optional[Dict[str, Any]]:
    """Simulate at (theta0, beta0), estimate, bootstrap, and record whether the interval covers contrast' theta0"""
    rep_streams = streams.child('replication', rep)
    try:
        data = generate_dataset(theta0, beta0, cfg.n, cfg, rep_streams, engine, solver_options)
        est = estimate_theta(beta0, data, cfg, engine=engine, start=theta0, **estimate_options)
        region = bootstrap_theta_ci(est.theta_hat, beta0, data, cfg, rep_streams.child('bootstrap'),
                                    n_boot=n_boot, contrast=contrast, alpha=alpha, engine=engine,
                                    max_failure=max_failure, estimate_options=estimate_options,
                                    solver_options=solver_options)
    except NumericalError as e:
        logger.warning(f"coverage replication {rep} failed: {e}")
        return None
    target = float(np.asarray(contrast) @ np.asarray(theta0))
    row = {'replication': rep, 'theta1_hat': float(est.theta_hat[0])}
    row.update({f"theta2_hat_{i + 1}": float(t) for i, t in enumerate(est.theta_hat[1:])})
    row.update({'ci_lo': region.contents['lower'], 'ci_hi': region.contents['upper'],
                'covered': bool(region.contents['lower'] <= target <= region.contents['upper'])})
    return row
