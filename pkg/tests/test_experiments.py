import numpy as np
import pandas as pd
import pytest

from config import ConfigManager
from experiments import (
    COVERAGE_COLUMNS, FIGURE_COLUMNS, LENGTH_COLUMNS, ExperimentRunner, coverage_replication
)
from inference import make_engine
from models import ConfigurationError, ExperimentKind, ExperimentPlan
from random_streams import StreamFactory
from tests.conftest import small_economy


def runner_for(config_path, out, kind=ExperimentKind.FIGURE1, jobs=1, **experiment):
    manager = ConfigManager(config_path, use_environment=False)
    for key, value in experiment.items():
        setattr(manager.experiment, key, value)
    plan = ExperimentPlan(kind=kind, config_path=config_path, seed=manager.experiment.seed,
                          replications=manager.experiment.replications, output_dir=str(out), parallelism=jobs)
    return ExperimentRunner(plan, manager)


class TestFigures:
    def test_columns_and_rows(self, tiny_config, tmp_path):
        runner = runner_for(tiny_config(), tmp_path / "fig")
        [path] = runner.run_figures([ExperimentKind.FIGURE1])
        assert path.name == "figure1.csv"
        frame = pd.read_csv(path, comment='#')
        assert list(frame.columns) == FIGURE_COLUMNS
        assert len(frame) == 4
        assert list(frame['theta_case']) == ['high_theta1', 'high_theta1', 'low_theta1', 'low_theta1']
        assert list(frame['theta1']) == [3.0, 3.0, 1.0, 1.0]
        assert frame['edu_share'].between(0, 1).all()

    def test_parallel_runs_are_identical(self, tiny_config, tmp_path):
        config = tiny_config()
        [serial] = runner_for(config, tmp_path / "one", jobs=1).run_figures([ExperimentKind.FIGURE2])
        [parallel] = runner_for(config, tmp_path / "two", jobs=2).run_figures([ExperimentKind.FIGURE2])
        assert serial.read_bytes() == parallel.read_bytes()

    def test_run_dispatches_on_kind(self, tiny_config, tmp_path):
        paths = runner_for(tiny_config(), tmp_path / "fig", kind=ExperimentKind.FIGURE3).run()
        assert [p.name for p in paths] == ["figure3.csv"]

    def test_empty_beta_grid(self, tiny_config, tmp_path):
        runner = runner_for(tiny_config(), tmp_path / "fig", figure_beta_grid=[])
        with pytest.raises(ConfigurationError):
            runner.run_figures()

    def test_data_commands_need_a_file(self, tiny_config, tmp_path):
        with pytest.raises(ConfigurationError):
            runner_for(tiny_config(), tmp_path / "x", kind=ExperimentKind.ESTIMATE).run()


class TestTables:
    def test_tables(self, tiny_config, tmp_path):
        runner = runner_for(tiny_config(), tmp_path / "tab", kind=ExperimentKind.TABLE1)
        paths = runner.run()
        names = [p.name for p in paths]
        assert names[-2:] == ["table1.csv", "table2.csv"]
        coverage = pd.read_csv(tmp_path / "tab" / "table1.csv", comment='#')
        length = pd.read_csv(tmp_path / "tab" / "table2.csv", comment='#')
        assert list(coverage.columns) == COVERAGE_COLUMNS
        assert list(length.columns) == LENGTH_COLUMNS
        assert list(coverage['spec']) == ['g1_f1', 'g1_f2', 'g2_f1', 'g2_f2']
        assert (coverage['replications'] + coverage['failures'] == 2).all()
        cell_files = sorted(p.name for p in (tmp_path / "tab" / "coverage").iterdir())
        assert "g1_f1_beta1_n30.csv" in cell_files

    def test_coverage_replication_row(self):
        cfg = small_economy(n=30, n_beta_draws=100)
        streams = StreamFactory(21)
        row = coverage_replication(0, cfg.theta, 1.0, cfg, streams, make_engine(cfg, streams), 3, np.ones(3), 0.05,
                                   {'xatol': 1e-4, 'fatol': 1e-6, 'maxiter': 200}, {}, max_failure=1.0)
        assert row is not None
        assert set(row) == {'replication', 'theta1_hat', 'theta2_hat_1', 'theta2_hat_2', 'ci_lo', 'ci_hi', 'covered'}
        assert row['covered'] == (row['ci_lo'] <= cfg.theta.sum() <= row['ci_hi'])

    def test_coverage_replication_row_per_level(self):
        cfg = small_economy(n=30, n_beta_draws=100, theta2=(1.0,), covariate_layout="per_level")
        streams = StreamFactory(21)
        row = coverage_replication(0, cfg.theta, 0.0, cfg, streams, make_engine(cfg, streams), 3,
                                   np.ones(cfg.theta_dim), 0.05, {'xatol': 1e-4, 'fatol': 1e-6, 'maxiter': 200},
                                   {}, max_failure=1.0)
        assert row is not None
        assert set(row) == {'replication', 'theta1_hat', 'theta2_hat_1', 'ci_lo', 'ci_hi', 'covered'}
        assert row['covered'] == (row['ci_lo'] <= 2.0 <= row['ci_hi'])


@pytest.mark.slow
def test_sorting_rises_with_signal_strength(tmp_path):
    """With an uninformative signal sorting vanishes; a strong one sorts high education to high capital"""
    manager = ConfigManager("figures.yaml", use_environment=False)
    manager.economy.n = 200
    manager.experiment.figure_beta_grid = [0.0, 5.0]
    plan = ExperimentPlan(kind=ExperimentKind.FIGURE1, seed=11, replications=20, output_dir=str(tmp_path))
    [path] = ExperimentRunner(plan, manager).run_figures([ExperimentKind.FIGURE1])
    frame = pd.read_csv(path, comment='#')
    high = frame[frame['theta_case'] == 'high_theta1'].set_index('beta')
    assert abs(high.loc[0.0, 'sort_corr']) < 0.1
    assert high.loc[5.0, 'sort_corr'] > 0.3


def bootstrap_intervals(n, replications, n_boot, seed):
    cfg = small_economy(n=n, n_beta_draws=100, theta2=(1.0,), covariate_layout="per_level", beta=0.0)
    streams = StreamFactory(seed)
    engine = make_engine(cfg, streams)
    rows = [coverage_replication(rep, cfg.theta, 0.0, cfg, streams, engine, n_boot, np.ones(cfg.theta_dim), 0.05,
                                 {'xatol': 1e-4, 'fatol': 1e-6, 'maxiter': 400}, {}, max_failure=0.2)
            for rep in range(replications)]
    return pd.DataFrame([row for row in rows if row is not None])


@pytest.mark.slow
def test_bootstrap_interval_covers_the_contrast():
    """Desk-scale coverage of the percentile interval for theta1 + theta2 at random matching"""
    frame = bootstrap_intervals(n=250, replications=60, n_boot=49, seed=31)
    assert len(frame) >= 55
    assert frame['covered'].mean() >= 0.95 - 0.12


@pytest.mark.slow
def test_bootstrap_interval_shrinks_with_n():
    small = bootstrap_intervals(n=125, replications=20, n_boot=39, seed=32)
    large = bootstrap_intervals(n=500, replications=20, n_boot=39, seed=33)
    assert (large['ci_hi'] - large['ci_lo']).mean() < (small['ci_hi'] - small['ci_lo']).mean()
