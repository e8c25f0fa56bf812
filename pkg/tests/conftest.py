"""
Shared fixtures: small economies, stream factories and simulated data.
"""

import numpy as np
import pytest
import yaml

from inference import generate_dataset, make_engine
from models import DrawScheme, EconomyConfig
from random_streams import StreamFactory


def small_economy(n: int = 40, **overrides) -> EconomyConfig:
    """Two capital types, two covariates, moderate incentives on both sides"""
    params = dict(
        n_h=n, n_f=n,
        capital_support=(0.5, 1.0), capital_mass=(0.5, 0.5),
        theta1=1.0, theta2=(0.2, 0.2),
        beta=1.0, sigma=1.0, tau=0.5,
        n_beta_draws=200, draw_scheme=DrawScheme.STRATIFIED,
    )
    params.update(overrides)
    return EconomyConfig(**params)


@pytest.fixture
def economy():
    return small_economy()


@pytest.fixture
def tiny_economy():
    """n = 4, small enough for exact enumeration of every binomial count"""
    return small_economy(n=4, n_beta_draws=2000)


@pytest.fixture
def streams():
    return StreamFactory(12345)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def engine(economy, streams):
    return make_engine(economy, streams)


@pytest.fixture
def observed(economy, streams, engine):
    return generate_dataset(economy.theta, economy.beta, economy.n, economy, streams.child('observed'), engine)


TINY_SETTINGS = {
    'economy': {'n': 30, 'theta1': 1.0, 'theta2': [0.2, 0.2], 'beta': 1.0},
    'simulation': {'n_beta_draws': 100, 'draw_scheme': 'stratified'},
    'inference': {'n_sims': 19, 'bootstrap': 3, 'beta_grid': [0.0, 1.0], 'lhs_points': 1,
                  'max_bootstrap_failure': 1.0, 'xatol': 1e-4, 'fatol': 1e-6, 'maxiter': 200},
    'experiment': {'seed': 7, 'replications': 2, 'figure_beta_grid': [0.0, 2.0],
                   'table_betas': [1.0], 'table_sizes': [30]},
}


@pytest.fixture
def tiny_config(tmp_path):
    """Writes a desk-sized YAML configuration and returns a function that takes overrides"""

    def write(**sections):
        data = {name: dict(values) for name, values in TINY_SETTINGS.items()}
        for name, values in sections.items():
            data.setdefault(name, {}).update(values)
        data['logging'] = {'file_path': str(tmp_path / 'logs' / 'run.log'), 'console_output': False}
        path = tmp_path / 'config.yaml'
        path.write_text(yaml.safe_dump(data))
        return str(path)

    return write
