"""
Observed Data Loader
This module reads and writes the CSV files exchanged between the simulator, the estimators and the experiment runner.
"""

from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from config import __version__, get_logger
from models import DataFormatError, EconomyConfig, MatchingOutcome, ObservedData

logger = get_logger('data_loader')

OBSERVED_COLUMNS = ['worker_id', 'education', 'firm_id', 'capital', 'wage']


def header_line(config_hash: str, version: str = __version__) -> str:
    return f"# config_hash={config_hash} version={version}"


def write_csv(frame: pd.DataFrame, path, config_hash: str, float_format: str = '%.10g') -> Path:
    """Write frame after the provenance comment line"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        f.write(header_line(config_hash) + "\n")
        frame.to_csv(f, index=False, float_format=float_format, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def read_header(path) -> Dict[str, str]:
    """Key/value pairs of the leading comment line, empty when there is none"""
    with open(path, 'r') as f:
        first = f.readline().strip()
    if not first.startswith('#'):
        return {}
    pairs = (token.split('=', 1) for token in first.lstrip('#').split() if '=' in token)
    return {key: value for key, value in pairs}


def _comment_lines(path) -> int:
    count = 0
    with open(path, 'r') as f:
        for line in f:
            if not line.startswith('#'):
                break
            count += 1
    return count


def covariate_columns(d: int) -> List[str]:
    return [f"x{i + 1}" for i in range(d)]


def observed_frame(outcome: MatchingOutcome, education: np.ndarray, covariates: np.ndarray) -> pd.DataFrame:
    """Matcher output joined with the worker covariates"""
    frame = outcome.to_frame(education)
    covariates = np.atleast_2d(covariates)
    for name, column in zip(covariate_columns(covariates.shape[1]), covariates.T):
        frame[name] = column
    return frame


def save_observed_data(frame: pd.DataFrame, path, config_hash: str) -> Path:
    return write_csv(frame, path, config_hash)


def load_observed_data(path, cfg: EconomyConfig) -> ObservedData:
    """Parse an observed-data CSV into education, covariates and matched capital types

    Every problem is reported with the file line it was found on.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path} does not exist")
    skipped = _comment_lines(path)
    try:
        frame = pd.read_csv(path, comment='#', dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataFormatError(f"cannot parse {path}: {e}")

    x_cols = covariate_columns(cfg.covariate_dim)
    missing = [col for col in ['education', 'capital', *x_cols] if col not in frame.columns]
    if missing:
        raise DataFormatError(f"missing columns {missing}", line=skipped + 1)
    if frame.empty:
        raise DataFormatError("no data rows", line=skipped + 2)

    first_data_line = skipped + 2
    numeric = {}
    for col in ['education', 'capital', *x_cols] + (['wage'] if 'wage' in frame.columns else []):
        raw = frame[col].str.strip()
        values = pd.to_numeric(raw, errors='coerce')
        bad = values.isna()
        if col == 'wage':
            # wages may be left blank
            bad &= ~raw.str.lower().isin(['', 'nan'])
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataFormatError(f"column '{col}' has non-numeric value {frame[col].iloc[row]!r}",
                                  line=first_data_line + row)
        numeric[col] = values.to_numpy(dtype=float)

    education = numeric['education']
    bad_edu = ~np.isin(education, cfg.edu_levels)
    if bad_edu.any():
        row = int(np.flatnonzero(bad_edu)[0])
        raise DataFormatError(f"education {education[row]} is not one of {cfg.edu_levels}", line=first_data_line + row)

    capital = numeric['capital']
    types = np.clip(np.searchsorted(cfg.k, capital), 0, cfg.M - 1)
    bad_cap = ~np.isclose(cfg.k[types], capital, rtol=0, atol=1e-9)
    if bad_cap.any():
        row = int(np.flatnonzero(bad_cap)[0])
        raise DataFormatError(f"capital {capital[row]} is not in the capital support {cfg.capital_support}",
                              line=first_data_line + row)

    covariates = np.column_stack([numeric[col] for col in x_cols])
    data = ObservedData(education, covariates, types, numeric.get('wage'))
    logger.info(f"Loaded {data.n} observations from {path}")
    return data


def load_results(path) -> Tuple[Dict[str, str], pd.DataFrame]:
    """(provenance header, table) of a results CSV"""
    return read_header(path), pd.read_csv(path, comment='#')