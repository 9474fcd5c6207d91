"""
Shared test fixtures and setup.

Adds src/ to the path (since the program runs from src/) and loads .env so
tests see the same OEDMT_* settings as the CLI.
"""

import sys
import os

# Make src/ importable (mirrors running `cd src && python oedmt.py`)
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'src')))

from dotenv import load_dotenv
load_dotenv(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '.env')))

import numpy as np
import pytest

from config.experiment_config import parse_config
from services.design import CandidateSet, ScenarioBinding
from services.forward import GreenMatrix, NoiseModel, TimeGrid, precision_summary

CONFIG_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'configs'))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_spd():
    """Random SPD matrix factory: A A^T + shift * I."""
    def _make(rng, dim=6, shift=0.5):
        a = rng.standard_normal((dim, dim))
        return a @ a.T + shift * np.eye(dim)
    return _make


@pytest.fixture
def make_psd():
    """Random PSD matrix of the given rank."""
    def _make(rng, dim=6, rank=6, scale=1.0):
        a = rng.standard_normal((dim, rank)) * scale
        return a @ a.T
    return _make


def synthetic_binding(seed, n=12, n_t=8, label='synthetic', sigma=1.0, kind='velocity-model'):
    """Random Green matrices with white noise; small enough for brute force."""
    gen = np.random.default_rng(seed)
    grid = TimeGrid(n_t, 0.01)
    noise = NoiseModel(sigma, 0.0, grid)
    greens = [GreenMatrix(i, gen.standard_normal((3 * n_t, 6)) * gen.uniform(0.05, 0.3)) for i in range(n)]
    H = np.stack([precision_summary(g, noise).H for g in greens])
    return ScenarioBinding(label, kind, H, tuple([noise] * n), lambda i: greens[i], grid)


def synthetic_candidates(seed, n=12, n_t=8, label='synthetic', sigma=1.0):
    binding = synthetic_binding(seed, n, n_t, label, sigma)
    locations = np.column_stack([np.arange(n) * 100.0, np.zeros(n), np.zeros(n)])
    return CandidateSet(np.arange(n), locations, binding)


@pytest.fixture
def make_candidates():
    return synthetic_candidates


@pytest.fixture
def make_binding():
    return synthetic_binding


@pytest.fixture
def small_raw_config():
    """A 9x9 grid over +-2000 m with a short trace: fast enough for end-to-end runs."""
    return {
        'name': 'test-small',
        'mode': 'greedy',
        'k': 4,
        'seed': 7,
        'grid': {'east_min': -2000, 'east_max': 2000, 'north_min': -2000, 'north_max': 2000,
                 'spacing_m': 500},
        'time_grid': {'n_t': 200, 'dt': 0.01},
        'mediums': [{'label': 'reference', 'vp': 4000, 'vs': 2312.139, 'rho': 2000}],
        'sources': [{'east_m': 0, 'north_m': 0, 'depth_m': 1500}],
        'scoring_seeds': 2,
        'n_random': 5,
        'depths_m': [1000, 1500],
    }


@pytest.fixture
def small_config(small_raw_config):
    return parse_config(small_raw_config)


@pytest.fixture
def config_dir():
    return CONFIG_DIR
