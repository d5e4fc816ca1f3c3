"""Shared fixtures for the CorrLeak test suite."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from modules import copula, corrmat  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def normal3():
    return [copula.standard_normal() for _ in range(3)]


@pytest.fixture
def copula_data(rng):
    """1000 records with rho(X_1, Y) = 0.8, rho(X_2, Y) = 0 and rho(X_1, X_2) = 0"""
    C = np.array([
        [1.0, 0.0, 0.8],
        [0.0, 1.0, 0.0],
        [0.8, 0.0, 1.0],
    ])
    assert corrmat.is_valid(C)
    marginals = [copula.standard_normal() for _ in range(3)]
    train = copula.sample_copula(C, marginals, 1000, rng)
    test = copula.sample_copula(C, marginals, 500, rng)
    return C, marginals, train, test
