import json

import numpy as np
import pytest

from experiment_config import DEFAULTS
from kernels import KernelSpec, gram
from ode_ocp import OcpConfig
from reduced_set import scaling_weights
from sampling import TRAIN_STREAM
from scenario_lp import RegressionDataSpec, generate, residuals, solve_minimax


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def gaussian():
    return KernelSpec()


@pytest.fixture
def small_gram(gaussian):
    '''
    Gaussian Gram matrix over 50 points in the plane.
    '''
    points = np.random.default_rng(7).normal(size=(50, 2))
    return gram(gaussian, points)


@pytest.fixture(scope="session")
def regression_problem():
    '''
    (K, weights) of the default regression run: seed 0, N=200 training
    scenarios, Gram matrix over the full-solve residuals.
    '''
    defaults = DEFAULTS["regress"]
    training = generate(RegressionDataSpec(N=defaults["N"], seed=0, stream=TRAIN_STREAM))
    quantity = residuals(training, solve_minimax(training).x)
    K = gram(KernelSpec(), quantity.reshape(-1, 1))
    return K, scaling_weights(quantity, defaults["scaling"])


@pytest.fixture
def small_ocp():
    return OcpConfig(M=10, substeps=5)


@pytest.fixture
def write_config(tmp_path):
    def write(data, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)
    return write
