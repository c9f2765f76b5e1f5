import numpy as np
import pytest

from rgmphd.gm import GaussianMixture
from rgmphd.models import (BirthModel, ClutterModel, FilterModels, MeasurementModel, MotionModel, SpawnModel,
                           SpawnTerm, cv_transition)

H_POS = np.hstack([np.eye(2), np.zeros((2, 2))])


def random_spd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T + n * np.eye(n))


def random_mixture(rng, J, dim=4, spread=200.0):
    return GaussianMixture(rng.uniform(0.05, 1.0, J), rng.uniform(-spread, spread, (J, dim)),
                           np.array([random_spd(rng, dim, 3.0) for _ in range(J)]))


@pytest.fixture
def linear_models():
    mm = MeasurementModel("linear", np.diag([10.0, 10.0]), 0.98, H=H_POS)
    birth = BirthModel(GaussianMixture([0.1, 0.1], [[0, 0, 0, 0], [300, -300, 0, 0]],
                                       [np.diag([100.0, 100.0, 25.0, 25.0])] * 2))
    return FilterModels(MotionModel(cv_transition(1.0), np.diag([1.0, 1.0, 0.5, 0.5]), 0.99), mm,
                        ClutterModel(10.0, [-1000, -1000], [1000, 1000]), birth)


@pytest.fixture
def spawn_model():
    return SpawnModel((SpawnTerm(0.05, cv_transition(1.0), np.array([5.0, 0, 0, 0]), np.eye(4)),))
