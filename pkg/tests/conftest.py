import numpy as np
import pytest

from exitrate import DiffusionField, GainTuple, SystemModel, interval


def scalar_model(a, sigma=1.0):
    """dx = a x dt + sqrt(eps) sigma dW with one scalar input channel."""
    return SystemModel(np.array([[a]]), (np.array([[1.0]]),),
                       DiffusionField.constant([[sigma]]))


def scalar_gain(k):
    return GainTuple((np.array([[k]]),))


@pytest.fixture
def brownian():
    return scalar_model(0.0), scalar_gain(0.0), interval(-1.0, 1.0)


@pytest.fixture
def repelling():
    return scalar_model(1.0), scalar_gain(0.0), interval(1.0, 2.0)
