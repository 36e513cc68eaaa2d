import numpy as np
import pytest

from caladin.experiments import gen_convex_ls, gen_sensor
from caladin.graph import random_strongly_connected


@pytest.fixture(scope="session")
def ls_problem():
    # 20 agents, 10 dimensions, Gaussian targets
    return gen_convex_ls(20, 10, seed=1)


@pytest.fixture(scope="session")
def sensor_problem():
    return gen_sensor(20, seed=1)


@pytest.fixture(scope="session")
def graph20():
    return random_strongly_connected(20, 0.2, seed=7)


def finite_difference_gradient(fun, x, h=3e-6):
    """Central-difference gradient, the standard independent oracle."""
    x = np.asarray(x, float)
    grad = np.zeros_like(x)
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = h
        grad[j] = (fun(x + step) - fun(x - step)) / (2 * h)
    return grad


def finite_difference_hessian(grad_fun, x, h=1e-6):
    x = np.asarray(x, float)
    hess = np.zeros((x.size, x.size))
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = h
        hess[:, j] = (grad_fun(x + step) - grad_fun(x - step)) / (2 * h)
    return 0.5 * (hess + hess.T)
