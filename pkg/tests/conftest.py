import numpy as np
import pytest

from oedgrid.casefile import load_case
from oedgrid.grid import Bounds, Network, default_state_bounds


@pytest.fixture(scope="session")
def case5():
    return load_case()


@pytest.fixture(scope="session")
def net(case5):
    return case5.network


@pytest.fixture(scope="session")
def y_true(case5):
    return case5.y_true


@pytest.fixture(scope="session")
def u_data(case5):
    return case5.u_dataset


def make_network(n_buses, lines, generators=(0,), p_demand=None, q_demand=None, u_box=5.0):
    """Small synthetic network with generous boxes."""
    n_in = 2 * (len(set(generators)) - 1)
    x_lo, x_hi = default_state_bounds(n_buses)
    bounds = Bounds(-u_box * np.ones(n_in), u_box * np.ones(n_in), x_lo, x_hi,
                    np.array([-50.0, -50.0]), np.array([50.0, 50.0]))
    zeros = np.zeros(n_buses)
    return Network(n_buses, tuple(lines), tuple(generators),
                   zeros if p_demand is None else p_demand,
                   zeros if q_demand is None else q_demand, bounds)


def random_point(rng, net, y_ref, spread=0.2):
    """State near flat start and parameters near ``y_ref``."""
    x = net.flat_state() + np.tile([0.05, 0.1], net.n_buses - 1) * rng.standard_normal(net.n_states)
    y = y_ref * (1 + spread * rng.uniform(-1, 1, y_ref.size))
    return x, y


def central_jacobian(f, z, h=1e-6):
    cols = []
    for j in range(z.size):
        e = np.zeros(z.size)
        e[j] = h
        cols.append((f(z + e) - f(z - e)) / (2 * h))
    return np.column_stack(cols)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)
