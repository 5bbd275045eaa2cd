"""Measurement function and the noisy grid simulator.

A measurement vector has length ``m = 2 (|L| + N - 1)`` and the layout
``[x ; (p_kl, q_kl) for every line in canonical order]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import line_flows, line_flows_jacobian
from .powerflow import solve_powerflow


def measurement_size(net):
    return net.n_states + 2 * net.n_lines


def measurement_function(net, x, y):
    return np.concatenate([np.asarray(x), line_flows(net, x, y)])


def measurement_jacobians(net, x, y):
    """``(dM/dx, dM/dy)``; the state block is the identity, the prior-free
    parameter block of the state rows is zero."""
    fx, fy = line_flows_jacobian(net, x, y)
    n = net.n_states
    dtype = fx.dtype
    Mx = np.vstack([np.eye(n, dtype=dtype), fx])
    My = np.vstack([np.zeros((n, net.n_params), dtype=dtype), fy])
    return Mx, My


@dataclass
class NoiseModel:
    """Zero-mean Gaussian measurement noise.

    Draw number ``k`` of a model with seed ``s`` uses a PCG64 generator seeded
    with ``SeedSequence([s, k])`` and transforms standard normals by the
    Cholesky factor of ``covariance``; it is therefore a pure function of
    ``(s, k)``.
    """

    covariance: np.ndarray
    seed: int = 0
    enabled: bool = True

    def __post_init__(self):
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if not np.allclose(self.covariance, self.covariance.T, rtol=0, atol=1e-14):
            raise ValueError("noise covariance must be symmetric")
        # raises LinAlgError when not positive definite
        self.chol = np.linalg.cholesky(self.covariance)

    @classmethod
    def isotropic(cls, m, variance=1e-4, seed=0, enabled=True):
        return cls(variance * np.eye(m), seed=seed, enabled=enabled)

    @property
    def precision(self):
        return np.linalg.inv(self.covariance)

    def sample(self, draw_index):
        m = self.covariance.shape[0]
        if not self.enabled:
            return np.zeros(m)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(self.seed), int(draw_index)])))
        return self.chol @ rng.standard_normal(m)


def simulate_measurement(net, y_true, u, noise, x_init=None, draw_index=0):
    """Noisy measurement of the grid operated at input ``u``.

    Returns ``(eta, x_true)`` where ``x_true`` is the power-flow state of the
    true grid.
    """
    sol = solve_powerflow(net, y_true, u, x_init=x_init)
    x_true = sol.state
    eta = measurement_function(net, x_true, y_true) + noise.sample(draw_index)
    return eta, x_true


class GridSimulator:
    """Stand-in for the physical grid: every call is one snapshot.

    Holds the draw counter and the last true state (used to warm start the
    next power-flow solve).
    """

    def __init__(self, net, y_true, noise):
        self.net = net
        self.y_true = np.asarray(y_true, dtype=float)
        self.noise = noise
        self.draws = 0
        self._x = None

    def measure(self, u):
        eta, self._x = simulate_measurement(self.net, self.y_true, u, self.noise,
                                            x_init=self._x, draw_index=self.draws)
        self.draws += 1
        return eta, self._x
