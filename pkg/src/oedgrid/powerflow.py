"""Newton solver for the power-flow equations ``P(x, y) = S(u)``."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NonConvergence, SingularJacobian
from .grid import net_supply, power_residuum_all, residuum_jacobians, supply_jacobian

log = logging.getLogger(__name__)


@dataclass
class PowerflowSolution:
    state: np.ndarray
    residual_norm: float
    iterations: int
    jac_P_x: np.ndarray
    residual_history: list


def lu_factor(A):
    """LU factorization that raises :class:`SingularJacobian` on failure."""
    if not np.all(np.isfinite(A)):
        raise SingularJacobian("non-finite entries in Jacobian")
    lu, piv = sla.lu_factor(A, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.min() <= 1e-13 * max(d.max(), 1.0):
        raise SingularJacobian(f"Jacobian is numerically singular (min pivot {d.min():.3e})")
    return lu, piv


def solve_powerflow(net, y, u, x_init=None, tol=1e-10, max_iter=50, max_halvings=10):
    """Solve the power-flow equations by Newton's method.

    Full Newton steps are tried first; if a step does not reduce the
    infinity norm of the mismatch it is halved up to ``max_halvings`` times.
    """
    x = net.flat_state() if x_init is None else np.array(x_init, dtype=float)
    if np.any(x[0::2] <= 0):
        raise ValueError("initial voltage magnitudes must be positive")
    S = net_supply(net, u)

    def mismatch(z):
        return power_residuum_all(net, z, y) - S

    F = mismatch(x)
    r = np.max(np.abs(F))
    history = [r]
    for it in range(max_iter + 1):
        if r <= tol:
            Jx, _ = residuum_jacobians(net, x, y)
            return PowerflowSolution(x, float(r), it, Jx, history)
        if it == max_iter:
            break
        Jx, _ = residuum_jacobians(net, x, y)
        dx = sla.lu_solve(lu_factor(Jx), -F, check_finite=False)
        step = 1.0
        for _ in range(max_halvings + 1):
            x_new = x + step * dx
            if np.all(x_new[0::2] > 0):
                F_new = mismatch(x_new)
                r_new = np.max(np.abs(F_new))
                if r_new < r:
                    break
            step *= 0.5
        else:
            # no decrease found; accept the smallest step so the iteration
            # limit decides
            if not np.all(x_new[0::2] > 0):
                raise NonConvergence("Newton step leaves the positive-voltage region",
                                     it + 1, r)
        x, F, r = x_new, F_new, r_new
        history.append(r)
        if not np.isfinite(r):
            break
    raise NonConvergence(f"power flow did not converge in {max_iter} iterations "
                         f"(mismatch {r:.3e})", max_iter, r)


def state_sensitivity(net, solution, y, u=None):
    """Implicit sensitivity ``dx*/dy = -(dP/dx)^{-1} dP/dy`` at a solved state."""
    x = solution.state if isinstance(solution, PowerflowSolution) else np.asarray(solution)
    Jx, Jy = residuum_jacobians(net, x, y)
    return -sla.lu_solve(lu_factor(Jx), Jy, check_finite=False)


def input_sensitivity(net, x, y):
    """Implicit sensitivity ``dx*/du = (dP/dx)^{-1} dS/du``."""
    Jx, _ = residuum_jacobians(net, x, y)
    return sla.lu_solve(lu_factor(Jx), supply_jacobian(net), check_finite=False)
