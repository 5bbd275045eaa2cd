"""Maximum-likelihood admittance estimation and Fisher information.

The estimate solves

    min_{x,y}  1/2 |M(x,y) - eta|^2_{Sigma^-1} + 1/2 |y - y_prior|^2_{Sigma0^-1}
    s.t.       P(x,y) = S(u)

with an equality-constrained Gauss-Newton method.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NonConvergence, SingularJacobian, SingularKktSystem
from .grid import jacobians_stack, net_supply, power_residuum_all, residuum_jacobians
from .measurement import measurement_function, measurement_jacobians
from .powerflow import lu_factor

log = logging.getLogger(__name__)


def spd_inverse(A):
    """Inverse of a symmetric positive definite matrix via Cholesky."""
    c = sla.cho_factor(A, lower=True, check_finite=False)
    inv = sla.cho_solve(c, np.eye(A.shape[0]), check_finite=False)
    return 0.5 * (inv + inv.T)


@dataclass
class Prior:
    y_minus: np.ndarray
    sigma0: np.ndarray

    def __post_init__(self):
        self.y_minus = np.asarray(self.y_minus, dtype=float)
        self.sigma0 = np.asarray(self.sigma0, dtype=float)
        n = self.y_minus.size
        if self.sigma0.shape != (n, n):
            raise ValueError(f"prior covariance must be {n}x{n}")
        np.linalg.cholesky(self.sigma0)

    @property
    def precision(self):
        return spd_inverse(self.sigma0)


@dataclass
class MleSolution:
    x: np.ndarray
    y: np.ndarray
    objective: float
    kkt_residual: float
    constraint_residual: float
    iterations: int
    multipliers: np.ndarray


def mle_objective(net, x, y, eta, prior, precision, prior_precision=None):
    if prior_precision is None:
        prior_precision = prior.precision
    e = measurement_function(net, x, y) - eta
    d = y - prior.y_minus
    return 0.5 * e @ precision @ e + 0.5 * d @ prior_precision @ d


def mle_gradient(net, x, y, eta, prior, precision, prior_precision=None):
    """Gradient of :func:`mle_objective` with respect to ``(x, y)``."""
    if prior_precision is None:
        prior_precision = prior.precision
    e = measurement_function(net, x, y) - eta
    Mx, My = measurement_jacobians(net, x, y)
    We = precision @ e
    return np.concatenate([Mx.T @ We, My.T @ We + prior_precision @ (y - prior.y_minus)])


def kkt_residual(net, x, y, u, eta, prior, precision, prior_precision=None):
    """Stationarity residual with least-squares multipliers.

    Because ``dP/dx`` is square and invertible the multipliers are unique and
    the residual reduces to the gradient of the objective on the constraint
    manifold. Returns ``(residual_vector, multipliers)``.
    """
    grad = mle_gradient(net, x, y, eta, prior, precision, prior_precision)
    n = net.n_states
    Px, Py = residuum_jacobians(net, x, y)
    lam = -sla.lu_solve(lu_factor(Px.T), grad[:n], check_finite=False)
    res = grad.copy()
    res[:n] += Px.T @ lam
    res[n:] += Py.T @ lam
    return res, lam


def linear_initial_guess(net, eta, u, prior, sigma):
    """Starting point ``(x0, y0)`` that does not depend on earlier estimates.

    The state is taken from its direct measurement. With ``x`` frozen, line
    flows and the power residuum are linear in ``y``, so ``y0`` solves a
    regularized linear least-squares problem in which the power balance rows
    carry the flow-measurement weight.
    """
    n = net.n_states
    eta = np.asarray(eta, dtype=float)
    x0 = eta[:n].copy()
    x0[0::2] = np.maximum(x0[0::2], 1e-3)
    probe = np.zeros(net.n_params)
    _, Fy = measurement_jacobians(net, x0, probe)
    Fy = Fy[n:]
    _, Py = residuum_jacobians(net, x0, probe)
    W = spd_inverse(np.asarray(sigma, dtype=float)[n:, n:])
    w_bal = np.mean(np.diag(W))
    W0 = prior.precision
    H = Fy.T @ W @ Fy + w_bal * Py.T @ Py + W0
    rhs = Fy.T @ W @ eta[n:] + w_bal * Py.T @ net_supply(net, u) + W0 @ prior.y_minus
    try:
        y0 = sla.solve(H, rhs, assume_a="pos", check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        y0 = prior.y_minus.copy()
    return x0, y0


def solve_mle(net, eta, u, prior, sigma, init=None, tol=1e-8, max_iter=100,
              constraint_tol=1e-8, measurement_weight=1.0):
    """Gauss-Newton solve of the constrained maximum-likelihood problem.

    ``init`` is an ``(x0, y0)`` pair; by default the flat state and the prior
    mean. ``tol`` bounds the stationarity residual, scaled by ``1 + |g0|``
    where ``g0`` is the objective gradient at the start. ``measurement_weight``
    multiplies the measurement precision (0 turns the data term off).
    """
    n, p = net.n_states, net.n_params
    eta = np.asarray(eta, dtype=float)
    W = measurement_weight * spd_inverse(np.asarray(sigma, dtype=float)) if measurement_weight \
        else np.zeros((eta.size, eta.size))
    W0 = prior.precision
    S = net_supply(net, u)
    if init is None:
        x, y = net.flat_state(), prior.y_minus.copy()
    else:
        x, y = (np.array(a, dtype=float) for a in init)

    def merit_parts(x, y):
        e = measurement_function(net, x, y) - eta
        d = y - prior.y_minus
        f = 0.5 * e @ W @ e + 0.5 * d @ W0 @ d
        c = power_residuum_all(net, x, y) - S
        return f, c, e

    f, c, e = merit_parts(x, y)
    scale = None
    mu = 0.0
    for it in range(max_iter + 1):
        Mx, My = measurement_jacobians(net, x, y)
        Px, Py = residuum_jacobians(net, x, y)
        J = np.hstack([Mx, My])
        A = np.hstack([Px, Py])
        grad = J.T @ (W @ e)
        grad[n:] += W0 @ (y - prior.y_minus)
        try:
            lam = -sla.lu_solve(lu_factor(Px.T), grad[:n], check_finite=False)
        except Exception as exc:
            raise SingularKktSystem(f"constraint Jacobian singular at iteration {it}") from exc
        stat = grad + A.T @ lam
        if scale is None:
            scale = 1.0 + np.max(np.abs(grad))
        kkt = np.max(np.abs(stat))
        cres = np.max(np.abs(c))
        if kkt <= tol * scale and cres <= constraint_tol:
            return MleSolution(x, y, float(f), float(kkt), float(cres), it, lam)
        if it == max_iter:
            break

        H = J.T @ W @ J
        H[n:, n:] += W0
        K = np.block([[H, A.T], [A, np.zeros((n, n))]])
        rhs = -np.concatenate([grad, c])
        try:
            lu = sla.lu_factor(K, check_finite=False)
            if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) == 0:
                raise np.linalg.LinAlgError
            sol = sla.lu_solve(lu, rhs, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SingularKktSystem(f"KKT system singular at iteration {it}") from exc
        dz, lam_new = sol[:n + p], sol[n + p:]

        # l1 merit with penalty above the multiplier magnitude
        mu = max(mu, 1.5 * np.max(np.abs(lam_new)) + 1.0)
        phi = f + mu * np.sum(np.abs(c))
        slope = grad @ dz - mu * np.sum(np.abs(c))
        step = 1.0
        for _ in range(40):
            xn, yn = x + step * dz[:n], y + step * dz[n:]
            if np.all(xn[0::2] > 0):
                fn, cn, en = merit_parts(xn, yn)
                if fn + mu * np.sum(np.abs(cn)) <= phi + 1e-4 * step * min(slope, 0.0):
                    break
            step *= 0.5
        else:
            if np.max(np.abs(dz)) <= 1e-12 * (1 + np.max(np.abs(np.concatenate([x, y])))):
                # at the limit of floating-point resolution
                return MleSolution(x, y, float(f), float(kkt), float(cres), it, lam)
            raise NonConvergence(f"line search failed at iteration {it}", it, kkt)
        x, y, f, c, e = xn, yn, fn, cn, en
    raise NonConvergence(f"Gauss-Newton did not converge in {max_iter} iterations "
                         f"(stationarity {kkt:.3e}, constraint {cres:.3e})", max_iter, kkt)


@dataclass
class FisherInfo:
    matrix: np.ndarray
    covariance: np.ndarray
    total_variance: float


def sensitivity_matrix(net, x, y):
    """``T`` of shape ``(2|L|, m)``: transpose of ``dM/dy + dM/dx dx*/dy``."""
    return sensitivity_matrices(net, np.asarray(x)[None], y)[0]


def sensitivity_matrices(net, X, y):
    """:func:`sensitivity_matrix` for a stack of states, shape ``(B, 2|L|, m)``."""
    Px, Py, Fx, Fy = jacobians_stack(net, X, y)
    dxdy = -np.linalg.solve(Px[:, 2:, 2:], Py[:, 2:])
    n = net.n_states
    T = np.empty((X.shape[0], net.n_params, n + Fx.shape[1]), dtype=dxdy.dtype)
    T[:, :, :n] = np.swapaxes(dxdy, 1, 2)
    T[:, :, n:] = np.swapaxes(Fy + Fx @ dxdy, 1, 2)
    return T


def fisher_matrix(T, precision, prior_precision):
    F = prior_precision + T @ precision @ T.T
    return 0.5 * (F + F.T)


def fisher_information(net, x, y, u, sigma, sigma0, T=None, precision=None,
                       prior_precision=None):
    """Fisher information of the admittance estimate at ``(x, y)``.

    ``T`` may be passed to override the sensitivity matrix. Precisions can be
    supplied to avoid refactorizing ``sigma``/``sigma0``.
    """
    if T is None:
        try:
            T = sensitivity_matrix(net, x, y)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian("state Jacobian singular in Fisher information") from exc
    W = spd_inverse(sigma) if precision is None else precision
    W0 = spd_inverse(sigma0) if prior_precision is None else prior_precision
    F = fisher_matrix(T, W, W0)
    cov = spd_inverse(F)
    return FisherInfo(F, cov, float(np.trace(cov)))


def mre(y, y_true):
    """Mean relative errors ``(MRE_g, MRE_b)`` of a parameter vector."""
    y, y_true = np.asarray(y), np.asarray(y_true)
    if np.any(y_true == 0):
        raise ZeroDivisionError("relative error undefined for zero true parameters")
    rel = np.abs(y - y_true) / np.abs(y_true)
    return float(rel[0::2].mean()), float(rel[1::2].mean())


def relative_errors(y, y_true):
    y, y_true = np.asarray(y), np.asarray(y_true)
    return np.abs(y - y_true) / np.abs(y_true)
