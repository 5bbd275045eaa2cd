"""A-optimal design of generator set points.

The design problem is solved in the reduced space of the inputs ``u``: the
state is eliminated through the power-flow solve ``x = x*(y_prior, u)`` and
the remaining constraints (state box, slack-generator box) become smooth
nonlinear inequalities in ``u``.

Gradients of the trace criterion use ``dTr(F^-1) = -Tr(F^-1 dF F^-1)``; the
directional derivatives of the sensitivity matrix ``T`` along ``dx*/du`` are
taken by complex-step differentiation, which is exact to rounding.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, nnls
from scipy.stats import qmc

from .errors import InfeasibleStart, NumericalError, SingularJacobian
from .estimator import fisher_matrix, sensitivity_matrices, sensitivity_matrix, spd_inverse
from .grid import slack_power, slack_power_jacobian
from .powerflow import input_sensitivity, solve_powerflow

log = logging.getLogger(__name__)

_CSTEP = 1e-30


@dataclass
class OedConfig:
    rho: float = 8e-4
    bounds: object = None  # Bounds; the network's own bounds when None
    kkt_tol: float = 1e-6
    max_iter: int = 200
    gradient: str = "analytic"  # or "fd"
    feas_tol: float = 1e-8
    n_starts: int = 1
    # relative improvement an extra start needs to replace the warm-start result
    switch_margin: float = 0.02
    # relative improvement any result needs to replace u_prior itself
    stay_margin: float = 0.0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.switch_margin < 0 or self.stay_margin < 0:
            raise ValueError("margins must be nonnegative")
        if self.gradient not in ("analytic", "fd"):
            raise ValueError("gradient must be 'analytic' or 'fd'")


@dataclass
class OedSolution:
    u: np.ndarray
    x: np.ndarray
    objective: float
    kkt_residual: float
    converged: bool = True
    iterations: int = 0
    message: str = ""


def total_variance(net, x, y, precision, prior_precision, T=None):
    if T is None:
        T = sensitivity_matrix(net, x, y)
    F = fisher_matrix(T, precision, prior_precision)
    return float(np.trace(spd_inverse(F)))


def oed_objective(net, x, u, y_prior, sigma, sigma0, rho, u_prior, T=None):
    """Trace of the inverse Fisher information plus the input regularizer."""
    W, W0 = spd_inverse(sigma), spd_inverse(sigma0)
    try:
        tr = total_variance(net, x, y_prior, W, W0, T)
    except np.linalg.LinAlgError as exc:
        raise SingularJacobian("Fisher information undefined at this point") from exc
    d = np.asarray(u) - np.asarray(u_prior)
    return tr + rho * float(d @ d)


def trace_gradient_x(net, x, y, precision, prior_precision, directions):
    """Derivatives of ``Tr(F(x)^-1)`` along the columns of ``directions``.

    ``dT`` comes from one batched complex-step evaluation; with
    ``dF = dT W T' + T W dT'`` the derivative is ``-2 <dT, F^-2 T W>``.
    """
    X = np.asarray(x)[None, :] + 1j * _CSTEP * np.asarray(directions).T
    Tc = sensitivity_matrices(net, X, y)
    T = Tc[0].real
    dT = Tc.imag / _CSTEP
    Finv = spd_inverse(fisher_matrix(T, precision, prior_precision))
    G = Finv @ Finv @ T @ precision
    return float(np.trace(Finv)), -2.0 * np.einsum("bij,ij->b", dT, G)


class ReducedProblem:
    """The design problem as a function of ``u`` alone.

    Power-flow solves are warm started from the most recently solved state,
    then from the state of the reference input, so that nearby inputs stay
    on the same Newton branch.
    """

    def __init__(self, net, y_prior, sigma, sigma0, u_prior, cfg, x_ref=None):
        self.net = net
        self.y = np.asarray(y_prior, dtype=float)
        self.W = spd_inverse(np.asarray(sigma, dtype=float))
        self.W0 = spd_inverse(np.asarray(sigma0, dtype=float))
        self.u_prior = np.asarray(u_prior, dtype=float)
        self.cfg = cfg
        self.bounds = cfg.bounds if cfg.bounds is not None else net.bounds
        self.x_ref = x_ref
        self._last = x_ref
        self._cache = {}

    def state(self, u):
        key = np.asarray(u, dtype=float).tobytes()
        if key not in self._cache:
            sol = None
            for init in (self._last, self.x_ref, None):
                try:
                    sol = solve_powerflow(self.net, self.y, u, x_init=init)
                    break
                except NumericalError:
                    if init is None:
                        raise
            if len(self._cache) > 256:
                self._cache.clear()
            self._cache[key] = self._last = sol.state
        return self._cache[key]

    def sensitivity(self, u):
        """``dx*/du`` at ``u`` (cached alongside the state)."""
        key = ("du", np.asarray(u, dtype=float).tobytes())
        if key not in self._cache:
            self._cache[key] = input_sensitivity(self.net, self.state(u), self.y)
        return self._cache[key]

    def objective(self, u):
        x = self.state(u)
        d = u - self.u_prior
        return total_variance(self.net, x, self.y, self.W, self.W0) + self.cfg.rho * float(d @ d)

    def gradient(self, u):
        if self.cfg.gradient == "fd":
            return self.fd_gradient(u)
        x = self.state(u)
        _, g = trace_gradient_x(self.net, x, self.y, self.W, self.W0, self.sensitivity(u))
        return g + 2 * self.cfg.rho * (u - self.u_prior)

    def fd_gradient(self, u, h=1e-6):
        g = np.empty(u.size)
        for j in range(u.size):
            e = np.zeros(u.size)
            e[j] = h
            g[j] = (self.objective(u + e) - self.objective(u - e)) / (2 * h)
        return g

    def constraints(self, u):
        """Inequalities ``c(u) >= 0`` for the state box and the slack box."""
        x = self.state(u)
        s = slack_power(self.net, x, self.y)
        b = self.bounds
        return np.concatenate([x - b.x_lo, b.x_hi - x, s - b.slack_lo, b.slack_hi - s])

    def constraints_jacobian(self, u):
        x = self.state(u)
        dxdu = self.sensitivity(u)
        ds = slack_power_jacobian(self.net, x, self.y) @ dxdu
        return np.vstack([dxdu, -dxdu, ds, -ds])

    def violation(self, u):
        b = self.bounds
        cu = np.concatenate([u - b.u_lo, b.u_hi - u])
        return max(0.0, -min(self.constraints(u).min(), cu.min()))


def constraint_violation(net, u, y, bounds=None, x_init=None):
    """Largest violation of the design constraints at ``u`` (0 when feasible)."""
    prob = ReducedProblem(net, y, np.eye(1), np.eye(net.n_params), u,
                          OedConfig(bounds=bounds), x_ref=x_init)
    return prob.violation(np.asarray(u, dtype=float))


def _slsqp(prob, fun, jac, u0, maxiter, ftol):
    b = prob.bounds
    box = list(zip(b.u_lo, b.u_hi))
    cons = [{"type": "ineq", "fun": prob.constraints, "jac": prob.constraints_jacobian}]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return minimize(fun, u0, jac=jac, method="SLSQP", bounds=box, constraints=cons,
                        options={"maxiter": maxiter, "ftol": ftol})


def restore_feasibility(net, y, u_guess, bounds=None, max_iter=200, x_init=None):
    """Closest input to ``u_guess`` (least squares) satisfying the design constraints."""
    cfg = OedConfig(bounds=bounds)
    u_guess = np.clip(np.asarray(u_guess, dtype=float),
                      (bounds or net.bounds).u_lo, (bounds or net.bounds).u_hi)
    prob = ReducedProblem(net, y, np.eye(1), np.eye(net.n_params), u_guess, cfg, x_ref=x_init)
    if prob.violation(u_guess) <= cfg.feas_tol:
        return u_guess
    res = _slsqp(prob, lambda u: float((u - u_guess) @ (u - u_guess)),
                 lambda u: 2 * (u - u_guess), u_guess, max_iter, 1e-10)
    u = _tighten(prob, res.x)
    v = prob.violation(u)
    if v > cfg.feas_tol:
        raise InfeasibleStart(f"no feasible input found near the start (violation {v:.3e})")
    return u


def _tighten(prob, u):
    """Clip ``u`` into its box; SLSQP may overshoot bounds by rounding."""
    b = prob.bounds
    return np.clip(u, b.u_lo, b.u_hi)


def design_starts(bounds, n):
    """Deterministic extra starting points: a Halton sequence over the input box."""
    if n <= 0:
        return []
    d = bounds.u_lo.size
    pts = qmc.Halton(d, scramble=False).random(n + 1)[1:]
    return list(qmc.scale(pts, bounds.u_lo, bounds.u_hi))


def solve_oed(net, y_prior, sigma, sigma0, u_prior, cfg=None, x_init=None,
              allow_infeasible_start=False):
    """Solve the A-optimal design problem around the previous input ``u_prior``.

    The local solver is started from ``u_prior`` and from ``cfg.n_starts - 1``
    further points of the input box; the best feasible result wins.

    Raises :class:`InfeasibleStart` when ``u_prior`` violates the design
    constraints, unless ``allow_infeasible_start`` is set; the nearest
    feasible input then takes the place of ``u_prior`` as first start and
    reference point. When the optimizer stops early the best feasible iterate
    is returned with ``converged=False``.
    """
    cfg = cfg or OedConfig()
    u_prior = np.asarray(u_prior, dtype=float)
    prob = ReducedProblem(net, y_prior, sigma, sigma0, u_prior, cfg, x_ref=x_init)
    try:
        x0 = prob.state(u_prior)
    except NumericalError as exc:
        raise InfeasibleStart(f"power flow unsolvable at the previous input: {exc}") from exc
    prob.x_ref = x0
    v0 = prob.violation(u_prior)
    u_ref = u_prior
    if v0 > cfg.feas_tol:
        if not allow_infeasible_start:
            raise InfeasibleStart(f"previous input violates the design constraints by {v0:.3e}")
        # the nearest feasible input stands in for u_prior as reference point
        try:
            u_ref = restore_feasibility(net, y_prior, u_prior, prob.bounds, x_init=x0)
            v0 = prob.violation(u_ref)
        except NumericalError:
            pass
    f0 = prob.objective(u_ref)
    scale = max(abs(f0), 1e-12)
    best = {"u": u_ref.copy(), "f": f0 if v0 <= cfg.feas_tol else np.inf}

    def fun(u):
        f = prob.objective(u)
        if f < best["f"] and prob.violation(u) <= cfg.feas_tol:
            best.update(u=u.copy(), f=f)
        return f / scale

    def jac(u):
        return prob.gradient(u) / scale

    found = None
    nit_total, last_msg = 0, ""
    for i, start in enumerate([u_ref] + design_starts(prob.bounds, cfg.n_starts - 1)):
        try:
            res = _slsqp(prob, fun, jac, start, cfg.max_iter, cfg.kkt_tol * 1e-3)
        except NumericalError as exc:
            last_msg = str(exc)
            continue
        nit_total += res.nit
        last_msg = res.message
        u = _tighten(prob, res.x)
        try:
            if prob.violation(u) > cfg.feas_tol:
                continue
            f = prob.objective(u)
        except NumericalError:
            continue
        margin = 0.0 if found is None or found[4] > 0 else cfg.switch_margin * abs(found[1])
        if found is None or f < found[1] - margin:
            found = (u, f, bool(res.success), res.message, i)

    if found is None:
        if not np.isfinite(best["f"]):
            u = restore_feasibility(net, y_prior, u_prior, prob.bounds, x_init=x0)
            return solve_oed(net, y_prior, sigma, sigma0, u, cfg, x_init=x0)
        found = (best["u"], best["f"], False, last_msg, -1)
    u, f, ok, msg, _ = found
    if v0 <= cfg.feas_tol and f > f0 - cfg.stay_margin * abs(f0):
        # never worse than staying put
        u, f = u_ref.copy(), f0
    if not ok:
        log.warning("experiment design stopped early (%s); returning best feasible iterate", msg)
    x = prob.state(u)
    kkt = _kkt_estimate(prob, u)
    return OedSolution(u, x, float(f), kkt, ok, int(nit_total), str(msg))


def _kkt_estimate(prob, u):
    """Stationarity residual with nonnegative least-squares multipliers on the
    active constraints (scaled by the objective gradient magnitude)."""
    g = prob.gradient(u)
    c = prob.constraints(u)
    A = prob.constraints_jacobian(u)
    b = prob.bounds
    act = np.abs(c) <= 1e-6
    rows = [A[act]]
    eye = np.eye(u.size)
    rows.append(eye[u <= b.u_lo + 1e-9])
    rows.append(-eye[u >= b.u_hi - 1e-9])
    G = np.vstack(rows)
    if G.shape[0] == 0:
        r = g
    else:
        lam, _ = nnls(G.T, g)
        r = g - G.T @ lam
    return float(np.max(np.abs(r)) / (1.0 + np.max(np.abs(g))))


def baseline_input(first_solution):
    """Input used by the constant-excitation baseline: the first design, forever."""
    u = first_solution.u if isinstance(first_solution, OedSolution) else first_solution
    return np.array(u, dtype=float, copy=True)
