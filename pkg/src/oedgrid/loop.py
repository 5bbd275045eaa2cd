"""Repeated design / measure / estimate loop and the constant-input baseline."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .casefile import CaseModel, load_case, model_to_json
from .errors import NonConvergence, NumericalError
from .estimator import (Prior, fisher_information, linear_initial_guess, mre, solve_mle,
                        spd_inverse)
from .grid import pack_params
from .measurement import GridSimulator, NoiseModel, measurement_size
from .oed import OedConfig, baseline_input, oed_objective, solve_oed

log = logging.getLogger(__name__)

POLICIES = ("oed", "constant")


@dataclass
class RunConfig:
    """Settings of one estimation run.

    ``y_init`` defaults to ``g = g_init, b = b_init`` on every line and
    ``u_init`` to the dataset generator set points. The design step uses
    ``oed_starts`` starting points during the first ``multistart_iters``
    iterations and afterwards keeps the previous input unless moving improves
    the design objective by more than the relative ``settle_margin``.
    """

    model: CaseModel
    policy: str = "oed"
    seed: int = 0
    noise_variance: float = 1e-4
    rho: float = 8e-4
    eps: float = 1e-3
    max_iters: int = 100
    sigma0_scale: float = 1e4
    g_init: float = 1.0
    b_init: float = -10.0
    y_init: np.ndarray | None = None
    u_init: np.ndarray | None = None
    y_true: np.ndarray | None = None
    bounds: object = None
    noise_enabled: bool = True
    oed_starts: int = 4
    multistart_iters: int = 30
    settle_margin: float = 5e-2

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.oed_starts < 1 or self.multistart_iters < 0 or self.settle_margin < 0:
            raise ValueError("invalid design search settings")

    @property
    def network(self):
        net = self.model.network
        return net if self.bounds is None else net.with_bounds(self.bounds)

    def truth(self):
        return self.model.y_true if self.y_true is None else np.asarray(self.y_true, dtype=float)

    def initial_params(self):
        if self.y_init is not None:
            return np.asarray(self.y_init, dtype=float)
        L = self.model.network.n_lines
        return pack_params(np.full(L, self.g_init), np.full(L, self.b_init))

    def initial_input(self):
        return np.asarray(self.model.u_dataset if self.u_init is None else self.u_init, dtype=float)


@dataclass
class EstimateRecord:
    iter: int
    u: np.ndarray
    eta: np.ndarray
    x: np.ndarray
    y: np.ndarray
    fisher: np.ndarray
    covariance: np.ndarray
    total_variance: float
    mre_g: float
    mre_b: float
    oed_objective: float
    wall_time: float
    notes: str = ""


@dataclass
class RunResult:
    config: RunConfig
    records: list = field(default_factory=list)
    reason: str = ""

    @property
    def final(self):
        return self.records[-1]

    def series(self, name):
        return np.array([getattr(r, name) for r in self.records])


def _design(cfg, k, net, y_prior, sigma, sigma0, u_prior, x_hint):
    """Step 1. Returns ``(u, oed_objective, note)``.

    Extra starting points are only spent in the first ``multistart_iters``
    iterations. Later designs start from the previous input and only leave
    it for a relative objective gain above ``settle_margin``.
    """
    explore = k <= cfg.multistart_iters
    ocfg = OedConfig(rho=cfg.rho, bounds=net.bounds, n_starts=cfg.oed_starts if explore else 1,
                     stay_margin=0.0 if explore else cfg.settle_margin)
    try:
        sol = solve_oed(net, y_prior, sigma, sigma0, u_prior, ocfg, x_init=x_hint,
                        allow_infeasible_start=True)
        return sol.u, sol.objective, "" if sol.converged else "design-not-converged"
    except NumericalError as exc:
        log.warning("experiment design impossible at the current estimate (%s); "
                    "keeping the previous input", exc)
        return np.array(u_prior, dtype=float), np.nan, "design-skipped"


def _estimate(net, eta, u, prior, sigma, warm):
    """Step 3 from several starting points; the lowest objective wins.

    Starts are the warm start (or the flat state and prior mean in the first
    iteration) and a data-driven linear guess. ``None`` when every start
    fails.
    """
    starts = [warm, linear_initial_guess(net, eta, u, prior, sigma)]
    best = None
    for init in starts:
        try:
            sol = solve_mle(net, eta, u, prior, sigma, init=init)
        except NumericalError as exc:
            log.info("estimation start failed (%s)", exc)
            continue
        if best is None or sol.objective < best.objective:
            best = sol
    if best is None and warm is not None:
        try:
            best = solve_mle(net, eta, u, prior, sigma, init=None)
        except NumericalError as exc:
            log.warning("estimation failed from every start (%s)", exc)
    return best


def run(cfg):
    """Execute the estimation loop; returns a :class:`RunResult`."""
    net = cfg.network
    y_true = cfg.truth()
    m = measurement_size(net)
    noise = NoiseModel.isotropic(m, cfg.noise_variance, seed=cfg.seed, enabled=cfg.noise_enabled)
    sigma = noise.covariance
    sim = GridSimulator(net, y_true, noise)

    y_prior = cfg.initial_params()
    sigma0 = cfg.sigma0_scale * np.eye(net.n_params)
    u_prior = cfg.initial_input()
    result = RunResult(cfg)
    x_est = y_est = None
    u_first = None

    for k in range(1, cfg.max_iters + 1):
        t0 = time.perf_counter()
        notes = []
        try:
            if cfg.policy == "oed" or u_first is None:
                u, obj, note = _design(cfg, k, net, y_prior, sigma, sigma0, u_prior, x_est)
                if u_first is None:
                    u_first = baseline_input(u)
            else:
                u, note = baseline_input(u_first), ""
                try:
                    obj = oed_objective(net, _state_or_none(net, y_prior, u, x_est), u, y_prior,
                                        sigma, sigma0, cfg.rho, u_prior)
                except (NumericalError, np.linalg.LinAlgError):
                    obj = np.nan
            if note:
                notes.append(note)

            eta, _ = sim.measure(u)

            prior = Prior(y_prior, sigma0)
            warm = None if x_est is None else (x_est, y_est)
            sol = _estimate(net, eta, u, prior, sigma, warm)
            if sol is None:
                if x_est is None:
                    raise NonConvergence("estimation failed in the first iteration")
                notes.append("estimate-reused")
                x, y = x_est, y_est
            else:
                x, y = sol.x, sol.y

            info = fisher_information(net, x, y, u, sigma, sigma0,
                                      prior_precision=spd_inverse(sigma0))
        except NumericalError as exc:
            exc.args = (f"iteration {k}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        g_err, b_err = mre(y, y_true)
        result.records.append(EstimateRecord(
            iter=k, u=np.array(u), eta=eta, x=x, y=y, fisher=info.matrix,
            covariance=info.covariance, total_variance=info.total_variance,
            mre_g=g_err, mre_b=b_err, oed_objective=float(obj),
            wall_time=time.perf_counter() - t0, notes=",".join(notes)))
        log.debug("iter %d: trace %.4e mre_g %.4f mre_b %.4f", k, info.total_variance, g_err, b_err)

        if info.total_variance < cfg.eps:
            result.reason = "converged"
            return result
        y_prior, sigma0, u_prior = y, info.covariance, u
        x_est, y_est = x, y
    result.reason = "max_iters"
    return result


def _state_or_none(net, y, u, x_hint):
    from .powerflow import solve_powerflow
    try:
        return solve_powerflow(net, y, u, x_init=x_hint).state
    except NumericalError:
        return solve_powerflow(net, y, u).state


@dataclass
class Comparison:
    oed: RunResult
    baseline: RunResult

    def summary(self):
        a, b = self.oed, self.baseline
        ta, tb = a.series("total_variance"), b.series("total_variance")
        n = min(len(ta), len(tb))
        crossover = None
        for i in range(n):
            if np.all(ta[i:n] <= tb[i:n]):
                crossover = i + 1
                break
        return {
            "seed": a.config.seed,
            "iters": n,
            "oed_mre_g": a.final.mre_g,
            "oed_mre_b": a.final.mre_b,
            "oed_trace": a.final.total_variance,
            "const_mre_g": b.final.mre_g,
            "const_mre_b": b.final.mre_b,
            "const_trace": b.final.total_variance,
            "crossover": crossover,
        }


def compare(cfg_oed, cfg_baseline):
    """Paired runs of two policies on identical data and noise draws."""
    fields_ = ("seed", "noise_variance", "rho", "eps", "max_iters", "sigma0_scale",
               "noise_enabled")
    for f in fields_:
        if getattr(cfg_oed, f) != getattr(cfg_baseline, f):
            raise ValueError(f"paired configs differ in {f}")
    if cfg_oed.model is not cfg_baseline.model and \
            model_to_json(cfg_oed.model) != model_to_json(cfg_baseline.model):
        raise ValueError("paired configs use different networks")
    for getter in ("truth", "initial_params", "initial_input"):
        if not np.array_equal(getattr(cfg_oed, getter)(), getattr(cfg_baseline, getter)()):
            raise ValueError(f"paired configs differ in {getter}")
    return Comparison(run(cfg_oed), run(cfg_baseline))


def compare_seeds(cfg, seeds, workers=1):
    """Paired comparisons for several seeds, returned in seed order."""
    def one(seed):
        return compare(replace(cfg, seed=seed, policy="oed"),
                       replace(cfg, seed=seed, policy="constant"))
    if workers <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(one, seeds))


def default_config(path=None, slack_box="wide", **kw):
    return RunConfig(model=load_case(path, slack_box=slack_box), **kw)
