from dataclasses import replace

import numpy as np
import pytest

from oedgrid.estimator import fisher_information, spd_inverse
from oedgrid.loop import RunConfig, compare, run


@pytest.fixture(scope="module")
def cfg(case5):
    return RunConfig(model=case5, seed=4, max_iters=6)


@pytest.fixture(scope="module")
def result(cfg):
    return run(cfg)


def test_huge_eps_stops_after_one_iteration(cfg):
    res = run(replace(cfg, eps=1e12))
    assert len(res.records) == 1
    assert res.reason == "converged"


def test_runs_are_deterministic(cfg, result):
    again = run(cfg)
    assert len(again.records) == len(result.records)
    for a, b in zip(again.records, result.records):
        assert np.array_equal(a.u, b.u)
        assert np.array_equal(a.eta, b.eta)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.fisher, b.fisher)


def test_posterior_becomes_next_prior(cfg, result):
    net = cfg.network
    sigma = cfg.noise_variance * np.eye(20)
    for prev, cur in zip(result.records, result.records[1:]):
        s0 = prev.covariance
        info = fisher_information(net, cur.x, cur.y, cur.u, sigma, s0,
                                  prior_precision=spd_inverse(s0))
        assert np.array_equal(info.matrix, cur.fisher)
        assert np.allclose(prev.covariance @ prev.fisher, np.eye(net.n_params), atol=1e-8)


def test_information_only_grows(result):
    tr = result.series("total_variance")
    assert np.all(np.diff(tr) <= 1e-12 * tr[:-1])
    for prev, cur in zip(result.records, result.records[1:]):
        assert np.linalg.eigvalsh(cur.fisher - prev.fisher).min() >= -1e-8 * np.abs(cur.fisher).max()


def test_demand_is_left_alone(case5, cfg, result):
    net = cfg.network
    assert np.array_equal(net.p_demand, case5.network.p_demand)
    with pytest.raises(ValueError):
        net.p_demand[0] = 1.0


def test_inputs_stay_feasible(cfg, result):
    b = cfg.network.bounds
    for r in result.records:
        assert np.all(r.u >= b.u_lo - 1e-12) and np.all(r.u <= b.u_hi + 1e-12)


def test_constant_policy_repeats_first_input(cfg, result):
    res = run(replace(cfg, policy="constant", max_iters=4))
    assert np.array_equal(res.records[0].u, result.records[0].u)
    for r in res.records[1:]:
        assert np.array_equal(r.u, res.records[0].u)


def test_identical_policies_compare_identically(cfg):
    c = replace(cfg, max_iters=3)
    cmp = compare(c, c)
    for a, b in zip(cmp.oed.records, cmp.baseline.records):
        assert np.array_equal(a.y, b.y) and np.array_equal(a.u, b.u)
    s = cmp.summary()
    assert s["oed_trace"] == s["const_trace"] and s["crossover"] == 1


def test_compare_rejects_unpaired_configs(cfg):
    with pytest.raises(ValueError):
        compare(cfg, replace(cfg, seed=cfg.seed + 1))
    with pytest.raises(ValueError):
        compare(cfg, replace(cfg, u_init=cfg.initial_input() * 0.9))


def test_config_validation(case5):
    for bad in ({"policy": "random"}, {"eps": 0.0}, {"max_iters": 0}, {"oed_starts": 0}):
        with pytest.raises(ValueError):
            RunConfig(model=case5, **bad)
