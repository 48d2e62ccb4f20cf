"""Tests for benchmark algorithms and the decoding-order oracle."""

import math

import numpy as np
import pytest
import scipy.optimize
import scipy.stats

from rsma_mec.baselines import (
    BaselineKind,
    fixed_power_solution,
    noma_maximin,
    oracle_order_search,
    propfair_power,
    random_allocation,
    sumrate_power,
    tdma_feasible,
    tdma_link_rates,
    tdma_maximin,
)
from rsma_mec.rate_core import make_allocation
from rsma_mec.scenario import Scenario, SystemConfig, generate_scenario
from rsma_mec.sca_power import bisection_mcor


def pinned_scenario(M=1, N=1, K=1, h=1.0, **overrides):
    """Hand-built gains with unit bandwidth/noise, P=3, F=2, T=1."""
    cfg = SystemConfig(
        num_servers=M, num_channels=N, num_devices=K, bandwidth=1.0,
        noise_psd=1.0, max_tx_power=3.0, server_frequency=2.0, deadline=1.0,
        **overrides,
    )
    gains = np.full((M, N, K), h) if np.isscalar(h) else np.asarray(h, float).reshape(M, N, K)
    return Scenario(config=cfg, gains=gains, device_pos=np.zeros((K, 2)),
                    server_pos=np.zeros((M, 2)), seed=0)


def single_group_alloc(K, M=1, N=1):
    return make_allocation(M, N, K, {k: 0 for k in range(K)}, {k: 0 for k in range(K)})


class TestBaselineKind:
    def test_closed_set_of_names(self):
        names = {k.value for k in BaselineKind}
        assert names == {
            "Proposed", "OracleOrder", "RSMA-Random-PropFair",
            "RSMA-Match-MaxMin", "RSMA-Match-SumRate", "RSMA-Random-SumRate",
            "NOMA-Match", "NOMA-Random", "TDMA-Match", "TDMA-Random",
        }

    def test_from_name_roundtrip(self):
        for kind in BaselineKind:
            assert BaselineKind.from_name(kind.value) is kind
        with pytest.raises(ValueError):
            BaselineKind.from_name("bogus")


class TestRandomAllocation:
    def test_validity_many_draws(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            assert random_allocation(rng, 3, 4, 5).is_valid()

    def test_channel_histogram_uniform(self):
        rng = np.random.default_rng(1)
        N, draws = 4, 4000
        counts = np.zeros(N)
        for _ in range(draws):
            alloc = random_allocation(rng, 2, N, 1)
            counts[alloc.channel_of(0)] += 1
        _, p = scipy.stats.chisquare(counts)
        assert p > 1e-3

    def test_deterministic(self):
        a = random_allocation(np.random.default_rng(7), 3, 3, 9)
        b = random_allocation(np.random.default_rng(7), 3, 3, 9)
        np.testing.assert_array_equal(a.alpha, b.alpha)
        np.testing.assert_array_equal(a.beta, b.beta)


class TestTdma:
    def test_single_device_analytic(self):
        # R = log2(1+3) = 2, F = 2, T = 1 -> theta* = R*F/(F+R) = 1
        sc = pinned_scenario()
        sol = tdma_maximin(sc, single_group_alloc(1))
        assert sol.extras["eta"] == pytest.approx(1.0, abs=3e-6)
        assert sol.mcor == pytest.approx(1.0, abs=3e-6)

    def test_two_identical_devices_halve(self):
        sc = pinned_scenario(K=2)
        sol = tdma_maximin(sc, single_group_alloc(2))
        assert sol.extras["eta"] == pytest.approx(0.5, abs=3e-6)

    def test_feasibility_boundary(self):
        sc = pinned_scenario(K=2)
        alloc = single_group_alloc(2)
        theta = tdma_maximin(sc, alloc).extras["eta"]
        eps = 1e-6  # bisection width (1e-6 of the upper bracket, which is 1)
        assert tdma_feasible(sc, alloc, theta)
        assert not tdma_feasible(sc, alloc, theta + 2 * eps)

    def test_zero_rate_device_gives_zero(self):
        sc = pinned_scenario(K=2, h=np.array([1.0, 0.0]))
        sol = tdma_maximin(sc, single_group_alloc(2))
        assert sol.extras["eta"] == 0.0
        assert sol.mcor == 0.0

    def test_minimal_times_agree_with_lp(self):
        # The closed-form feasibility test must make the same call as a
        # generic LP over the slot lengths on random instances.
        cfg = SystemConfig(num_servers=2, num_channels=2, num_devices=4)
        for seed in range(100):
            sc = generate_scenario(cfg, seed)
            rng = np.random.default_rng(seed)
            alloc = random_allocation(rng, 2, 2, 4)
            theta_star = tdma_maximin(sc, alloc).extras["eta"]
            for theta in (0.5 * theta_star, 0.99 * theta_star, 1.01 * theta_star + 2e-6):
                assert tdma_feasible(sc, alloc, theta) == _lp_feasible(sc, alloc, theta)


def _lp_feasible(scenario, allocation, theta):
    """TDMA feasibility via a generic LP over per-device slot lengths."""
    cfg = scenario.config
    T, F = cfg.deadline, cfg.server_frequency
    link = tdma_link_rates(scenario, allocation)
    if theta <= 0.0:
        return True
    if any(r <= 0.0 for r in link.values()):
        return False
    devs = sorted(link)
    idx = {k: j for j, k in enumerate(devs)}
    A_ub, b_ub = [], []
    for m in range(cfg.num_servers):
        members = [k for k in devs if allocation.server_of(k) == m]
        if not members:
            continue
        row_cpu = np.zeros(len(devs))
        row_air = np.zeros(len(devs))
        for k in members:
            row_cpu[idx[k]] = F + link[k]
            row_air[idx[k]] = 1.0
        A_ub.append(row_cpu)
        b_ub.append(F * T)
        A_ub.append(row_air)
        b_ub.append(T)
    bounds = [(theta * T / link[k], None) for k in devs]
    res = scipy.optimize.linprog(
        c=np.zeros(len(devs)), A_ub=np.array(A_ub), b_ub=np.array(b_ub),
        bounds=bounds, method="highs",
    )
    return res.status == 0


class TestNoma:
    def test_single_user_matches_two_part_split(self):
        # With one device, splitting the message cannot help.
        sc = generate_scenario(SystemConfig(num_servers=1, num_channels=1, num_devices=1), 3)
        alloc = single_group_alloc(1)
        rsma, _ = bisection_mcor(sc, alloc)
        noma, _ = noma_maximin(sc, alloc)
        assert noma.extras["eta"] == pytest.approx(rsma.extras["eta"], rel=1e-9)

    def test_descending_gain_order(self):
        cfg = SystemConfig(num_servers=1, num_channels=1, num_devices=4)
        for seed in range(10):
            sc = generate_scenario(cfg, seed)
            sol, _ = noma_maximin(sc, single_group_alloc(4))
            order = sol.orders[(0, 0)]
            assert all(part == 1 for _, part in order)
            gains = [sc.gains[0, 0, k] for k, _ in order]
            assert gains == sorted(gains, reverse=True)

    def test_is_single_message_restriction(self):
        # The same solver with one sub-message per device and the fixed
        # order rule must reproduce the NOMA output exactly.
        sc = generate_scenario(SystemConfig(num_servers=1, num_channels=1, num_devices=3), 5)
        alloc = single_group_alloc(3)
        noma, _ = noma_maximin(sc, alloc)
        restricted, _ = bisection_mcor(sc, alloc, parts=1, order_policy="fixed")
        assert noma.extras["eta"] == restricted.extras["eta"]
        np.testing.assert_array_equal(noma.powers, restricted.powers)
        assert noma.powers[:, 1].max() == 0.0

    def test_splitting_helps_on_average(self):
        cfg = SystemConfig(num_servers=1, num_channels=1, num_devices=3)
        diffs = []
        for seed in range(10):
            sc = generate_scenario(cfg, seed)
            alloc = single_group_alloc(3)
            rsma, _ = bisection_mcor(sc, alloc)
            noma, _ = noma_maximin(sc, alloc)
            diffs.append(rsma.extras["eta"] - noma.extras["eta"])
        assert np.mean(diffs) >= 0.0


class TestSumRate:
    def test_near_zero_gain_starves_weak_device(self):
        sc = pinned_scenario(K=2, h=np.array([1.0, 1e-12]))
        sol = fixed_power_solution(sc, single_group_alloc(2), sumrate_power)
        assert sol.mcor <= 1e-6 * sol.rates.max()
        assert sol.rates.max() > 0.5

    def test_dominates_maximin_sum(self):
        cfg = SystemConfig(num_servers=1, num_channels=1, num_devices=3)
        diffs = []
        for seed in range(8):
            sc = generate_scenario(cfg, seed)
            alloc = single_group_alloc(3)
            sr = fixed_power_solution(sc, alloc, sumrate_power)
            mm, _ = bisection_mcor(sc, alloc)
            diffs.append(sr.rates.sum() - mm.rates.sum())
        assert np.mean(diffs) >= 0.0


class TestPropFair:
    def test_identical_devices_balanced_rates(self):
        # A fixed SIC order breaks exact power symmetry, but the log utility
        # keeps both identical devices at comparable rates.
        sc = pinned_scenario(K=2)
        sol = fixed_power_solution(sc, single_group_alloc(2), propfair_power)
        assert sol.rates.min() > 0.0
        assert sol.rates.min() >= 0.3 * sol.rates.max()

    def test_log_utility_beats_sumrate_solution(self):
        delta = 1e-9
        sc = pinned_scenario(K=2, h=np.array([1.0, 1e-12]))
        alloc = single_group_alloc(2)
        pf = fixed_power_solution(sc, alloc, propfair_power)
        sr = fixed_power_solution(sc, alloc, sumrate_power)

        def utility(rates):
            return float(np.sum(np.log(np.maximum(rates, 0.0) + delta)))

        assert utility(pf.rates) >= utility(sr.rates)


class TestOracleOrder:
    def test_single_device_identity(self):
        sc = generate_scenario(SystemConfig(num_servers=1, num_channels=1, num_devices=1), 3)
        sol, _ = oracle_order_search(sc, single_group_alloc(1))
        assert sol.extras["eta"] == pytest.approx(sol.extras["eta_proposed"], rel=1e-12)

    def test_never_below_proposed(self):
        cfg = SystemConfig(num_servers=1, num_channels=1, num_devices=2)
        for seed in range(10):
            sc = generate_scenario(cfg, seed)
            alloc = single_group_alloc(2)
            sol, _ = oracle_order_search(sc, alloc)
            assert sol.extras["eta"] >= sol.extras["eta_proposed"] * (1 - 1e-12)

    def test_refuses_large_groups(self):
        sc = generate_scenario(SystemConfig(num_servers=1, num_channels=1, num_devices=4), 0)
        with pytest.raises(ValueError):
            oracle_order_search(sc, single_group_alloc(4))
