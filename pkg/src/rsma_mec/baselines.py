"""Benchmark algorithms and the exhaustive decoding-order oracle.

Everything here reuses the same rate model and SCA machinery as the main
solver so comparisons isolate the algorithmic idea (access scheme, matching
preference, power objective) rather than solver quality.
"""

from __future__ import annotations

import itertools
import math
from enum import Enum

import numpy as np
import scipy.optimize

from .rate_core import Allocation, Schedule, Solution, make_allocation, mcor
from .scenario import Scenario
from .sca_power import (
    GroupProblem,
    ScaSettings,
    SolveStats,
    _solve_inner_terms,
    _Linearized,
    _Terms,
    assemble_solution,
    bisection_mcor,
    default_powers,
    init_decoding_order,
    order_from_powers,
    reversed_decoding_order,
    sca_maximin_power,
    single_user_capacity,
)
from .rate_core import OrderSeq


class BaselineKind(str, Enum):
    """Closed set of runnable algorithms, keyed by their CLI names."""

    PROPOSED = "Proposed"
    ORACLE_ORDER = "OracleOrder"
    RSMA_RANDOM_PROPFAIR = "RSMA-Random-PropFair"
    RSMA_MATCH_MAXMIN = "RSMA-Match-MaxMin"
    RSMA_MATCH_SUMRATE = "RSMA-Match-SumRate"
    RSMA_RANDOM_SUMRATE = "RSMA-Random-SumRate"
    NOMA_MATCH = "NOMA-Match"
    NOMA_RANDOM = "NOMA-Random"
    TDMA_MATCH = "TDMA-Match"
    TDMA_RANDOM = "TDMA-Random"

    @classmethod
    def from_name(cls, name: str) -> "BaselineKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ValueError(f"unknown algorithm name: {name!r}")


# ---------------------------------------------------------------------------
# Random allocation

def random_allocation(rng: np.random.Generator, M: int, N: int, K: int) -> Allocation:
    """Uniform random channel per device, uniform random server per channel group."""
    channel_of = {k: int(rng.integers(N)) for k in range(K)}
    server_of: dict[int, int] = {}
    for n in range(N):
        members = [k for k, c in channel_of.items() if c == n]
        if not members:
            continue
        m = int(rng.integers(M))
        for k in members:
            server_of[k] = m
    return make_allocation(M, N, K, server_of, channel_of)


# ---------------------------------------------------------------------------
# TDMA

def tdma_link_rates(scenario: Scenario, allocation: Allocation) -> dict[int, float]:
    """Full-power orthogonal-slot link rate per allocated device."""
    cfg = scenario.config
    rates: dict[int, float] = {}
    for k in range(cfg.num_devices):
        m, n = allocation.server_of(k), allocation.channel_of(k)
        if m < 0 or n < 0:
            continue
        snr = scenario.gains[m, n, k] * cfg.max_tx_power / cfg.noise_power
        rates[k] = cfg.bandwidth * math.log2(1.0 + snr)
    return rates


def tdma_feasible(
    scenario: Scenario, allocation: Allocation, theta: float
) -> bool:
    """Feasibility of a common offloading rate theta under TDMA time sharing.

    Uses the minimal per-device slot lengths t_k = theta*T/R_k; since every
    budget constraint is increasing in the t_k, minimal times are optimal for
    the feasibility question.  Checks, per server, the compute budget
    sum_k t_k (F + R_k) <= F*T and the airtime budget sum_k t_k <= T.
    """
    cfg = scenario.config
    T, F = cfg.deadline, cfg.server_frequency
    link = tdma_link_rates(scenario, allocation)
    if theta <= 0.0:
        return True
    per_server: dict[int, list[int]] = {}
    for k in link:
        per_server.setdefault(allocation.server_of(k), []).append(k)
    for m, devs in per_server.items():
        if any(link[k] <= 0.0 for k in devs):
            return False
        t = {k: theta * T / link[k] for k in devs}
        if sum(t[k] * (F + link[k]) for k in devs) > F * T * (1.0 + 1e-12):
            return False
        if sum(t.values()) > T * (1.0 + 1e-12):
            return False
    return True


def tdma_maximin(scenario: Scenario, allocation: Allocation) -> Solution:
    """Max-min common offloading rate under TDMA, by bisection on theta."""
    cfg = scenario.config
    M, K, T, F = cfg.num_servers, cfg.num_devices, cfg.deadline, cfg.server_frequency
    link = tdma_link_rates(scenario, allocation)

    rates = np.zeros(K)
    t_o = np.zeros(M)
    t_c = np.full(M, T)
    f = np.zeros(K)

    fully = len(link) == K and all(r > 0.0 for r in link.values())
    if fully:
        hi = min(r * F / (F + r) for r in link.values())
        lo = 0.0
        eps = 1e-6 * hi
        while hi - lo > eps:
            mid = 0.5 * (lo + hi)
            if tdma_feasible(scenario, allocation, mid):
                lo = mid
            else:
                hi = mid
        theta = lo
        rates[:] = theta
        for m in range(M):
            devs = [k for k in link if allocation.server_of(k) == m]
            if not devs:
                t_o[m], t_c[m] = 0.0, T
                continue
            t = {k: theta * T / link[k] for k in devs}
            t_o[m] = sum(t.values())
            t_c[m] = T - t_o[m]
            bits = {k: t[k] * link[k] for k in devs}
            total = sum(bits.values())
            if total > 0:
                for k in devs:
                    f[k] = F * bits[k] / total
        theta_star = theta
    else:
        theta_star = 0.0

    sol = Solution(
        allocation=allocation,
        orders={},
        powers=np.zeros((K, 2)),
        schedule=Schedule(t_o=t_o, t_c=t_c, f=f),
        rates=rates,
        mcor=mcor(rates),
    )
    sol.extras["eta"] = theta_star
    sol.extras["access"] = "tdma"
    return sol


# ---------------------------------------------------------------------------
# NOMA

def noma_maximin(
    scenario: Scenario, allocation: Allocation, settings: ScaSettings = ScaSettings()
) -> tuple[Solution, SolveStats]:
    """Single-message-per-device restriction with descending-gain SIC order."""
    return bisection_mcor(scenario, allocation, settings, parts=1, order_policy="fixed")


# ---------------------------------------------------------------------------
# Sum-rate and proportional-fairness power objectives

def sumrate_power(
    gp: GroupProblem,
    orders: dict[int, OrderSeq],
    settings: ScaSettings = ScaSettings(),
    p0: np.ndarray | None = None,
) -> np.ndarray:
    """SCA ascent on the group sum rate with fixed decoding orders."""
    K = gp.scenario.config.num_devices
    terms = _Terms(gp, orders)
    obj = terms.sumrate_weights()
    p = default_powers(gp, K) if p0 is None else p0.copy()
    value = obj.true_value(terms, terms.flatten(p))
    for _ in range(settings.sca_max_iters):
        p_next, _, _ = _solve_inner_terms(terms, obj, p, settings)
        next_value = obj.true_value(terms, terms.flatten(p_next))
        if next_value < value:
            break
        change = np.linalg.norm(p_next - p) / max(np.linalg.norm(p), 1e-30)
        p, value = p_next, next_value
        if change <= settings.sca_tol:
            break
    return p


def propfair_power(
    gp: GroupProblem,
    orders: dict[int, OrderSeq],
    settings: ScaSettings = ScaSettings(),
    p0: np.ndarray | None = None,
    delta: float = 1e-9,
) -> np.ndarray:
    """SCA ascent on sum_k log(rate_k + delta) with fixed decoding orders.

    Each SCA step maximizes the concave surrogate sum_k log(r_hat_k + delta)
    (log of a concave positive function) over the box-simplex, via SLSQP with
    analytic gradients.
    """
    cfg = gp.scenario.config
    K = cfg.num_devices
    terms = _Terms(gp, orders)
    own = terms.own
    # Per-device rate rows: z = sum of own w terms, l = sum of own v terms.
    from .sca_power import _Objective

    obj = _Objective(
        cw_z=own, cv_z=np.zeros_like(own), cw_l=np.zeros_like(own), cv_l=own
    )
    P = terms.P_vec
    dev_mask = own > 0
    n_dev = dev_mask.shape[0]
    scale = max(1.0, terms.log_scale)

    p = default_powers(gp, K) if p0 is None else p0.copy()

    def utility(rates: np.ndarray) -> float:
        return float(np.sum(np.log(np.maximum(rates, 0.0) + delta)))

    value = utility(obj.z_l(terms, terms.flatten(p))[0] - obj.z_l(terms, terms.flatten(p))[1])
    for _ in range(settings.sca_max_iters):
        p_flat = terms.flatten(p)
        lin = _Linearized(obj, terms, p_flat)

        def neg_obj(x: np.ndarray) -> float:
            r = lin.surrogate(x)
            return -float(np.sum(np.log(np.maximum(r, 0.0) / scale + delta / scale)))

        def neg_grad(x: np.ndarray) -> np.ndarray:
            r = lin.surrogate(x)
            den_w = terms.noise + terms.A_w @ x
            gz = (obj.cw_z * (terms.log_scale / den_w)) @ terms.A_w
            jac = gz - lin.grad  # (R, V) gradient of each surrogate row
            weights = 1.0 / (np.maximum(r, 0.0) + delta)
            return -(weights @ jac)

        cons = [
            {
                "type": "ineq",
                "fun": (lambda x, d=d: P[dev_mask[d]][0] - x[dev_mask[d]].sum()),
                "jac": (lambda x, d=d: -dev_mask[d].astype(float)),
            }
            for d in range(n_dev)
        ]
        res = scipy.optimize.minimize(
            neg_obj,
            p_flat,
            jac=neg_grad,
            bounds=[(0.0, float(Pj)) for Pj in P],
            constraints=cons,
            method="SLSQP",
            options={"maxiter": 60, "ftol": 1e-12},
        )
        p_next_flat = np.clip(res.x, 0.0, None)
        for d in range(n_dev):
            idx = dev_mask[d]
            total = p_next_flat[idx].sum()
            budget = P[idx][0]
            if total > budget:
                p_next_flat[idx] *= budget / total
        z, l = obj.z_l(terms, p_next_flat)
        next_value = utility(z - l)
        if next_value <= value:
            break
        change = np.linalg.norm(p_next_flat - p_flat) / max(np.linalg.norm(p_flat), 1e-30)
        p = terms.unflatten(p_next_flat, K)
        value = next_value
        if change <= settings.sca_tol:
            break
    return p


def fixed_power_solution(
    scenario: Scenario,
    allocation: Allocation,
    power_fn,
    settings: ScaSettings = ScaSettings(),
    order_rule: str = "alternating",
) -> Solution:
    """Run a per-group power objective and assemble the schedule/rates.

    ``order_rule="alternating"`` interleaves power optimization with
    received-power order updates; ``"reversed"`` fixes the classic
    sum-rate decoding order (part 2 decoded in reverse of part 1) and
    optimizes powers once under it.
    """
    cfg = scenario.config
    groups = [
        GroupProblem.from_allocation(scenario, allocation, m)
        for m in range(cfg.num_servers)
    ]
    groups = [g for g in groups if g.devices]
    artifacts = []
    for g in groups:
        if order_rule == "reversed":
            orders = reversed_decoding_order(g)
            powers = power_fn(g, orders, settings, None)
        else:
            orders = init_decoding_order(g)
            powers = None
            for _ in range(max(1, settings.alt_max_iters)):
                powers = power_fn(g, orders, settings, powers)
                new_orders = order_from_powers(g, powers)
                if new_orders == orders:
                    break
                orders = new_orders
        artifacts.append((powers, orders))
    sol = assemble_solution(scenario, allocation, groups, artifacts)
    return sol


# ---------------------------------------------------------------------------
# Exhaustive decoding-order oracle

def _canonical_channel_orders(devs: tuple[int, ...], parts: int) -> list[OrderSeq]:
    """All decode sequences, deduplicated by the part-exchange symmetry.

    Both sub-messages of a device share one gain and one power budget, so any
    sequence is equivalent to its relabeling where each device's part 1
    appears before its part 2; only those canonical sequences are returned.
    """
    subs = [(k, i) for k in devs for i in range(1, parts + 1)]
    out = []
    for perm in itertools.permutations(subs):
        ok = True
        if parts == 2:
            seen = set()
            for k, i in perm:
                if i == 1:
                    seen.add(k)
                elif k not in seen:
                    ok = False
                    break
        if ok:
            out.append(tuple(perm))
    return out


def oracle_order_search(
    scenario: Scenario,
    allocation: Allocation,
    settings: ScaSettings = ScaSettings(),
    max_submessages: int = 6,
) -> tuple[Solution, SolveStats]:
    """Best achievable eta over every per-group decoding order.

    Runs the standard alternating pipeline first, then tries to raise each
    group's eta with every canonical order (the groups are independent, so the
    global optimum is the min over per-group maxima).  Candidate orders are
    screened with a single feasibility probe just above the incumbent before
    paying for a full bisection, which never changes the maximum.
    """
    cfg = scenario.config
    sol0, stats = bisection_mcor(scenario, allocation, settings)
    eta0 = float(sol0.extras.get("eta", 0.0))

    groups = [
        GroupProblem.from_allocation(scenario, allocation, m)
        for m in range(cfg.num_servers)
    ]
    groups = [g for g in groups if g.devices]
    for g in groups:
        total = sum(len(devs) * g.parts for devs in g.channels.values())
        if total > max_submessages:
            raise ValueError(
                f"group at server {g.server} has {total} sub-messages; "
                f"order enumeration capped at {max_submessages}"
            )
    allocated = {k for g in groups for k in g.devices}
    if len(allocated) != cfg.num_devices or not groups:
        return sol0, stats

    per_group = []
    for g in groups:
        cap = min(
            single_user_capacity(scenario, g.server, n, k)
            for n, devs in g.channels.items()
            for k in devs
        )
        eta_max = min(cfg.server_frequency * (1.0 - 1e-9), cap)
        eps = settings.bisection_tol if settings.bisection_tol is not None else 1e-4 * eta_max
        thr = lambda eta: eta * g.F_m - settings.feasibility_margin * g.F_m

        best_eta = eta0
        best_art = (
            np.array(sol0.powers, dtype=float),
            {n: sol0.orders[(g.server, n)] for n in g.channels},
        )
        chans = sorted(g.channels)
        combos = itertools.product(
            *[_canonical_channel_orders(g.channels[n], g.parts) for n in chans]
        )
        for combo in combos:
            cand = {n: seq for n, seq in zip(chans, combo)}
            probe = best_eta + eps
            if probe >= eta_max:
                break
            p, val, it, _ = sca_maximin_power(g, cand, probe, settings, threshold=thr(probe))
            stats.sca_iters.append(it)
            if val < thr(probe):
                continue
            lo, hi = probe, eta_max
            best_eta, best_art = probe, (p, cand)
            while hi - lo > eps:
                mid = 0.5 * (lo + hi)
                p2, v2, it2, _ = sca_maximin_power(
                    g, cand, mid, settings, p0=best_art[0], threshold=thr(mid)
                )
                stats.sca_iters.append(it2)
                if v2 >= thr(mid):
                    lo = mid
                    best_eta, best_art = mid, (p2, cand)
                else:
                    hi = mid
        per_group.append((best_eta, best_art))

    eta_star = min(eta for eta, _ in per_group)
    solution = assemble_solution(
        scenario, allocation, groups, [art for _, art in per_group]
    )
    solution.extras["eta"] = eta_star
    solution.extras["eta_proposed"] = eta0
    stats.eta = eta_star
    return solution, stats
