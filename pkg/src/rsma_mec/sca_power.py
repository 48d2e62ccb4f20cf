"""Per-server power allocation and SIC-order optimization.

The per-server feasibility subproblem at a target rate eta is solved by
maximizing min_k (z_k - l_k), a difference of concave functions of the
sub-message powers.  Each SCA iteration replaces l_k by its first-order
Taylor expansion around the previous iterate (a global over-estimator, so
the surrogate under-estimates the true objective) and solves the resulting
convex epigraph problem with a logarithmic-barrier Newton method.  An outer
bisection on eta recovers the max-min offloading rate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .rate_core import (
    Allocation,
    OrderSeq,
    Schedule,
    Solution,
    group_link_rates,
    mcor,
    schedule_from_rates,
)
from .scenario import Scenario

LN2 = math.log(2.0)


class InfeasibleEta(ValueError):
    """Raised when eta >= F_m, which makes the DC reformulation invalid."""


@dataclass(frozen=True)
class ScaSettings:
    """Iteration caps and tolerances for the nested solver loops."""

    sca_tol: float = 1e-4  # relative power-change tolerance
    sca_max_iters: int = 30
    alt_max_iters: int = 5  # power/order alternating rounds
    bisection_tol: float | None = None  # bits/s; None -> 1e-4 * eta_max
    inner_solver_tol: float = 1e-6  # barrier duality-gap target (scaled units)
    inner_max_iters: int = 200  # total Newton steps per inner solve
    feasibility_margin: float = 1e-9  # relative slack when testing obj >= eta*F_m
    warm_start: bool = True  # reuse powers across bisection steps

    _PAIRS = {
        "sca_tol": ("sca_tol", float),
        "sca_max_iters": ("sca_max_iters", int),
        "alt_max_iters": ("alt_max_iters", int),
        "bisection_tol_bps": ("bisection_tol", float),
        "inner_solver_tol": ("inner_solver_tol", float),
        "inner_max_iters": ("inner_max_iters", int),
    }

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> "ScaSettings":
        kwargs = {}
        for key, raw in pairs.items():
            if key in cls._PAIRS:
                name, conv = cls._PAIRS[key]
                kwargs[name] = conv(raw)
        return cls(**kwargs)


@dataclass(frozen=True)
class GroupProblem:
    """One server, its devices partitioned by channel, and the shared budgets."""

    scenario: Scenario
    server: int
    channels: dict[int, tuple[int, ...]]  # channel -> devices on it
    parts: int = 2  # sub-messages per device (1 = NOMA restriction)

    @property
    def F_m(self) -> float:
        return self.scenario.config.server_frequency

    @property
    def devices(self) -> tuple[int, ...]:
        return tuple(k for devs in self.channels.values() for k in devs)

    @classmethod
    def from_allocation(
        cls, scenario: Scenario, allocation: Allocation, m: int, parts: int = 2
    ) -> "GroupProblem":
        channels: dict[int, tuple[int, ...]] = {}
        for k in allocation.server_devices(m):
            n = allocation.channel_of(k)
            if n >= 0:
                channels.setdefault(n, tuple())
                channels[n] = channels[n] + (k,)
        return cls(scenario=scenario, server=m, channels=channels, parts=parts)


# ---------------------------------------------------------------------------
# Compiled per-(group, order) structure

class _Terms:
    """Matrices for evaluating all w/v log terms and their derivatives.

    Power variables are the sub-message powers, flattened one per sub-message;
    interference is confined to the sub-message's own channel.
    """

    def __init__(self, gp: GroupProblem, orders: dict[int, OrderSeq]):
        cfg = gp.scenario.config
        self.gp = gp
        self.orders = orders
        self.noise = cfg.noise_power
        self.log_scale = cfg.bandwidth / LN2  # B * log2(x) = log_scale * ln(x)

        subs: list[tuple[int, int, int]] = []  # (channel, device, part)
        for n in sorted(orders):
            for k, i in orders[n]:
                subs.append((n, k, i))
        self.subs = subs
        self.var_index = {(k, i): j for j, (n, k, i) in enumerate(subs)}
        V = len(subs)
        self.V = V

        A_v = np.zeros((V, V))
        A_w = np.zeros((V, V))
        h = gp.scenario.gains[gp.server]
        for n in sorted(orders):
            seq = orders[n]
            for pos, (k, i) in enumerate(seq):
                j = self.var_index[(k, i)]
                for kp, ip in seq[pos + 1 :]:
                    A_v[j, self.var_index[(kp, ip)]] = h[n, kp]
                A_w[j] = A_v[j]
                A_w[j, j] += h[n, k]
        self.A_v = A_v
        self.A_w = A_w

        self.device_list = sorted(gp.devices)
        D = len(self.device_list)
        self.own = np.zeros((D, V))
        for d, k in enumerate(self.device_list):
            for j, (_, kj, _) in enumerate(subs):
                if kj == k:
                    self.own[d, j] = 1.0
        self.P_vec = np.array([cfg.max_tx_power for _ in subs])

    # -- flat power vector helpers -----------------------------------------

    def flatten(self, powers: np.ndarray) -> np.ndarray:
        return np.array([powers[k, i - 1] for (_, k, i) in self.subs])

    def unflatten(self, p: np.ndarray, K: int) -> np.ndarray:
        out = np.zeros((K, 2))
        for j, (_, k, i) in enumerate(self.subs):
            out[k, i - 1] = p[j]
        return out

    # -- log-term evaluation ------------------------------------------------

    def wv(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        den_w = self.noise + self.A_w @ p
        den_v = self.noise + self.A_v @ p
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.log_scale * np.log(den_w), self.log_scale * np.log(den_v)

    def maxmin_weights(self, eta: float) -> "_Objective":
        F = self.gp.F_m
        if eta >= F:
            raise InfeasibleEta(f"eta={eta} >= F_m={F}")
        other = 1.0 - self.own
        return _Objective(
            cw_z=(F - eta) * self.own,
            cv_z=eta * other,
            cw_l=eta * other,
            cv_l=(F - eta) * self.own,
        )

    def sumrate_weights(self) -> "_Objective":
        ones = np.ones((1, self.V))
        zeros = np.zeros((1, self.V))
        return _Objective(cw_z=ones, cv_z=zeros, cw_l=zeros, cv_l=ones)


@dataclass(frozen=True)
class _Objective:
    """Row-wise DC objective rows(p) = cw_z@w + cv_z@v - (cw_l@w + cv_l@v).

    All weights are nonnegative so the z part is concave and the l part
    (linearized each SCA step) is concave too.
    """

    cw_z: np.ndarray
    cv_z: np.ndarray
    cw_l: np.ndarray
    cv_l: np.ndarray

    @property
    def rows(self) -> int:
        return self.cw_z.shape[0]

    def z_l(self, terms: _Terms, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w, v = terms.wv(p)
        z = self.cw_z @ w + self.cv_z @ v
        l = self.cw_l @ w + self.cv_l @ v
        return z, l

    def true_value(self, terms: _Terms, p: np.ndarray) -> float:
        z, l = self.z_l(terms, p)
        return float(np.min(z - l))

    def grad_l(self, terms: _Terms, p: np.ndarray) -> np.ndarray:
        den_w = terms.noise + terms.A_w @ p
        den_v = terms.noise + terms.A_v @ p
        s = terms.log_scale
        return (self.cw_l * (s / den_w)) @ terms.A_w + (self.cv_l * (s / den_v)) @ terms.A_v


class _Linearized:
    """Affine over-estimator of the l rows, anchored at p_ref."""

    def __init__(self, obj: _Objective, terms: _Terms, p_ref: np.ndarray):
        self.obj = obj
        self.terms = terms
        self.p_ref = np.asarray(p_ref, dtype=float)
        _, l_ref = obj.z_l(terms, self.p_ref)
        self.l_ref = l_ref
        self.grad = obj.grad_l(terms, self.p_ref)  # (R, V)

    def value(self, p: np.ndarray) -> np.ndarray:
        return self.l_ref + self.grad @ (p - self.p_ref)

    def surrogate(self, p: np.ndarray) -> np.ndarray:
        """z(p) - l_hat(p), the concave under-estimator rows."""
        z, _ = self.obj.z_l(self.terms, p)
        return z - self.value(p)


# ---------------------------------------------------------------------------
# Spec-level operations on (group, order, powers)

def wv_terms(
    gp: GroupProblem, orders: dict[int, OrderSeq], powers: np.ndarray
) -> tuple[dict[tuple[int, int], float], dict[tuple[int, int], float]]:
    """Per-sub-message concave terms w and v; w - v is the decode rate."""
    terms = _Terms(gp, orders)
    w, v = terms.wv(terms.flatten(powers))
    w_map = {(k, i): float(w[j]) for j, (_, k, i) in enumerate(terms.subs)}
    v_map = {(k, i): float(v[j]) for j, (_, k, i) in enumerate(terms.subs)}
    return w_map, v_map


def zl_values(
    gp: GroupProblem, orders: dict[int, OrderSeq], powers: np.ndarray, eta: float
) -> tuple[dict[int, float], dict[int, float]]:
    """Per-device z and l; z - l >= eta*F_m iff the device's rate target holds."""
    terms = _Terms(gp, orders)
    obj = terms.maxmin_weights(eta)
    z, l = obj.z_l(terms, terms.flatten(powers))
    devs = terms.device_list
    return {k: float(z[d]) for d, k in enumerate(devs)}, {k: float(l[d]) for d, k in enumerate(devs)}


def linearize(
    gp: GroupProblem, orders: dict[int, OrderSeq], p_ref: np.ndarray, eta: float
):
    """Affine over-estimator of each l_k anchored at p_ref.

    Returns a callable mapping a powers array (K, 2) to a dict k -> l_hat_k.
    The gradient follows the closed-form derivatives of the v/w log terms.
    """
    terms = _Terms(gp, orders)
    obj = terms.maxmin_weights(eta)
    lin = _Linearized(obj, terms, terms.flatten(p_ref))

    def evaluate(powers: np.ndarray) -> dict[int, float]:
        vals = lin.value(terms.flatten(powers))
        return {k: float(vals[d]) for d, k in enumerate(terms.device_list)}

    return evaluate


# ---------------------------------------------------------------------------
# Inner convex solver: log-barrier Newton on the epigraph problem

def _barrier_solve(
    terms: _Terms,
    lin: _Linearized,
    p_ref: np.ndarray,
    settings: ScaSettings,
) -> np.ndarray:
    """Maximize min over rows of z(p) - l_hat(p) over the per-device box-simplex.

    Works on scaled variables x = p / P and a scaled objective so magnitudes
    are O(1..100) regardless of bandwidth or server frequency.
    """
    gp = terms.gp
    V = terms.V
    P = terms.P_vec
    obj = lin.obj
    R = obj.rows

    weight_mag = float(
        np.max((obj.cw_z + obj.cv_z + obj.cw_l + obj.cv_l).sum(axis=1))
    )
    obj_scale = max(1.0, weight_mag * terms.log_scale)

    dev_mask = terms.own > 0
    n_dev = dev_mask.shape[0]

    def g_rows(x: np.ndarray) -> np.ndarray:
        return lin.surrogate(x * P) / obj_scale

    def grad_g(x: np.ndarray) -> np.ndarray:
        p = x * P
        den_w = terms.noise + terms.A_w @ p
        den_v = terms.noise + terms.A_v @ p
        s = terms.log_scale
        gz = (obj.cw_z * (s / den_w)) @ terms.A_w + (obj.cv_z * (s / den_v)) @ terms.A_v
        return (gz - lin.grad) * P[None, :] / obj_scale

    # Strictly interior start: pull toward the simplex center.
    parts_per_dev = dev_mask.sum(axis=1)
    center = np.zeros(V)
    for d in range(n_dev):
        center[dev_mask[d]] = 1.0 / (2.0 * parts_per_dev[d])
    x = 0.98 * (p_ref / P) + 0.02 * center
    g0 = g_rows(x)
    s_val = float(np.min(g0)) - max(0.1, 0.01 * abs(float(np.min(g0))))

    n_cons = R + n_dev + V
    t_bar = 100.0
    mu = 50.0
    newton_budget = settings.inner_max_iters
    tol = settings.inner_solver_tol

    def constraints(x: np.ndarray, s_val: float, g: np.ndarray | None = None):
        if g is None:
            g = g_rows(x)
        c_obj = s_val - g  # R
        c_dev = np.array([x[dev_mask[d]].sum() - 1.0 for d in range(n_dev)])
        c_pos = -x
        return g, c_obj, c_dev, c_pos

    while n_cons / t_bar > tol and newton_budget > 0:
        # Newton centering for the current barrier parameter.
        for _ in range(30):
            if newton_budget <= 0:
                break
            newton_budget -= 1
            g, c_obj, c_dev, c_pos = constraints(x, s_val)
            if np.any(c_obj >= 0) or np.any(c_dev >= 0) or np.any(c_pos >= 0):
                break  # numerical fallout; keep last iterate
            Gg = grad_g(x)  # (R, V)

            inv_obj = 1.0 / (-c_obj)
            inv_dev = 1.0 / (-c_dev)
            inv_pos = 1.0 / (-c_pos)

            # Gradient of t*(-s) + barrier.
            grad_x = -(Gg.T @ inv_obj)
            for d in range(n_dev):
                grad_x[dev_mask[d]] += inv_dev[d]
            grad_x -= inv_pos
            grad_s = -t_bar + float(inv_obj.sum())

            # Hessian: curvature of g (concave rows) plus rank-one barrier terms.
            p = x * P
            den_w = terms.noise + terms.A_w @ p
            den_v = terms.noise + terms.A_v @ p
            s_log = terms.log_scale
            wz = (inv_obj @ obj.cw_z) * s_log / den_w**2
            vz = (inv_obj @ obj.cv_z) * s_log / den_v**2
            AwP = terms.A_w * P[None, :]
            AvP = terms.A_v * P[None, :]
            H_xx = (AwP.T * wz) @ AwP + (AvP.T * vz) @ AvP
            H_xx /= obj_scale
            # rank-one terms from the epigraph rows
            W = inv_obj  # 1/(-c)
            C_rows = np.hstack([-Gg, np.ones((R, 1))])  # d c_obj / d(x, s)
            H_full = np.zeros((V + 1, V + 1))
            H_full[:V, :V] = H_xx
            H_full += (C_rows * (W**2)[:, None]).T @ C_rows
            for d in range(n_dev):
                idx = np.flatnonzero(dev_mask[d])
                H_full[np.ix_(idx, idx)] += inv_dev[d] ** 2
            H_full[:V, :V] += np.diag(inv_pos**2)

            grad_full = np.concatenate([grad_x, [grad_s]])
            H_full[np.diag_indices_from(H_full)] += 1e-10 * max(1.0, np.trace(H_full) / (V + 1))
            try:
                step = np.linalg.solve(H_full, -grad_full)
            except np.linalg.LinAlgError:
                break
            decrement = float(-grad_full @ step)
            if decrement / 2.0 < 1e-10:
                break

            # Backtracking line search keeping strict feasibility.  The box
            # and budget constraints are linear, so the largest feasible step
            # along them is exact; only the epigraph rows need backtracking.
            f_cur = t_bar * (-s_val) - float(
                np.log(-c_obj).sum() + np.log(-c_dev).sum() + np.log(-c_pos).sum()
            )
            dx = step[:V]
            alpha_max = 1.0
            shrink = dx < 0
            if np.any(shrink):
                alpha_max = min(alpha_max, float(np.min(x[shrink] / -dx[shrink])))
            for d in range(n_dev):
                slack = -c_dev[d]
                ddir = dx[dev_mask[d]].sum()
                if ddir > 0:
                    alpha_max = min(alpha_max, slack / ddir)
            alpha = min(1.0, 0.99 * alpha_max)
            accepted = False
            for _ in range(40):
                x_new = x + alpha * step[:V]
                s_new = s_val + alpha * step[V]
                g_new, c_o, c_d, c_p = constraints(x_new, s_new)
                if np.all(c_o < 0) and np.all(c_d < 0) and np.all(c_p < 0):
                    f_new = t_bar * (-s_new) - float(
                        np.log(-c_o).sum() + np.log(-c_d).sum() + np.log(-c_p).sum()
                    )
                    if f_new <= f_cur - 0.25 * alpha * decrement:
                        x, s_val = x_new, s_new
                        accepted = True
                        break
                alpha *= 0.5
            if not accepted:
                break
        t_bar *= mu

    p_out = np.clip(x * P, 0.0, None)
    # Repair tiny budget violations from finite barrier accuracy.
    for d in range(n_dev):
        idx = dev_mask[d]
        total = p_out[idx].sum()
        budget = P[idx][0]
        if total > budget:
            p_out[idx] *= budget / total
    return p_out


def solve_inner(
    gp: GroupProblem,
    orders: dict[int, OrderSeq],
    p_ref: np.ndarray,
    eta: float,
    settings: ScaSettings = ScaSettings(),
) -> tuple[np.ndarray, float, bool]:
    """One convex SCA subproblem: maximize min_k (z_k - l_hat_k) at anchor p_ref.

    Returns (powers (K, 2), surrogate objective, stalled).  The result never
    has a surrogate objective below the anchor's; on non-progress the anchor
    is returned with stalled=True.
    """
    terms = _Terms(gp, orders)
    obj = terms.maxmin_weights(eta)
    return _solve_inner_terms(terms, obj, p_ref, settings)


def _solve_inner_terms(
    terms: _Terms,
    obj: _Objective,
    p_ref: np.ndarray,
    settings: ScaSettings,
) -> tuple[np.ndarray, float, bool]:
    K = p_ref.shape[0]
    p_ref_flat = terms.flatten(p_ref)
    lin = _Linearized(obj, terms, p_ref_flat)
    obj_ref = float(np.min(lin.surrogate(p_ref_flat)))
    p_new_flat = _barrier_solve(terms, lin, p_ref_flat, settings)
    obj_new = float(np.min(lin.surrogate(p_new_flat)))
    if obj_new <= obj_ref:
        stalled = obj_new < obj_ref - settings.inner_solver_tol * max(1.0, abs(obj_ref))
        return p_ref.copy(), obj_ref, stalled
    return terms.unflatten(p_new_flat, K), obj_new, False


# ---------------------------------------------------------------------------
# SCA loop, decoding orders, alternating optimization

def default_powers(gp: GroupProblem, K: int) -> np.ndarray:
    """Symmetric strictly-interior start: split the budget across parts."""
    p = np.zeros((K, 2))
    P = gp.scenario.config.max_tx_power
    for k in gp.devices:
        if gp.parts == 2:
            p[k, 0] = p[k, 1] = P / 2.0
        else:
            p[k, 0] = P
    return p


def sca_maximin_power(
    gp: GroupProblem,
    orders: dict[int, OrderSeq],
    eta: float,
    settings: ScaSettings = ScaSettings(),
    p0: np.ndarray | None = None,
    threshold: float | None = None,
) -> tuple[np.ndarray, float, int, list[float]]:
    """Iterate the convex surrogate until the powers stop moving.

    Returns (powers, true objective min_k (z_k - l_k), iterations, trace).
    The true-objective trace is non-decreasing by the minorant property.

    When a feasibility threshold is given, the loop exits as soon as the
    objective clears it, or early when per-iteration progress is a vanishing
    fraction of the remaining gap (the ascent is geometric, so it provably
    cannot close the gap within the iteration cap).
    """
    K = gp.scenario.config.num_devices
    terms = _Terms(gp, orders)
    obj = terms.maxmin_weights(eta)
    p = default_powers(gp, K) if p0 is None else p0.copy()
    value = obj.true_value(terms, terms.flatten(p))
    trace = [value]
    iters = 0
    slow_rounds = 0
    prev_improvement = None
    for _ in range(settings.sca_max_iters):
        iters += 1
        p_next, _, _ = _solve_inner_terms(terms, obj, p, settings)
        next_value = obj.true_value(terms, terms.flatten(p_next))
        if next_value < value:
            break  # keep the monotone iterate
        change = np.linalg.norm(p_next - p) / max(np.linalg.norm(p), 1e-30)
        improvement = next_value - value
        p, value = p_next, next_value
        trace.append(value)
        if threshold is not None and value >= threshold:
            break
        if change <= settings.sca_tol:
            break
        if threshold is not None:
            gap = threshold - value
            # The ascent is roughly geometric, so project its limit; if even
            # the projected limit misses the threshold the probe is hopeless.
            if prev_improvement is not None and prev_improvement > 0:
                ratio = improvement / prev_improvement
                if ratio < 0.95:
                    projected = value + improvement * ratio / (1.0 - ratio)
                    if projected < threshold:
                        break
            slow_rounds = slow_rounds + 1 if improvement < 0.05 * gap else 0
            if slow_rounds >= 2:
                break
            prev_improvement = improvement
    return p, value, iters, trace


def init_decoding_order(gp: GroupProblem) -> dict[int, OrderSeq]:
    """Part-1 sub-messages first, then part-2, each in descending channel gain.

    Ties broken by device index.  For single-part groups this reduces to plain
    descending-gain ordering.
    """
    h = gp.scenario.gains[gp.server]
    orders: dict[int, OrderSeq] = {}
    for n, devs in gp.channels.items():
        ranked = sorted(devs, key=lambda k: (-h[n, k], k))
        seq: list[tuple[int, int]] = [(k, 1) for k in ranked]
        if gp.parts == 2:
            seq += [(k, 2) for k in ranked]
        orders[n] = tuple(seq)
    return orders


def reversed_decoding_order(gp: GroupProblem) -> dict[int, OrderSeq]:
    """Part-1 sub-messages in descending channel gain, part-2 in the reverse.

    Classic sum-rate-oriented SIC rule for two-part splitting: the second
    sub-messages are decoded in the reverse order of the first ones, so every
    device has one early-decoded and one late-decoded part.
    """
    h = gp.scenario.gains[gp.server]
    orders: dict[int, OrderSeq] = {}
    for n, devs in gp.channels.items():
        ranked = sorted(devs, key=lambda k: (-h[n, k], k))
        seq: list[tuple[int, int]] = [(k, 1) for k in ranked]
        if gp.parts == 2:
            seq += [(k, 2) for k in reversed(ranked)]
        orders[n] = tuple(seq)
    return orders


def order_from_powers(gp: GroupProblem, powers: np.ndarray) -> dict[int, OrderSeq]:
    """Rank sub-messages by received power h*p descending; ties by (device, part)."""
    h = gp.scenario.gains[gp.server]
    orders: dict[int, OrderSeq] = {}
    for n, devs in gp.channels.items():
        subs = [(k, i) for k in devs for i in range(1, gp.parts + 1)]
        subs.sort(key=lambda ki: (-h[n, ki[0]] * powers[ki[0], ki[1] - 1], ki[0], ki[1]))
        orders[n] = tuple(subs)
    return orders


def alternating_power_order(
    gp: GroupProblem,
    eta: float,
    settings: ScaSettings = ScaSettings(),
    order_policy: str = "alternating",
    p0: np.ndarray | None = None,
) -> tuple[np.ndarray, dict[int, OrderSeq], bool, list[int]]:
    """Alternate SCA power optimization and order updates; feasibility first.

    Returns (powers, orders, feasible, sca_iteration_counts).  Feasible means
    the best objective reached eta*F_m (within the relative margin).
    """
    threshold = eta * gp.F_m - settings.feasibility_margin * gp.F_m
    orders = init_decoding_order(gp)
    best: tuple[np.ndarray, dict[int, OrderSeq], float] | None = None
    iter_counts: list[int] = []
    p_start = p0
    for _ in range(max(1, settings.alt_max_iters)):
        powers, value, iters, _ = sca_maximin_power(
            gp, orders, eta, settings, p0=p_start, threshold=threshold
        )
        iter_counts.append(iters)
        if best is None or value > best[2]:
            best = (powers, orders, value)
        if value >= threshold:
            return powers, orders, True, iter_counts
        if order_policy == "fixed":
            break
        new_orders = order_from_powers(gp, powers)
        if new_orders == orders:
            break
        orders = new_orders
        p_start = p0
    powers, orders, value = best
    return powers, orders, value >= threshold, iter_counts


def exhaustive_order_feasible(
    gp: GroupProblem,
    eta: float,
    settings: ScaSettings = ScaSettings(),
    max_submessages: int = 6,
) -> tuple[np.ndarray, dict[int, OrderSeq], bool, list[int]]:
    """Feasibility via enumeration of all per-channel decoding orders.

    The alternating heuristic is tried first (so the search is a superset of
    the proposed path), then every permutation.  Guarded against factorial
    blow-up.
    """
    total_subs = sum(len(devs) * gp.parts for devs in gp.channels.values())
    if total_subs > max_submessages:
        raise ValueError(
            f"group has {total_subs} sub-messages; exhaustive order search capped at {max_submessages}"
        )
    powers, orders, feasible, iters = alternating_power_order(gp, eta, settings)
    if feasible:
        return powers, orders, True, iters
    threshold = eta * gp.F_m - settings.feasibility_margin * gp.F_m
    best = (powers, orders, -math.inf)
    chans = sorted(gp.channels)
    per_channel = []
    for n in chans:
        subs = sorted((k, i) for k in gp.channels[n] for i in range(1, gp.parts + 1))
        per_channel.append(list(itertools.permutations(subs)))
    for combo in itertools.product(*per_channel):
        cand = {n: seq for n, seq in zip(chans, combo)}
        p, value, it, _ = sca_maximin_power(gp, cand, eta, settings, threshold=threshold)
        iters.append(it)
        if value > best[2]:
            best = (p, cand, value)
        if value >= threshold:
            return p, cand, True, iters
    p, cand, value = best
    return p, cand, value >= threshold, iters


# ---------------------------------------------------------------------------
# Outer bisection on eta

@dataclass
class SolveStats:
    """Bookkeeping from one bisection solve, for convergence CDFs."""

    sca_iters: list[int] = field(default_factory=list)
    bisection_steps: int = 0
    eta: float = 0.0


def single_user_capacity(scenario: Scenario, m: int, n: int, k: int) -> float:
    cfg = scenario.config
    return cfg.bandwidth * math.log2(1.0 + scenario.gains[m, n, k] * cfg.max_tx_power / cfg.noise_power)


def _group_feasibility(gp, eta, settings, order_policy, p_warm):
    if order_policy == "exhaustive":
        return exhaustive_order_feasible(gp, eta, settings)
    return alternating_power_order(gp, eta, settings, order_policy=order_policy, p0=p_warm)


def bisection_mcor(
    scenario: Scenario,
    allocation: Allocation,
    settings: ScaSettings = ScaSettings(),
    parts: int = 2,
    order_policy: str = "alternating",
) -> tuple[Solution, SolveStats]:
    """Max-min offloading rate for a fixed allocation (bisection + per-server SCA).

    Feasibility of each probed eta is the AND over the per-server subproblems.
    The returned schedule and rates come from the closed-form expressions
    evaluated at the last feasible iterate.
    """
    cfg = scenario.config
    stats = SolveStats()
    K = cfg.num_devices

    groups = [
        GroupProblem.from_allocation(scenario, allocation, m, parts=parts)
        for m in range(cfg.num_servers)
    ]
    groups = [g for g in groups if g.devices]

    allocated = {k for g in groups for k in g.devices}
    fully_allocated = len(allocated) == K

    if groups:
        cap = min(
            single_user_capacity(scenario, g.server, n, k)
            for g in groups
            for n, devs in g.channels.items()
            for k in devs
        )
        eta_max = min(cfg.server_frequency * (1.0 - 1e-9), cap)
    else:
        eta_max = 0.0

    def try_eta(eta: float, warm):
        artifacts = []
        all_feasible = True
        for gi, g in enumerate(groups):
            p0 = warm[gi] if (warm is not None and settings.warm_start) else None
            powers, orders, feasible, iters = _group_feasibility(g, eta, settings, order_policy, p0)
            stats.sca_iters.extend(iters)
            artifacts.append((powers, orders))
            if not feasible:
                all_feasible = False
                break
        return all_feasible, artifacts

    best_artifacts = None
    lo, hi = 0.0, eta_max
    if eta_max > 0 and fully_allocated:
        eps = settings.bisection_tol if settings.bisection_tol is not None else 1e-4 * eta_max
        warm = None
        while hi - lo > eps:
            stats.bisection_steps += 1
            mid = 0.5 * (lo + hi)
            feasible, artifacts = try_eta(mid, warm)
            if feasible:
                lo = mid
                best_artifacts = artifacts
                warm = [a[0] for a in artifacts]
            else:
                hi = mid

    if best_artifacts is None:
        # No feasible eta > 0 (or unallocated devices): fall back to the
        # eta = 0 solution, which always exists.
        best_artifacts = []
        for g in groups:
            powers, orders, _, iters = _group_feasibility(g, 0.0, settings, order_policy, None)
            stats.sca_iters.extend(iters)
            best_artifacts.append((powers, orders))
        lo = 0.0

    stats.eta = lo
    solution = assemble_solution(scenario, allocation, groups, best_artifacts)
    solution.extras["eta"] = lo
    solution.extras["sca_iters"] = list(stats.sca_iters)
    return solution, stats


def assemble_solution(
    scenario: Scenario,
    allocation: Allocation,
    groups: list[GroupProblem],
    artifacts: list[tuple[np.ndarray, dict[int, OrderSeq]]],
) -> Solution:
    """Closed-form schedule and per-device rates from per-server powers/orders."""
    cfg = scenario.config
    M, K, T = cfg.num_servers, cfg.num_devices, cfg.deadline
    powers = np.zeros((K, 2))
    orders: dict[tuple[int, int], OrderSeq] = {}
    t_o = np.full(M, T)
    t_c = np.zeros(M)
    f = np.zeros(K)
    rates = np.zeros(K)

    for g, (g_powers, g_orders) in zip(groups, artifacts):
        m = g.server
        link: dict[int, float] = {}
        for n, seq in g_orders.items():
            orders[(m, n)] = seq
            link.update(group_link_rates(scenario, m, n, seq, g_powers))
        for k in g.devices:
            powers[k] = g_powers[k]
        to_m, tc_m, f_map = schedule_from_rates(cfg.server_frequency, link, T)
        t_o[m], t_c[m] = to_m, tc_m
        for k, fk in f_map.items():
            f[k] = fk
        for k, r in link.items():
            rates[k] = (to_m / T) * r

    schedule = Schedule(t_o=t_o, t_c=t_c, f=f)
    return Solution(
        allocation=allocation,
        orders=orders,
        powers=powers,
        schedule=schedule,
        rates=rates,
        mcor=mcor(rates),
    )
