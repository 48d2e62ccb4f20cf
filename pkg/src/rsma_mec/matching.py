"""Channel and MEC-server allocation via matching games.

Channel allocation is a one-to-many matching with externalities: channels
propose to devices (Gale-Shapley style), devices keep the best offer, and a
swap-refinement pass removes pairwise blocking swaps.  Server allocation then
matches whole (channel, device-group) units to servers under a computing
capacity budget, so every channel group lands on exactly one server.

Preferences are offloading-rate values evaluated against the powers and time
split of the preceding optimization stage; they are deliberately stale (the
final schedule does not exist yet at matching time) and recomputed after
matching by the main solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rate_core import Allocation, Solution, group_link_rates, make_allocation
from .scenario import Scenario

# Relative slack so float noise can neither create nor hide a strict gain.
_REL_EPS = 1e-12


@dataclass
class MatchingState:
    """Immutable snapshot the preference evaluations read from.

    powers/t_o/f come from the optimization stage run on the previous
    allocation.  parts=1 restricts every device to a single sub-message.
    preference_mode selects the channel-side aggregation: "min" ranks groups
    by their worst member (max-min matching), "sum" by the group total
    (sum-rate matching).
    """

    scenario: Scenario
    powers: np.ndarray  # (K, 2) W
    t_o: np.ndarray  # (M,) s
    f: np.ndarray  # (K,) bits/s
    parts: int = 2
    preference_mode: str = "min"
    tdma: bool = False  # orthogonal slots: time-shared single-user rates
    trace: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.preference_mode not in ("min", "sum"):
            raise ValueError(f"unknown preference mode: {self.preference_mode!r}")

    @classmethod
    def from_solution(
        cls,
        scenario: Scenario,
        solution: Solution,
        parts: int = 2,
        preference_mode: str = "min",
        tdma: bool = False,
    ) -> "MatchingState":
        return cls(
            scenario=scenario,
            powers=np.array(solution.powers, dtype=float),
            t_o=np.array(solution.schedule.t_o, dtype=float),
            f=np.array(solution.schedule.f, dtype=float),
            parts=parts,
            preference_mode=preference_mode,
            tdma=tdma,
        )

    def powers_for(self, k: int) -> np.ndarray:
        """State powers if the device has any, else the symmetric default."""
        if self.powers[k].sum() > 0.0:
            return self.powers[k]
        P = self.scenario.config.max_tx_power
        if self.parts == 2:
            return np.array([P / 2.0, P / 2.0])
        return np.array([P, 0.0])


def _eval_order(state: MatchingState, m: int, n: int, group: tuple[int, ...]):
    """Init-heuristic decode order for an evaluation group at (m, n)."""
    h = state.scenario.gains[m, n]
    ranked = sorted(group, key=lambda k: (-h[k], k))
    seq = [(k, 1) for k in ranked]
    if state.parts == 2:
        seq += [(k, 2) for k in ranked]
    return tuple(seq)


def _link_rates_at(
    state: MatchingState, m: int, n: int, group: tuple[int, ...]
) -> dict[int, float]:
    """Raw per-member link rates at one server (no time-split scaling)."""
    cfg = state.scenario.config
    if state.tdma:
        # Orthogonal slots with minimal slot lengths: the group's common rate
        # is theta = F / sum_k (F/R_k + 1), the same for every member, so
        # rank candidates directly by that closed form.
        F = cfg.server_frequency
        link = {}
        for k in group:
            snr = state.scenario.gains[m, n, k] * cfg.max_tx_power / cfg.noise_power
            link[k] = cfg.bandwidth * math.log2(1.0 + snr)
        if not link or any(r <= 0.0 for r in link.values()):
            return {k: 0.0 for k in group}
        theta = F / sum(F / r + 1.0 for r in link.values())
        return {k: theta for k in group}
    powers = np.zeros((cfg.num_devices, 2))
    for k in group:
        powers[k] = state.powers_for(k)
    order = _eval_order(state, m, n, group)
    return group_link_rates(state.scenario, m, n, order, powers)


def _member_values_at(
    state: MatchingState, m: int, n: int, group: tuple[int, ...]
) -> dict[int, float]:
    """Per-member offloading-rate value (t_o/T * link rate) at one server."""
    if state.tdma:
        # already a common offloading rate; no stale time split to apply
        return _link_rates_at(state, m, n, group)
    T = state.scenario.config.deadline
    scale = state.t_o[m] / T
    return {k: scale * r for k, r in _link_rates_at(state, m, n, group).items()}


def _member_values(state: MatchingState, n: int, group: tuple[int, ...]) -> dict[int, float]:
    """Per-member value minimized over all candidate servers."""
    M = state.scenario.config.num_servers
    out: dict[int, float] = {}
    for m in range(M):
        vals = _member_values_at(state, m, n, group)
        for k, v in vals.items():
            out[k] = v if k not in out else min(out[k], v)
    return out


def device_channel_pref(state: MatchingState, k: int, n: int, group: tuple[int, ...]) -> float:
    """Value device k assigns to joining channel n's current group.

    The candidate is inserted into the group (default powers if it has none)
    and its offloading rate is minimized over the candidate servers; stronger
    co-channel interferers push the value down.
    """
    if k in group:
        raise ValueError(f"device {k} already in the group on channel {n}")
    return _member_values(state, n, tuple(group) + (k,))[k]


def _group_value(state: MatchingState, n: int, group: tuple[int, ...]) -> float:
    """Channel-side utility of a group: worst member, or the total in sum mode."""
    if not group:
        return 0.0
    vals = _member_values(state, n, group)
    if state.preference_mode == "sum":
        return sum(vals.values())
    return min(vals.values())


def gs_channel_matching(state: MatchingState) -> dict[int, list[int]]:
    """Channels propose to devices; devices keep their best offer.

    Each round every channel with untried devices proposes to the candidate
    that maximizes its group utility; a device holds the channel maximizing
    its own inserted value (ties to the lower channel index) and may switch
    when a better offer arrives.  Terminates because each proposal consumes
    one (channel, device) pair.  Returns channel -> member list.
    """
    cfg = state.scenario.config
    N, K = cfg.num_channels, cfg.num_devices
    available = {n: set(range(K)) for n in range(N)}
    groups: dict[int, list[int]] = {n: [] for n in range(N)}
    match: dict[int, int | None] = {k: None for k in range(K)}

    while any(available.values()):
        proposals: dict[int, list[int]] = {}
        for n in range(N):
            if not available[n]:
                continue
            group = tuple(groups[n])
            cands = [k for k in available[n] if k not in group]
            if not cands:
                available[n].clear()
                continue
            best = max(cands, key=lambda k: (_group_value(state, n, group + (k,)), -k))
            available[n].discard(best)
            proposals.setdefault(best, []).append(n)
            state.trace.append(("propose", n, best))
        for k, offers in proposals.items():
            cands = list(offers)
            if match[k] is not None:
                cands.append(match[k])
            def _value(n: int) -> float:
                others = tuple(q for q in groups[n] if q != k)
                return _member_values(state, n, others + (k,))[k]
            best_n = max(sorted(set(cands)), key=lambda n: (_value(n), -n))
            if best_n != match[k]:
                if match[k] is not None:
                    groups[match[k]].remove(k)
                groups[best_n].append(k)
                match[k] = best_n
                state.trace.append(("accept", best_n, k))
    return {n: sorted(groups[n]) for n in range(N)}


def is_swap_blocking(
    state: MatchingState, groups: dict[int, list[int]], k: int, kp: int
) -> bool:
    """True if exchanging the channels of k and kp weakly helps all four
    involved parties (both devices and both channels) and strictly helps one."""
    n = next(c for c, g in groups.items() if k in g)
    np_ = next(c for c, g in groups.items() if kp in g)
    if n == np_:
        raise ValueError("swap requires devices on different channels")

    old_n = tuple(sorted(groups[n]))
    old_np = tuple(sorted(groups[np_]))
    new_n = tuple(sorted([q for q in old_n if q != k] + [kp]))
    new_np = tuple(sorted([q for q in old_np if q != kp] + [k]))

    before = {
        "k": _member_values(state, n, old_n)[k],
        "kp": _member_values(state, np_, old_np)[kp],
        "cn": _group_value(state, n, old_n),
        "cnp": _group_value(state, np_, old_np),
    }
    after = {
        "k": _member_values(state, np_, new_np)[k],
        "kp": _member_values(state, n, new_n)[kp],
        "cn": _group_value(state, n, new_n),
        "cnp": _group_value(state, np_, new_np),
    }
    improves = False
    for key in before:
        lo, hi = before[key], after[key]
        tol = _REL_EPS * max(abs(lo), abs(hi), 1.0)
        if hi < lo - tol:
            return False
        if hi > lo + tol:
            improves = True
    return improves


def swap_refine(
    state: MatchingState, groups: dict[int, list[int]], max_swaps: int | None = None
) -> tuple[dict[int, list[int]], int]:
    """Apply blocking swaps (lexicographic scan, first found) until stable.

    Returns the refined groups and the number of swaps applied.  The cap
    (default 10*K^2) guards against cycling under externalities.
    """
    K = state.scenario.config.num_devices
    cap = 10 * K * K if max_swaps is None else max_swaps
    groups = {n: sorted(g) for n, g in groups.items()}
    swaps = 0
    while swaps < cap:
        channel_of = {k: n for n, g in groups.items() for k in g}
        found = None
        for k in range(K):
            for kp in range(k + 1, K):
                if k not in channel_of or kp not in channel_of:
                    continue
                if channel_of[k] == channel_of[kp]:
                    continue
                if is_swap_blocking(state, groups, k, kp):
                    found = (k, kp)
                    break
            if found:
                break
        if found is None:
            break
        k, kp = found
        n, np_ = channel_of[k], channel_of[kp]
        groups[n].remove(k)
        groups[np_].remove(kp)
        groups[n].append(kp)
        groups[np_].append(k)
        groups[n].sort()
        groups[np_].sort()
        swaps += 1
        state.trace.append(("swap", k, kp))
    return groups, swaps


def gs_mec_matching(
    state: MatchingState,
    groups: dict[int, list[int]],
    rescue_unmatched: bool = False,
) -> tuple[dict[int, int], list[int]]:
    """Match each nonempty (channel, group) unit to one server under capacity.

    A unit proposes to servers in decreasing order of its worst member's
    offloading-rate value there; a server accepts when every member's
    computing frequency (from the preceding stage) fits its residual
    capacity, then its residual drops by the unit's total demand (no
    eviction).  Returns (channel -> server, list of unmatched channels).
    With rescue_unmatched, capacity-stranded units are placed at the
    max-residual server anyway.
    """
    cfg = state.scenario.config
    M = cfg.num_servers
    F = cfg.server_frequency
    units = [n for n, g in groups.items() if g]
    demand = {n: float(sum(state.f[k] for k in groups[n])) for n in units}
    peak = {n: float(max(state.f[k] for k in groups[n])) for n in units}

    def unit_pref(n: int, m: int) -> float:
        vals = _member_values_at(state, m, n, tuple(groups[n]))
        if state.preference_mode == "sum":
            return sum(vals.values())
        return min(vals.values())

    prefs = {
        n: sorted(range(M), key=lambda m: (-unit_pref(n, m), m)) for n in units
    }
    residual = {m: F for m in range(M)}
    assigned: dict[int, int] = {}
    unmatched: list[int] = []
    pointer = {n: 0 for n in units}
    queue = sorted(units)
    while queue:
        n = queue.pop(0)
        placed = False
        while pointer[n] < M:
            m = prefs[n][pointer[n]]
            pointer[n] += 1
            if peak[n] <= residual[m] + _REL_EPS * F:
                assigned[n] = m
                residual[m] = max(residual[m] - demand[n], 0.0)
                state.trace.append(("assign", n, m))
                placed = True
                break
            state.trace.append(("reject", n, m))
        if not placed:
            unmatched.append(n)
    if rescue_unmatched and unmatched:
        for n in list(unmatched):
            m = max(range(M), key=lambda m: (residual[m], -m))
            assigned[n] = m
            residual[m] -= demand[n]
            state.trace.append(("rescue", n, m))
        unmatched = []
    return assigned, unmatched


def allocate(
    state: MatchingState, rescue_unmatched: bool = False
) -> tuple[Allocation, dict]:
    """Full matching stage: channel matching, swap refinement, server matching.

    Returns the allocation plus bookkeeping (swap count, unmatched channels).
    Devices on an unmatched channel keep their channel but get no server and
    therefore a zero rate downstream.
    """
    cfg = state.scenario.config
    groups = gs_channel_matching(state)
    groups, swaps = swap_refine(state, groups)
    assigned, unmatched = gs_mec_matching(state, groups, rescue_unmatched)

    channel_of = {k: n for n, g in groups.items() for k in g}
    server_of = {
        k: assigned.get(n, -1) for k, n in channel_of.items()
    }
    allocation = make_allocation(
        cfg.num_servers, cfg.num_channels, cfg.num_devices, server_of, channel_of
    )
    info = {"swaps": swaps, "unmatched_channels": unmatched}
    return allocation, info
