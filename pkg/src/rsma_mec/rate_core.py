"""Core rate and scheduling computations.

Holds the value types shared by every algorithm (allocations, decoding
orders, powers, schedules, solutions) plus the SIC sub-message rates and the
closed-form time/frequency schedule.  Everything here is a pure function of
immutable inputs.

A decoding order for one server/channel group is a tuple of (device, part)
pairs listed in decode sequence; part is 1 or 2 (1 only, for single-message
NOMA groups).  Earlier entries are decoded first and see later entries as
interference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import Scenario

OrderSeq = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class Allocation:
    """Binary server assignment alpha (M, K) and channel assignment beta (N, K)."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self) -> None:
        self.alpha.setflags(write=False)
        self.beta.setflags(write=False)

    @property
    def num_servers(self) -> int:
        return self.alpha.shape[0]

    @property
    def num_channels(self) -> int:
        return self.beta.shape[0]

    @property
    def num_devices(self) -> int:
        return self.alpha.shape[1]

    def server_of(self, k: int) -> int:
        """Assigned server index, or -1 if unallocated."""
        idx = np.flatnonzero(self.alpha[:, k])
        return int(idx[0]) if idx.size else -1

    def channel_of(self, k: int) -> int:
        idx = np.flatnonzero(self.beta[:, k])
        return int(idx[0]) if idx.size else -1

    def channel_group(self, n: int) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.beta[n])]

    def server_devices(self, m: int) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.alpha[m])]

    def is_valid(self) -> bool:
        """Check the at-most-one-server, at-most-one-channel and the
        one-server-per-channel coupling constraints."""
        if self.alpha.sum(axis=0).max(initial=0) > 1:
            return False
        if self.beta.sum(axis=0).max(initial=0) > 1:
            return False
        for n in range(self.num_channels):
            servers = {self.server_of(k) for k in self.channel_group(n)}
            servers.discard(-1)
            if len(servers) > 1:
                return False
        return True


def make_allocation(M: int, N: int, K: int, server_of: dict[int, int], channel_of: dict[int, int]) -> Allocation:
    alpha = np.zeros((M, K), dtype=np.int8)
    beta = np.zeros((N, K), dtype=np.int8)
    for k, m in server_of.items():
        if m >= 0:
            alpha[m, k] = 1
    for k, n in channel_of.items():
        if n >= 0:
            beta[n, k] = 1
    return Allocation(alpha=alpha, beta=beta)


@dataclass(frozen=True)
class Schedule:
    """Per-server offload/compute split and per-device computing frequency."""

    t_o: np.ndarray  # (M,) s
    t_c: np.ndarray  # (M,) s
    f: np.ndarray  # (K,) bits/s

    def __post_init__(self) -> None:
        self.t_o.setflags(write=False)
        self.t_c.setflags(write=False)
        self.f.setflags(write=False)


@dataclass(frozen=True)
class Solution:
    """Full solver output: who transmits what, when, and at which rate."""

    allocation: Allocation
    orders: dict[tuple[int, int], OrderSeq]  # (server, channel) -> decode sequence
    powers: np.ndarray  # (K, 2) W
    schedule: Schedule
    rates: np.ndarray  # (K,) per-device offload rate, bits/s
    mcor: float  # bits/s
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "alpha": self.allocation.alpha.tolist(),
            "beta": self.allocation.beta.tolist(),
            "orders": {f"{m},{n}": [list(e) for e in seq] for (m, n), seq in self.orders.items()},
            "powers_w": self.powers.tolist(),
            "t_o_s": self.schedule.t_o.tolist(),
            "t_c_s": self.schedule.t_c.tolist(),
            "f_bps": self.schedule.f.tolist(),
            "rates_bps": self.rates.tolist(),
            "mcor_bps": self.mcor,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "Solution":
        doc = json.loads(text)
        alloc = Allocation(alpha=np.array(doc["alpha"], dtype=np.int8), beta=np.array(doc["beta"], dtype=np.int8))
        orders = {
            tuple(int(x) for x in key.split(",")): tuple((int(k), int(i)) for k, i in seq)
            for key, seq in doc["orders"].items()
        }
        sched = Schedule(
            t_o=np.array(doc["t_o_s"], dtype=float),
            t_c=np.array(doc["t_c_s"], dtype=float),
            f=np.array(doc["f_bps"], dtype=float),
        )
        return Solution(
            allocation=alloc,
            orders=orders,
            powers=np.array(doc["powers_w"], dtype=float),
            schedule=sched,
            rates=np.array(doc["rates_bps"], dtype=float),
            mcor=float(doc["mcor_bps"]),
        )


def interference_set(order_seq: OrderSeq, k: int, i: int) -> list[tuple[int, int]]:
    """Sub-messages decoded after (k, i) in the same group (residual interferers)."""
    try:
        pos = order_seq.index((k, i))
    except ValueError:
        raise KeyError(f"sub-message ({k}, {i}) not in decoding order") from None
    return list(order_seq[pos + 1 :])


def submessage_rate(
    scenario: Scenario,
    m: int,
    n: int,
    order_seq: OrderSeq,
    powers: np.ndarray,
    k: int,
    i: int,
) -> float:
    """Achievable SIC decode rate of sub-message (k, i) at server m, channel n."""
    cfg = scenario.config
    noise = cfg.noise_power
    interf = sum(scenario.gains[m, n, kp] * powers[kp, ip - 1] for kp, ip in interference_set(order_seq, k, i))
    signal = scenario.gains[m, n, k] * powers[k, i - 1]
    return cfg.bandwidth * math.log2(1.0 + signal / (noise + interf))


def group_link_rates(scenario: Scenario, m: int, n: int, order_seq: OrderSeq, powers: np.ndarray) -> dict[int, float]:
    """Per-device link rate sum over its sub-messages, computed in one pass."""
    cfg = scenario.config
    scale = cfg.bandwidth / math.log(2.0)
    rates: dict[int, float] = {}
    interf = cfg.noise_power
    # Walk the order backwards: each sub-message sees the accumulated power of
    # everything decoded after it.
    for k, i in reversed(order_seq):
        p_recv = scenario.gains[m, n, k] * powers[k, i - 1]
        rate = scale * math.log1p(p_recv / interf)
        rates[k] = rates.get(k, 0.0) + rate
        interf += p_recv
    return rates


def schedule_from_rates(F_m: float, link_rates: dict[int, float], T: float) -> tuple[float, float, dict[int, float]]:
    """Closed-form feasible schedule for one server.

    t_o = T*F/(F + sum R), f_k = F*R_k/sum R, t_c = T - t_o.  When no device
    offloads anything (sum R = 0) the whole window is left as offload time and
    no computing frequency is assigned.
    """
    total = sum(link_rates.values())
    if total <= 0.0:
        return T, 0.0, {k: 0.0 for k in link_rates}
    t_o = T * F_m / (F_m + total)
    t_c = T * total / (F_m + total)
    f = {k: F_m * r / total for k, r in link_rates.items()}
    return t_o, t_c, f


def offload_rate(t_o: float, T: float, link_rate: float) -> float:
    """Effective offloading rate over the deadline window."""
    return (t_o / T) * link_rate


def mcor(rates) -> float:
    """Minimum computation offloading rate across devices."""
    rates = list(rates)
    if not rates:
        raise ValueError("empty rate sequence")
    return float(min(rates))


def jain_index(rates) -> float:
    """Jain's fairness index (sum r)^2 / (K * sum r^2); 1.0 when all rates are 0."""
    rates = np.asarray(list(rates), dtype=float)
    if rates.size == 0:
        raise ValueError("empty rate sequence")
    total_sq = float(rates.sum()) ** 2
    denom = rates.size * float((rates**2).sum())
    if denom == 0.0:
        return 1.0
    return total_sq / denom
