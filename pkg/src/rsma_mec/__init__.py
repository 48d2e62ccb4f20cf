"""Max-min fair computation offloading for RSMA-assisted multi-server MEC networks.

Library layout:
  scenario   -- network instance generation (topology, fading, budgets)
  rate_core  -- allocations, SIC rates, closed-form time/frequency schedule
  sca_power  -- per-server power + decoding-order optimization, bisection on the
                minimum computation offloading rate (MCOR)
  matching   -- channel allocation (Gale-Shapley + swap refinement) and MEC
                server allocation (Gale-Shapley over (channel, group) units)
  baselines  -- benchmark algorithms (NOMA, TDMA, sum-rate, prop-fair, oracle)
  harness    -- pipeline runner, Monte-Carlo sweeps, CSV/figure emission
"""

from .scenario import SystemConfig, Scenario, generate_scenario, mean_channel_gain
from .rate_core import Allocation, Schedule, Solution, mcor, jain_index

__all__ = [
    "SystemConfig",
    "Scenario",
    "generate_scenario",
    "mean_channel_gain",
    "Allocation",
    "Schedule",
    "Solution",
    "mcor",
    "jain_index",
]

__version__ = "0.1.0"
