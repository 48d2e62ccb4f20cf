"""Pipeline runner, Monte-Carlo sweeps and CSV emission.

The main pipeline is: draw a random allocation, optimize it, rebuild the
allocation by matching against that solution, then re-optimize.  Benchmarks
swap out the access scheme (NOMA/TDMA), the matching preferences, or the
power objective, but always run through the same four-step shape so the
comparison isolates the algorithmic difference.

All randomness derives from a master seed through a stable hash, so adding
algorithms or sweep cells never perturbs the other cells' draws and repeated
sweeps are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    BaselineKind,
    fixed_power_solution,
    noma_maximin,
    oracle_order_search,
    propfair_power,
    random_allocation,
    sumrate_power,
    tdma_maximin,
)
from .matching import MatchingState, allocate
from .rate_core import Solution, jain_index
from .scenario import SystemConfig, generate_scenario
from .sca_power import ScaSettings, bisection_mcor

CSV_HEADER = "param,value,seed,algo,mcor_bps,jain,sca_iters_mean,swaps,wall_ms"

# Sweepable parameter -> (SystemConfig field, boundary-unit conversion).
SWEEP_PARAMS = {
    "F_m": ("server_frequency", lambda v: float(v) * 1e6),
    "K": ("num_devices", int),
    "P_k": ("max_tx_power", lambda v: 10 ** (float(v) / 10.0) / 1000.0),
    "M": ("num_servers", int),
    "N": ("num_channels", int),
}


def derive_seed(*tokens) -> int:
    """Stable 63-bit seed from arbitrary tokens (counter-based splitting)."""
    digest = hashlib.sha256("|".join(str(t) for t in tokens).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class SweepSpec:
    """One swept parameter, its values, the per-cell run count and algorithms."""

    param: str
    values: tuple
    seeds: int
    algorithms: tuple[BaselineKind, ...]

    def __post_init__(self) -> None:
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"unknown sweep parameter: {self.param!r}")
        if not self.values or self.seeds < 1 or not self.algorithms:
            raise ValueError("sweep needs values, seeds >= 1 and algorithms")


@dataclass
class InstanceResult:
    """Everything one (config, seed, algorithm) run produced."""

    param: str
    value: object
    seed: int
    algo: BaselineKind
    mcor: float
    jain: float
    rates: np.ndarray
    sca_iters: list[int] = field(default_factory=list)
    swaps: int = 0
    wall_ms: float = 0.0
    solution: Solution | None = None
    extras: dict = field(default_factory=dict)

    def to_row(self, timing: bool = True) -> list[str]:
        iters_mean = float(np.mean(self.sca_iters)) if self.sca_iters else 0.0
        wall = self.wall_ms if timing else 0.0
        return [
            self.param,
            str(self.value),
            str(self.seed),
            self.algo.value,
            f"{self.mcor:.6f}",
            f"{self.jain:.6f}",
            f"{iters_mean:.4f}",
            str(self.swaps),
            f"{wall:.3f}",
        ]


def _match_then(scenario, first_solution, resolve, parts=2, preference_mode="min", tdma=False):
    """Shared match-and-reoptimize tail of the pipelines."""
    state = MatchingState.from_solution(
        scenario, first_solution, parts=parts, preference_mode=preference_mode, tdma=tdma
    )
    alloc, info = allocate(state)
    solution = resolve(alloc)
    return solution, info


def run_instance(
    config: SystemConfig,
    seed: int,
    algorithm: BaselineKind,
    settings: ScaSettings = ScaSettings(),
    algo_seed: int | None = None,
) -> InstanceResult:
    """Run one algorithm on one random instance; deterministic in its inputs."""
    scenario = generate_scenario(config, seed)
    rng = np.random.default_rng(seed if algo_seed is None else algo_seed)
    M, N, K = config.num_servers, config.num_channels, config.num_devices
    alloc0 = random_allocation(rng, M, N, K)

    sca_iters: list[int] = []
    swaps = 0
    extras: dict = {}
    t0 = time.perf_counter()

    if algorithm is BaselineKind.PROPOSED:
        sol0, st0 = bisection_mcor(scenario, alloc0, settings)
        sca_iters += st0.sca_iters
        extras["mcor_prematch"] = sol0.mcor

        def resolve(alloc):
            sol, st = bisection_mcor(scenario, alloc, settings)
            sca_iters.extend(st.sca_iters)
            return sol

        solution, info = _match_then(scenario, sol0, resolve)
        swaps = info["swaps"]
    elif algorithm is BaselineKind.ORACLE_ORDER:
        sol0, st0 = bisection_mcor(scenario, alloc0, settings)
        sca_iters += st0.sca_iters

        def resolve(alloc):
            sol, st = oracle_order_search(scenario, alloc, settings)
            sca_iters.extend(st.sca_iters)
            return sol

        solution, info = _match_then(scenario, sol0, resolve)
        swaps = info["swaps"]
    elif algorithm is BaselineKind.RSMA_MATCH_MAXMIN:
        # Sum-rate-driven matching (preferences evaluated on a sum-rate
        # optimized first stage), then max-min power re-optimization.
        sol0 = fixed_power_solution(scenario, alloc0, sumrate_power, settings)

        def resolve(alloc):
            sol, st = bisection_mcor(scenario, alloc, settings)
            sca_iters.extend(st.sca_iters)
            return sol

        solution, info = _match_then(scenario, sol0, resolve, preference_mode="sum")
        swaps = info["swaps"]
    elif algorithm is BaselineKind.RSMA_MATCH_SUMRATE:
        sol0 = fixed_power_solution(
            scenario, alloc0, sumrate_power, settings, order_rule="reversed"
        )
        solution, info = _match_then(
            scenario,
            sol0,
            lambda alloc: fixed_power_solution(
                scenario, alloc, sumrate_power, settings, order_rule="reversed"
            ),
            preference_mode="sum",
        )
        swaps = info["swaps"]
    elif algorithm is BaselineKind.RSMA_RANDOM_SUMRATE:
        solution = fixed_power_solution(
            scenario, alloc0, sumrate_power, settings, order_rule="reversed"
        )
    elif algorithm is BaselineKind.RSMA_RANDOM_PROPFAIR:
        solution = fixed_power_solution(scenario, alloc0, propfair_power, settings)
    elif algorithm is BaselineKind.NOMA_MATCH:
        sol0, st0 = noma_maximin(scenario, alloc0, settings)
        sca_iters += st0.sca_iters

        def resolve(alloc):
            sol, st = noma_maximin(scenario, alloc, settings)
            sca_iters.extend(st.sca_iters)
            return sol

        solution, info = _match_then(scenario, sol0, resolve, parts=1)
        swaps = info["swaps"]
    elif algorithm is BaselineKind.NOMA_RANDOM:
        solution, st = noma_maximin(scenario, alloc0, settings)
        sca_iters += st.sca_iters
    elif algorithm is BaselineKind.TDMA_MATCH:
        sol0 = tdma_maximin(scenario, alloc0)
        solution, info = _match_then(
            scenario,
            sol0,
            lambda alloc: tdma_maximin(scenario, alloc),
            parts=1,
            tdma=True,
        )
        swaps = info["swaps"]
    elif algorithm is BaselineKind.TDMA_RANDOM:
        solution = tdma_maximin(scenario, alloc0)
    else:
        raise ValueError(f"unhandled algorithm: {algorithm}")

    wall_ms = (time.perf_counter() - t0) * 1000.0
    extras.update(solution.extras)
    return InstanceResult(
        param="-",
        value="-",
        seed=seed,
        algo=algorithm,
        mcor=solution.mcor,
        jain=jain_index(solution.rates),
        rates=np.array(solution.rates),
        sca_iters=sca_iters,
        swaps=swaps,
        wall_ms=wall_ms,
        solution=solution,
        extras=extras,
    )


def run_sweep(
    config: SystemConfig,
    spec: SweepSpec,
    master_seed: int = 0,
    settings: ScaSettings = ScaSettings(),
    out: str | Path | None = None,
    timing: bool = True,
    keep_solutions: bool = False,
) -> list[InstanceResult]:
    """Cross product of (value, seed, algorithm); returns rows, optionally CSV.

    A failure in one cell is recorded as a zero-rate row and the sweep
    continues.
    """
    field_name, conv = SWEEP_PARAMS[spec.param]
    results: list[InstanceResult] = []
    for value in spec.values:
        cell_config = config.with_overrides(**{field_name: conv(value)})
        for run in range(spec.seeds):
            seed = derive_seed(master_seed, spec.param, value, run)
            for algo in spec.algorithms:
                algo_seed = derive_seed(master_seed, spec.param, value, run, algo.value)
                try:
                    res = run_instance(cell_config, seed, algo, settings, algo_seed)
                except Exception as exc:  # keep sweeping, record the failure
                    res = InstanceResult(
                        param=spec.param,
                        value=value,
                        seed=seed,
                        algo=algo,
                        mcor=0.0,
                        jain=1.0,
                        rates=np.zeros(cell_config.num_devices),
                        extras={"error": repr(exc)},
                    )
                res.param = spec.param
                res.value = value
                if not keep_solutions:
                    res.solution = None
                results.append(res)
    if out is not None:
        write_csv(results, out, timing=timing)
    return results


def render_csv(results: list[InstanceResult], timing: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for res in results:
        writer.writerow(res.to_row(timing=timing))
    return buf.getvalue()


def write_csv(results: list[InstanceResult], path: str | Path, timing: bool = True) -> None:
    Path(path).write_text(render_csv(results, timing=timing))


def cell_means(results: list[InstanceResult]) -> dict[tuple, dict[str, float]]:
    """Per (value, algo) mean and stddev of mcor and jain."""
    cells: dict[tuple, list[InstanceResult]] = {}
    for res in results:
        cells.setdefault((res.value, res.algo), []).append(res)
    out = {}
    for key, rows in cells.items():
        mcors = np.array([r.mcor for r in rows])
        jains = np.array([r.jain for r in rows])
        out[key] = {
            "mcor_mean": float(mcors.mean()),
            "mcor_std": float(mcors.std()),
            "jain_mean": float(jains.mean()),
            "jain_std": float(jains.std()),
            "runs": len(rows),
        }
    return out


def convergence_stats(results: list[InstanceResult]) -> dict[str, np.ndarray]:
    """Empirical CDFs of SCA iteration counts and swap counts."""
    iters = np.array(
        sorted(it for res in results for it in res.sca_iters), dtype=float
    )
    swaps = np.array(sorted(res.swaps for res in results), dtype=float)
    out: dict[str, np.ndarray] = {}
    if iters.size:
        out["sca_iters"] = iters
        out["sca_cdf"] = np.arange(1, iters.size + 1) / iters.size
    if swaps.size:
        out["swaps"] = swaps
        out["swap_cdf"] = np.arange(1, swaps.size + 1) / swaps.size
    return out


def cdf_at(values: np.ndarray, cdf: np.ndarray, x: float) -> float:
    """Empirical CDF evaluated at x (fraction of samples <= x)."""
    return float(np.searchsorted(values, x, side="right")) / values.size


def table1_comparison(
    config: SystemConfig,
    runs: int = 100,
    device_counts: tuple[int, ...] = (2, 3),
    master_seed: int = 0,
    settings: ScaSettings = ScaSettings(),
) -> list[dict]:
    """Single-server, single-channel comparison of the proposed order
    heuristic against the exhaustive decoding-order oracle."""
    rows = []
    for K in device_counts:
        cell = config.with_overrides(num_servers=1, num_channels=1, num_devices=K)
        for algo in (BaselineKind.PROPOSED, BaselineKind.ORACLE_ORDER):
            mcors, walls = [], []
            for run in range(runs):
                seed = derive_seed(master_seed, "table1", K, run)
                algo_seed = derive_seed(master_seed, "table1", K, run, algo.value)
                res = run_instance(cell, seed, algo, settings, algo_seed)
                mcors.append(res.mcor)
                walls.append(res.wall_ms)
            rows.append(
                {
                    "K": K,
                    "algo": algo.value,
                    "mcor_mean_bps": float(np.mean(mcors)),
                    "wall_ms_mean": float(np.mean(walls)),
                    "runs": runs,
                }
            )
    return rows
