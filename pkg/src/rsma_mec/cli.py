"""Command-line entry point.

Subcommands:
  run          one algorithm on one seeded instance; prints a summary and can
               dump the full solution as JSON
  sweep        Monte-Carlo sweep over one parameter; writes the CSV and,
               optionally, a figure next to it
  table1       proposed vs exhaustive-order oracle at M=N=1
  convergence  SCA-iteration and swap-count CDFs at the default setup

Config files are plain key=value lines (boundary units: MHz, dBm, Mbps, km);
--set overrides individual keys.  Solver keys (sca_*, alt_*, bisection_*,
inner_*) are picked up by the solver settings.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .baselines import BaselineKind
from .harness import (
    SweepSpec,
    cell_means,
    convergence_stats,
    render_csv,
    run_instance,
    run_sweep,
    table1_comparison,
)
from .scenario import load_config
from .sca_power import ScaSettings

ALGO_NAMES = [kind.value for kind in BaselineKind]


def _parse_pairs(items: list[str] | None) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        pairs[key.strip()] = value.strip()
    return pairs


def _load(args) -> tuple:
    pairs = _parse_pairs(getattr(args, "set", None))
    config = load_config(getattr(args, "config", None), overrides=pairs)
    settings = ScaSettings.from_pairs(pairs)
    return config, settings


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config or solver key (repeatable)")


def cmd_run(args) -> int:
    config, settings = _load(args)
    algo = BaselineKind.from_name(args.algo)
    res = run_instance(config, args.seed, algo, settings)
    print(f"algo={algo.value} seed={args.seed}")
    print(f"mcor = {res.mcor / 1e6:.6f} Mbps, jain = {res.jain:.4f}")
    print("rates (Mbps):", " ".join(f"{r / 1e6:.4f}" for r in res.rates))
    if res.sca_iters:
        mean = sum(res.sca_iters) / len(res.sca_iters)
        print(f"sca invocations = {len(res.sca_iters)}, mean iters = {mean:.2f}")
    print(f"swaps = {res.swaps}, wall = {res.wall_ms:.1f} ms")
    if args.json and res.solution is not None:
        Path(args.json).write_text(res.solution.to_json())
        print(f"solution written to {args.json}")
    return 0


def cmd_sweep(args) -> int:
    config, settings = _load(args)
    algos = tuple(BaselineKind.from_name(name) for name in args.algos.split(","))
    values = tuple(args.values.split(","))
    spec = SweepSpec(param=args.param, values=values, seeds=args.runs, algorithms=algos)
    results = run_sweep(
        config, spec,
        master_seed=args.master_seed,
        settings=settings,
        out=args.out,
        timing=not args.no_timing,
    )
    print(f"{len(results)} rows written to {args.out}")
    for (value, algo), agg in sorted(
        cell_means(results).items(), key=lambda kv: (str(kv[0][0]), kv[0][1].value)
    ):
        print(
            f"{args.param}={value} {algo.value}: "
            f"mean mcor {agg['mcor_mean'] / 1e6:.4f} Mbps "
            f"(std {agg['mcor_std'] / 1e6:.4f}), jain {agg['jain_mean']:.4f}"
        )
    if args.plot:
        from .plots import plot_sweep

        fig_path = Path(args.out).with_suffix(".png")
        plot_sweep(results, fig_path)
        print(f"figure written to {fig_path}")
    return 0


def cmd_table1(args) -> int:
    config, settings = _load(args)
    rows = table1_comparison(
        config,
        runs=args.runs,
        device_counts=tuple(int(k) for k in args.devices.split(",")),
        master_seed=args.master_seed,
        settings=settings,
    )
    print(f"{'K':>3} {'algorithm':>14} {'mean MCOR (Mbps)':>18} {'mean wall (ms)':>15}")
    for row in rows:
        print(
            f"{row['K']:>3} {row['algo']:>14} "
            f"{row['mcor_mean_bps'] / 1e6:>18.4f} {row['wall_ms_mean']:>15.1f}"
        )
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2))
        print(f"table written to {args.out}")
    return 0


def cmd_convergence(args) -> int:
    config, settings = _load(args)
    spec = SweepSpec(
        param="K",
        values=(config.num_devices,),
        seeds=args.runs,
        algorithms=(BaselineKind.PROPOSED,),
    )
    results = run_sweep(config, spec, master_seed=args.master_seed, settings=settings)
    stats = convergence_stats(results)
    if "sca_iters" in stats:
        iters = stats["sca_iters"]
        within5 = float((iters <= 5).mean())
        print(f"SCA invocations: {iters.size}, within 5 iterations: {within5:.1%}")
    if "swaps" in stats:
        print(f"mean swaps per instance: {stats['swaps'].mean():.2f}")
    if args.out:
        Path(args.out).write_text(render_csv(results, timing=not args.no_timing))
        print(f"rows written to {args.out}")
        if args.plot:
            from .plots import plot_convergence

            fig_path = Path(args.out).with_suffix(".png")
            plot_convergence(stats, fig_path)
            print(f"figure written to {fig_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsma-mec",
        description="Max-min fair computation offloading for RSMA-assisted MEC networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one algorithm on one instance")
    _add_common(p)
    p.add_argument("--algo", choices=ALGO_NAMES, default="Proposed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", type=Path, default=None, help="dump solution JSON here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep over one parameter")
    _add_common(p)
    p.add_argument("--param", choices=["F_m", "K", "P_k", "M", "N"], required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--algos", default="Proposed", help="comma-separated algorithm names")
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-timing", action="store_true", help="zero the wall_ms column")
    p.add_argument("--plot", action="store_true", help="render a figure next to the CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("table1", help="proposed vs exhaustive-order oracle (M=N=1)")
    _add_common(p)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--devices", default="2,3", help="comma-separated device counts")
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("convergence", help="SCA/swap convergence statistics")
    _add_common(p)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_convergence)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
