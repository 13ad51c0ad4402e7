#!/usr/bin/env python3
"""
Command-Line Interface for the signal malfunction laboratory.

This module provides the `signal-lab` command: dataset generation, single
experiments, sweeps, the influence analysis and reports over metrics files.
"""

import argparse
import logging
import os
import sys
import traceback
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

from signal_lab.config import (
    CONTROLLERS, ABLATIONS, FEATURE_MODES, GRID_BLOCK_M, GRID_COLS, GRID_ROWS, ExperimentSettings,
    config_digest, get_controller_config, load_settings,
)
from signal_lab.core.diffusion import MalfunctionMask
from signal_lab.core.network import load_network, write_network
from signal_lab.core.simulator import write_flow
from signal_lab.experiment.datasets import FlowSpec, generate_flow, generate_grid
from signal_lab.experiment.harness import (
    SWEEP_AXES, ExperimentRunner, RunResult, influence_report, report, sweep,
)

logger = logging.getLogger(__name__)


def create_parser() -> argparse.ArgumentParser:
    """
    Creates and configures the argument parser.

    Returns:
        argparse.ArgumentParser: Configured argument parser
    """
    parser = argparse.ArgumentParser(
        prog='signal-lab',
        description='Traffic signal control under signal malfunctions',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    parser.add_argument('-q', '--quiet', action='store_true', help='Only warnings and errors')
    commands = parser.add_subparsers(dest='command', metavar='COMMAND', required=True)

    grid = commands.add_parser('gen-grid', help='Write a lattice network file')
    grid.add_argument('--rows', type=int, default=GRID_ROWS, help=f'Rows (default: {GRID_ROWS})')
    grid.add_argument('--cols', type=int, default=GRID_COLS, help=f'Columns (default: {GRID_COLS})')
    grid.add_argument('--block', type=float, default=GRID_BLOCK_M, metavar='METERS',
                      help=f'Block length (default: {GRID_BLOCK_M:g})')
    grid.add_argument('--out', required=True, metavar='FILE', help='Network file to write')

    flow = commands.add_parser('gen-flow', help='Write a steady random-OD flow file')
    flow.add_argument('--network', required=True, metavar='FILE', help='Network file')
    flow.add_argument('--rate', type=float, default=FlowSpec.rate, metavar='VEH',
                      help='Vehicles per 300 s (default: 1200)')
    flow.add_argument('--duration', type=float, default=FlowSpec.duration_s, metavar='SECONDS',
                      help='Flow length (default: 7200)')
    flow.add_argument('--od-policy', choices=['all', 'boundary'], default='all',
                      help='Origin/destination candidates (default: all)')
    flow.add_argument('--seed', type=int, default=0, help='Random seed (default: 0)')
    flow.add_argument('--out', required=True, metavar='FILE', help='Flow file to write')

    for name, text in (('run', 'Train/evaluate one controller with and without malfunctions'),
                       ('sweep', 'Sweep diffusion steps or the number of malfunctions')):
        sub = commands.add_parser(name, help=text)
        _add_experiment_arguments(sub)
        if name == 'sweep':
            sub.add_argument('--axis', choices=SWEEP_AXES, required=True, help='Swept parameter')
            sub.add_argument('--values', required=True, metavar='V,V,...',
                             help='Comma-separated integer values')

    influence = commands.add_parser('influence', help='Influence per hop distance')
    influence.add_argument('--network', metavar='FILE', help='Network file (default: 4x4 grid)')
    influence.add_argument('--malfunction', metavar='ID,ID,...', default='',
                           help='Malfunctioning intersections (source = lowest id)')
    influence.add_argument('--k', type=int, default=10, help='Diffusion steps (default: 10)')
    influence.add_argument('--alpha', type=float, default=0.15, help='Restart probability (default: 0.15)')
    influence.add_argument('--out', metavar='FILE', help='CSV destination')

    rep = commands.add_parser('report', help='Summarize metrics CSV files')
    rep.add_argument('paths', nargs='+', metavar='METRICS_CSV', help='Metrics files')

    parser.add_argument(
        '--list-controllers',
        action='store_true',
        help='List the available controllers and exit'
    )
    return parser


def _add_experiment_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument('--config', metavar='FILE', help='key=value experiment file')
    sub.add_argument('--seed', type=int, metavar='U64', help='Run a single seed')
    sub.add_argument('--out', metavar='DIR', help='Output directory')
    sub.add_argument('--controller', choices=list(CONTROLLERS.keys()), help='Controller')
    sub.add_argument('--malfunction', metavar='ID,ID,...',
                     help="Malfunctioning intersections ('none' for no malfunction)")
    sub.add_argument('--ablation', choices=list(ABLATIONS.keys()), help='Ablation variant')
    sub.add_argument('--features', choices=list(FEATURE_MODES.keys()), help='State features')
    sub.add_argument('--checkpoint', metavar='FILE',
                     help='Checkpoint of learning controllers (default: inside --out)')
    sub.add_argument('--resume', action='store_true',
                     help='Continue training from an existing checkpoint')


def parse_value_list(text: str) -> List[int]:
    """
    Parses the sweep values '1,2,5' into [1, 2, 5].

    Raises:
        ValueError: If the list is empty or an entry is not an integer.
    """
    try:
        values = [int(part) for part in text.split(',') if part.strip()]
    except ValueError as exc:
        raise ValueError(
            f"Invalid sweep values: '{text}'. Use comma-separated integers, e.g. 1,2,5"
        ) from exc
    if not values:
        raise ValueError("Invalid sweep values: at least one value is required.")
    return values


def parse_id_list(text: str) -> tuple:
    """
    Parses '3,5,7' into (3, 5, 7); '' and 'none' give ().

    Raises:
        ValueError: On a non-integer entry.
    """
    if text.strip().lower() in {'', 'none'}:
        return ()
    try:
        return tuple(int(part) for part in text.split(',') if part.strip())
    except ValueError as exc:
        raise ValueError(
            f"Invalid id list: '{text}'. Use comma-separated integers, e.g. 5,6"
        ) from exc


def settings_from_args(args: argparse.Namespace) -> ExperimentSettings:
    """Loads --config (if any) and applies the command-line overrides."""
    settings = load_settings(args.config) if args.config else ExperimentSettings()
    changes: Dict[str, object] = {}
    if args.controller:
        changes['controller'] = args.controller
    if args.malfunction is not None:
        changes['malfunction'] = parse_id_list(args.malfunction)
    if args.seed is not None:
        changes['seeds'] = (args.seed,)
    if args.checkpoint:
        changes['checkpoint_path'] = args.checkpoint
    if args.resume:
        changes['resume'] = True
    train_changes: Dict[str, object] = {}
    if args.ablation:
        train_changes['ablation'] = args.ablation
    if args.features:
        train_changes['features'] = args.features
    if train_changes:
        changes['train'] = replace(settings.train, **train_changes)
    return settings.with_overrides(**changes)


def format_run(results: Sequence[RunResult], settings: ExperimentSettings) -> str:
    """
    Formats experiment results as a human-readable table.

    Args:
        results (Sequence[RunResult]): One result per seed.
        settings (ExperimentSettings): Settings used.

    Returns:
        str: Formatted output string
    """
    name = get_controller_config(settings.controller)['name']
    ablation = f" (ablation {settings.train.ablation})" if (
        settings.controller == 'mallight' and settings.train.ablation) else ''
    malfunction = ', '.join(str(n) for n in results[0].malfunction) if results else ''
    output = f"""
╔════════════════════════════════════════════════════════════╗
║              Signal Malfunction Experiment                 ║
╚════════════════════════════════════════════════════════════╝
⚙️  Controller: {name}{ablation}
⚠️  Malfunctioning intersections: {malfunction or 'none'}
🔑 Config digest: {config_digest(settings)}

📊 Results (test hour)
══════════════════════════════════════════════════════════════
Seed   Int. NoMal   Int. Mal   RR (int)   RR (net)   #Acc
"""
    for r in results:
        output += (f"{r.seed:<6d} {r.no_malfunction.intersection_throughput:10.1f}   "
                   f"{r.malfunction_metrics.intersection_throughput:8.1f}   "
                   f"{_percent(r.intersection_rr):>8s}   {_percent(r.network_rr):>8s}   "
                   f"{r.malfunction_metrics.accidents:4d}\n")
    output += "══════════════════════════════════════════════════════════════\n"
    return output


def _percent(value: Optional[float]) -> str:
    return 'n/a' if value is None else f"{value:.1f}%"


def format_report(summary: List[Dict[str, object]]) -> str:
    """Formats the per-controller summary of `report`."""
    output = """
╔════════════════════════════════════════════════════════════╗
║                   Signal Malfunction Report                ║
╚════════════════════════════════════════════════════════════╝
Controller        Runs   RR (int)          RR (net)          #Acc
══════════════════════════════════════════════════════════════════════
"""
    for entry in summary:
        label = entry['controller'] + (f"-{entry['ablation']}" if entry['ablation'] else '')
        output += (f"{label:<17s} {entry['runs']:4d}   {_mean_std(entry['rr_intersection']):<17s} "
                   f"{_mean_std(entry['rr_network']):<17s} {_mean_std(entry['accidents'])}\n")
    output += "══════════════════════════════════════════════════════════════════════\n"
    return output


def _mean_std(pair) -> str:
    return 'n/a' if pair is None else f"{pair[0]:.2f} ± {pair[1]:.2f}"


def list_controllers() -> str:
    """
    Creates formatted list of all controllers.

    Returns:
        str: Formatted controller list
    """
    output = "\nAvailable Controllers:\n"
    output += "=" * 60 + "\n"
    for key, config in CONTROLLERS.items():
        kind = 'learning' if config['learning'] else 'rule-based'
        output += f"\n{key:12s} - {config['name']} ({kind})\n"
    output += "\n" + "=" * 60 + "\n"
    return output


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def main(argv=None) -> int:
    """
    Main CLI entry point.

    Args:
        argv: Command-line arguments (for testing)

    Returns:
        int: Exit code (0 = success, 1 = error)
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    if '--list-controllers' in argv:
        print(list_controllers())
        return 0
    parser = create_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    try:
        if args.command == 'gen-grid':
            net = generate_grid(args.rows, args.cols, args.block)
            write_network(net, args.out)
            print(f"Wrote {net.num_nodes} intersections and {len(net.edges)} segments to {args.out}")
            return 0

        if args.command == 'gen-flow':
            net = load_network(args.network)
            flow = generate_flow(net, FlowSpec(args.rate, args.duration, args.od_policy, args.seed))
            write_flow(flow, args.out)
            print(f"Wrote {len(flow)} vehicles to {args.out}")
            return 0

        if args.command == 'run':
            settings = settings_from_args(args)
            if args.out:
                os.makedirs(args.out, exist_ok=True)
            runner = ExperimentRunner(settings, args.out, progress=not args.quiet)
            results = runner.run_all()
            print(format_run(results, settings))
            return 0

        if args.command == 'sweep':
            settings = settings_from_args(args)
            out_path = os.path.join(args.out, f"sweep-{args.axis}.csv") if args.out else None
            rows = sweep(settings, args.axis, parse_value_list(args.values), out_path)
            for row in rows:
                print(f"{row['axis']}={row['value']}: RR {row['rr_mean'] or 'n/a'} "
                      f"(std {row['rr_std'] or 'n/a'}, runs {row['runs']})"
                      + (f" errors: {row['error']}" if row['error'] else ''))
            return 0

        if args.command == 'influence':
            net = load_network(args.network) if args.network else generate_grid(
                GRID_ROWS, GRID_COLS, GRID_BLOCK_M)
            mask = MalfunctionMask.from_nodes(net.num_nodes, parse_id_list(args.malfunction))
            rows = influence_report(net, mask, args.k, args.alpha, out_path=args.out)
            print("hops  mean influence")
            for hop, value in rows:
                print(f"{hop:4d}  {value:.6f}")
            return 0

        if args.command == 'report':
            print(format_report(report(args.paths)))
            return 0

        parser.error(f"unknown command {args.command}")
        return 1

    except (ValueError, FileNotFoundError, OSError) as e:
        print(f"\nError: {e}\n", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("\n\nInterrupted by user", file=sys.stderr)
        return 1
    except Exception as e:  # pylint: disable=broad-except
        print(f"\nUnexpected error: {e}\n", file=sys.stderr)
        traceback.print_exc(file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
