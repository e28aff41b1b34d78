#!/usr/bin/env python3
"""
gridfreq - frequency control and economic dispatch on DC power-flow grids

Loads a scenario file, runs the closed-loop simulation or one of the analyses
(gain sweep, communication-link ranking, optimal dispatch) and writes CSV
results plus a console summary.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from rich_argparse import RichHelpFormatter

from . import __version__
from .analysis import convergence_time, gain_for_target_cost, gain_sweep, susceptance_sweep
from .comm import rank_links
from .dispatch import optimal_convex, optimal_quadratic
from .dynamics import perturbed_power, simulate
from .errors import GridFreqError, NoConvergenceError
from .scenario import Scenario, build_report, bundled_scenario, load_scenario
from .utils import (
    display_grid_summary,
    display_report,
    print_header,
    print_section,
    print_status,
    write_csv,
    write_plot_file,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_CONVERGENCE = 2

COMMANDS = ("run", "sweep", "rank", "dispatch")


class CustomRichHelpFormatter(RichHelpFormatter):
    """Custom formatter that combines rich-argparse with proper width handling."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.width = 80
        self.max_help_position = 30


def print_logo():
    """Print the ASCII art logo."""
    logo = r"""
╔══════════════════════════════════════════╗
║            _     _  __                   ║
║  __ _ _ __(_) __| |/ _|_ __ ___  __ _    ║
║ / _` | '__| |/ _` | |_| '__/ _ \/ _` |   ║
║| (_| | |  | | (_| |  _| | |  __/ (_| |   ║
║ \__, |_|  |_|\__,_|_| |_|  \___|\__, |   ║
║ |___/                              |_|   ║
╚══════════════════════════════════════════╝
    """
    print(logo)


def print_colored_banner():
    """Print the banner with version info."""
    banner = f"""
  ->  gridfreq v{__version__}
  ->  Integral frequency control with economic dispatch
  ->  Decentralized, averaging, virtual-price and delayed controllers
  ->  GPLv3 License
    """
    print(banner)


EXAMPLES = """Examples:
  # Simulate the bundled ten-node grid and write trajectory.csv / report.csv
  gridfreq run --scenario tennode --out results/

  # Steady cost against the gain h (closed-form fast path)
  gridfreq sweep --scenario tennode --out results/ --h-list 1,0.5,0.25,0.1

  # Same sweep by simulation, four worker threads
  gridfreq sweep --scenario tennode --out results/ --h-list 1,0.1 --use-sim --threads 4

  # Susceptance scaling and the gain that reaches a target cost
  gridfreq sweep --scenario tennode --out results/ --h-list 1 --alpha-list 0.5,1,2 --target-cost 24.44

  # Rank communication links by the cost their failure would add
  gridfreq rank --scenario tennode --out results/

  # Optimal economic dispatch for the scenario's disturbance
  gridfreq dispatch --scenario tennode --out results/

Tips:
  • --scenario takes a file path or the name of a bundled scenario (tennode, twonode)
  • Use --threads 0 for auto-detection; GRIDFREQ_THREADS caps the count
  • Exit codes: 0 success, 1 invalid input, 2 no steady state reached"""


def print_examples():
    """Print usage examples."""
    print_header("[*] Examples and Usage")
    print(EXAMPLES)


def parse_float_list(text: str) -> List[float]:
    """Parse "a,b,c" into floats; raises argparse.ArgumentTypeError on bad input."""
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list of numbers")
    try:
        return [float(item) for item in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number list '{text}'")


def create_colored_parser() -> argparse.ArgumentParser:
    """Create the argument parser with one sub-command per task."""
    parser = argparse.ArgumentParser(
        prog="gridfreq",
        description="Simulate and analyse frequency control with economic dispatch on DC grids.",
        formatter_class=CustomRichHelpFormatter,
        add_help=True,
    )
    parser.formatter_class.rich_theme = "dracula"
    parser.formatter_class.rich_console_options = {"force_terminal": True, "color_system": "auto"}
    parser.formatter_class.rich_show_help = True
    parser.add_argument("--version", action="version", version=f"gridfreq {__version__}")

    examples_group = parser.add_argument_group("Examples", "Common usage patterns")
    examples_group.add_argument(
        "--show-examples",
        action="store_true",
        help="Show detailed examples and exit",
    )

    common = argparse.ArgumentParser(add_help=False)
    io_group = common.add_argument_group("Main Options", "Scenario input and result directory")
    io_group.add_argument(
        "--scenario",
        required=True,
        help="Scenario file, or the name of a bundled scenario",
        metavar="PATH",
    )
    io_group.add_argument(
        "--out",
        default=".",
        help="Directory for CSV results (default: current directory)",
        metavar="DIR",
    )
    io_group.add_argument(
        "--progress",
        action="store_true",
        help="Show a progress bar while integrating",
    )

    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.add_parser(
        "run",
        parents=[common],
        formatter_class=CustomRichHelpFormatter,
        help="Simulate the scenario; writes trajectory.csv and report.csv",
    )

    sweep = subparsers.add_parser(
        "sweep",
        parents=[common],
        formatter_class=CustomRichHelpFormatter,
        help="Steady cost against the gain h; writes sweep.csv and sweep.dat",
    )
    sweep_group = sweep.add_argument_group("Sweep Options", "Gains, susceptance scaling and threading")
    sweep_group.add_argument(
        "--h-list",
        type=parse_float_list,
        required=True,
        help="Comma-separated controller gains, e.g. 1,0.5,0.1",
        metavar="H,H,...",
    )
    sweep_group.add_argument(
        "--use-sim",
        action="store_true",
        help="Integrate each point instead of using the closed-form steady state",
    )
    sweep_group.add_argument(
        "--alpha-list",
        type=parse_float_list,
        help="Also sweep susceptances divided by alpha at the scenario's h",
        metavar="A,A,...",
    )
    sweep_group.add_argument(
        "--target-cost",
        type=float,
        help="Report the gain whose steady cost equals this value",
        metavar="COST",
    )
    sweep_group.add_argument(
        "--threads",
        type=int,
        default=1,
        help="Number of worker threads (default: 1, use 0 for auto-detect)",
        metavar="N",
    )

    subparsers.add_parser(
        "rank",
        parents=[common],
        formatter_class=CustomRichHelpFormatter,
        help="Rank communication links by criticality; writes rank.csv",
    )
    subparsers.add_parser(
        "dispatch",
        parents=[common],
        formatter_class=CustomRichHelpFormatter,
        help="Optimal economic dispatch of the disturbance; writes dispatch.csv and dispatch_summary.csv",
    )
    return parser


def resolve_scenario(value: str) -> Scenario:
    """Load a scenario from a path, falling back to the bundled fixtures by name."""
    if not Path(value).exists() and "/" not in value and not value.endswith(".scenario"):
        value = bundled_scenario(value)
    return load_scenario(value)


def cmd_run(scenario: Scenario, out_dir: str, progress: bool = False) -> int:
    """Simulate the scenario and write trajectory.csv and report.csv."""
    print_section("[*] Simulation")
    controller = scenario.controller
    print_status(
        f"Controller {controller.kind}, h={controller.h:g}, dt={scenario.sim.dt:g}, "
        f"t_max={scenario.sim.t_max:g}",
        "[INFO]",
    )
    trajectory = simulate(
        scenario.grid,
        scenario.perturbations,
        controller,
        comm=scenario.comm,
        sim=scenario.sim,
        progress=progress,
    )
    trajectory_path = trajectory.to_csv(str(Path(out_dir) / "trajectory.csv"))
    print_status(f"Trajectory written: {trajectory_path}", "[OK]")

    settle = convergence_time(trajectory) if trajectory.converged else None
    report = build_report(scenario, trajectory, settle)
    report_path = write_csv(str(Path(out_dir) / "report.csv"), ["field", "value"], report.rows())
    display_report(report)
    print_status(f"Report written: {report_path}", "[OK]")

    if not report.converged:
        print_status("No steady state reached; costs are those at t_max", "[WARN]")
        return EXIT_NO_CONVERGENCE
    if not report.bound_satisfied:
        print_status("Gap exceeds the decentralized bound", "[INFO]")
    return EXIT_OK


def cmd_sweep(
    scenario: Scenario,
    h_list: List[float],
    out_dir: str,
    use_sim: bool = False,
    threads: int = 1,
    alpha_list: Optional[List[float]] = None,
    target_cost: Optional[float] = None,
) -> int:
    """Gain sweep (plus optional susceptance sweep and target-cost search)."""
    cost = scenario.controller.cost
    header = ["h", "cost", "optimal", "gap", "bound"]

    print_section("[*] Gain Sweep")
    print_status(f"{len(h_list)} gains, {'simulation' if use_sim else 'closed form'}", "[INFO]")
    rows = gain_sweep(
        scenario.grid,
        scenario.perturbations,
        h_list,
        cost=cost,
        use_sim=use_sim,
        sim=scenario.sim,
        threads=threads,
    )
    table = [(r.h, r.cost, r.optimal, r.gap, r.bound) for r in rows]
    sweep_path = write_csv(str(Path(out_dir) / "sweep.csv"), header, table)
    plot_path = write_plot_file(str(Path(out_dir) / "sweep.dat"), [(r.h, r.cost) for r in rows])
    for r in rows:
        print(f"   h={r.h:<10g} cost={r.cost:<12.6g} gap={r.gap:<12.6g} bound={r.bound:.6g}")
    print_status(f"Sweep written: {sweep_path}", "[OK]")
    print_status(f"Plot data written: {plot_path}", "[OK]")

    if alpha_list:
        print_section("[*] Susceptance Sweep")
        scaled = susceptance_sweep(
            scenario.grid,
            scenario.perturbations,
            scenario.controller.h,
            alpha_list,
            cost=cost,
            threads=threads,
        )
        path = write_csv(
            str(Path(out_dir) / "susceptance_sweep.csv"),
            ["alpha", "cost", "optimal", "gap", "bound"],
            [(r.h, r.cost, r.optimal, r.gap, r.bound) for r in scaled],
        )
        print_status(f"Susceptance sweep written: {path}", "[OK]")

    if target_cost is not None:
        print_section("[*] Gain For Target Cost")
        h = gain_for_target_cost(scenario.grid, scenario.perturbations, target_cost, cost=cost)
        print_status(f"h = {h:.6g} reaches steady cost {target_cost:.6g}", "[OK]")
    return EXIT_OK


def cmd_rank(scenario: Scenario, out_dir: str) -> int:
    """Rank communication links; writes rank.csv (1-based node ids)."""
    print_section("[*] Communication Link Ranking")
    grid = scenario.grid
    cost = scenario.controller.cost
    expected = optimal_convex(cost, scenario.delta_total, scenario.controller.capacity).u
    scores = rank_links(
        grid,
        grid.power,
        perturbed_power(grid, scenario.perturbations),
        u_expected=expected,
        h=scenario.controller.h,
    )
    rows = [
        (s.line + 1, s.source + 1, s.target + 1, s.susceptance, s.flow_change, s.score)
        for s in scores
    ]
    path = write_csv(
        str(Path(out_dir) / "rank.csv"),
        ["line", "from", "to", "susceptance", "flow_change", "score"],
        rows,
    )
    for s in scores[:5]:
        print(f"   line {s.line + 1} ({s.source + 1}-{s.target + 1}): score {s.score:.6g}")
    print_status(f"Ranking written: {path}", "[OK]")
    return EXIT_OK


def cmd_dispatch(scenario: Scenario, out_dir: str) -> int:
    """Optimal dispatch of the disturbance; writes dispatch.csv and dispatch_summary.csv."""
    print_section("[*] Economic Dispatch")
    cost = scenario.controller.cost
    capacity = scenario.controller.capacity
    if cost.is_quadratic and capacity is None:
        result = optimal_quadratic(cost.a, scenario.delta_total)
    else:
        result = optimal_convex(cost, scenario.delta_total, capacity)
    marginal = cost.marginal(result.u)
    path = write_csv(
        str(Path(out_dir) / "dispatch.csv"),
        ["node", "u_opt", "marginal"],
        [(j + 1, float(u), float(g)) for j, (u, g) in enumerate(zip(result.u, marginal))],
    )
    summary = write_csv(
        str(Path(out_dir) / "dispatch_summary.csv"),
        ["field", "value"],
        [("price", result.price), ("total_cost", result.total_cost)],
    )
    print_status(f"price = {result.price:.6g}, total cost = {result.total_cost:.6g}", "[OK]")
    print_status(f"Dispatch written: {path}", "[OK]")
    print_status(f"Summary written: {summary}", "[OK]")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    print_logo()
    print_colored_banner()

    parser = create_colored_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_ERROR

    if args.show_examples:
        print_examples()
        return EXIT_OK
    if args.command not in COMMANDS:
        print_status("A command is required: run, sweep, rank or dispatch.", "[ERROR]")
        print_status("Use --show-examples to see usage examples.", "[INFO]")
        return EXIT_ERROR

    try:
        scenario = resolve_scenario(args.scenario)
        print_header(f"[*] gridfreq - {args.command.upper()} - {scenario.name}")
        display_grid_summary(scenario.grid)

        if args.command == "run":
            status = cmd_run(scenario, args.out, progress=args.progress)
        elif args.command == "sweep":
            status = cmd_sweep(
                scenario,
                args.h_list,
                args.out,
                use_sim=args.use_sim,
                threads=args.threads,
                alpha_list=args.alpha_list,
                target_cost=args.target_cost,
            )
        elif args.command == "rank":
            status = cmd_rank(scenario, args.out)
        else:
            status = cmd_dispatch(scenario, args.out)
    except NoConvergenceError as e:
        print_status(str(e), "[ERROR]")
        return EXIT_NO_CONVERGENCE
    except GridFreqError as e:
        print_status(str(e), "[ERROR]")
        return EXIT_ERROR
    except OSError as e:
        print_status(f"Cannot write results: {e}", "[ERROR]")
        return EXIT_ERROR

    if status == EXIT_OK:
        print_header("[*] Task Complete!")
    return status


if __name__ == "__main__":
    sys.exit(main())
