"""
Utility functions for console output, CSV files and thread counts.
"""

import csv
import os
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence

THREADS_ENV = "GRIDFREQ_THREADS"
MAX_AUTO_THREADS = 8


def print_header(title: str):
    """Print a formatted header."""
    print("\n" + "=" * 60)
    print(f"[*] {title}")
    print("=" * 60)


def print_section(title: str):
    """Print a formatted section header."""
    print(f"\n[+] {title}")
    print("-" * 40)


def print_status(message: str, status: str = "[i]"):
    """Print a status message with an indicator."""
    print(f"{status} {message}")


def print_progress(current: int, total: int, prefix: str = "Progress"):
    """Print a simple progress bar."""
    bar_length = 30
    filled_length = int(bar_length * current // total)
    bar = '█' * filled_length + '░' * (bar_length - filled_length)
    percentage = current / total * 100
    print(f"\r{prefix}: [{bar}] {current}/{total} ({percentage:.1f}%)", end='', flush=True)


def format_number(value: Any) -> str:
    """Full-precision text for CSV cells (shortest repr that round-trips)."""
    if value is None or isinstance(value, (bool, str)):
        return "" if value is None else str(value)
    if isinstance(value, int):
        return str(value)
    try:
        return repr(float(value))
    except (TypeError, ValueError):
        return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Write a CSV file with a header row; returns the absolute path."""
    csv_path = Path(path).resolve()
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_number(value) for value in row])
    return str(csv_path)


def write_plot_file(path: str, rows: Iterable[Sequence[float]]) -> str:
    """Whitespace-separated columns rounded to 6 significant digits (gnuplot-ready)."""
    plot_path = Path(path).resolve()
    plot_path.parent.mkdir(parents=True, exist_ok=True)
    with open(plot_path, 'w') as f:
        for row in rows:
            f.write(" ".join(f"{float(value):.6g}" for value in row) + "\n")
    return str(plot_path)


def read_csv(path: str) -> List[dict]:
    """Read a CSV written by write_csv back into dicts of strings."""
    with open(path, newline='') as f:
        return list(csv.DictReader(f))


def resolve_threads(requested: Optional[int] = None) -> int:
    """
    Number of worker threads for sweeps.

    Args:
        requested: explicit count, 0 for auto-detect, None to use the environment

    Returns:
        Thread count >= 1, capped by GRIDFREQ_THREADS when it is set
    """
    if requested is None:
        requested = 0
    if requested == 0:
        requested = min(os.cpu_count() or 1, MAX_AUTO_THREADS)

    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            requested = min(requested, int(cap))
        except ValueError:
            print_status(f"Ignoring non-integer {THREADS_ENV}={cap!r}", "[WARN]")

    return max(1, requested)


def display_grid_summary(grid) -> None:
    """Display node, line and injection statistics of a grid."""
    print_section("Grid Summary")
    generators = int(grid.generator_mask.sum())
    print(f"[*] Nodes: {grid.n} ({generators} generators, {grid.n - generators} loads)")
    print(f"[*] Lines: {grid.m}")
    susceptance = grid.susceptance
    print(f"[*] Susceptance range: {susceptance.min():.4g} .. {susceptance.max():.4g}")
    power = grid.power
    print(f"[*] Generation: {power[power > 0].sum():.4g}, load: {-power[power < 0].sum():.4g}")


def display_report(report) -> None:
    """Display the headline numbers of a RunReport."""
    print_section("Run Report")
    print(f"[*] Total cost: {report.total_cost:.6g}")
    print(f"[*] Optimal cost: {report.optimal_cost:.6g}")
    print(f"[*] Gap: {report.gap:.6g} (bound {report.bound:.6g})")
    print(f"[*] Marginal spread: {report.marginal_spread:.6g}")
    if report.convergence_time is not None:
        print(f"[*] Convergence time: {report.convergence_time:.6g} s")
    for members, price in report.component_prices:
        nodes = ",".join(str(j + 1) for j in sorted(members))
        print(f"   component {{{nodes}}}: marginal price {price:.6g}")
