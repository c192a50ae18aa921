"""Rich terminal display for unsmear."""

from __future__ import annotations

from typing import Optional

import numpy as np
from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from unsmear.models import ExperimentSpec, ResultTable, SolveTrace
from unsmear.spectrum import Spectrum

console = Console()


def format_db(value: Optional[float]) -> str:
    """Format a PSNR value in dB."""
    if value is None:
        return "-"
    if np.isinf(value):
        return "inf"
    return f"{value:.2f}"


def show_progress() -> Progress:
    """Create progress bar for long computations."""
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed}/{task.total}"),
        TimeElapsedColumn(),
        console=console,
    )


def show_trace(trace: SolveTrace, method: str) -> None:
    """Display the outcome of a single solve."""
    table = Table(title=f"{escape(method)} solve", show_header=True, header_style="bold")
    table.add_column("Iterations", justify="right")
    table.add_column("Step size", justify="right")
    table.add_column("Stopped by")
    table.add_column("Final PSNR", justify="right")
    table.add_column("Peak PSNR", justify="right")
    table.add_column("Residual", justify="right")

    stopped = "[green]tolerance[/green]" if trace.converged else "[yellow]budget[/yellow]"
    peak = format_db(trace.peak_psnr)
    if trace.best_iteration is not None:
        peak += f" [dim](iter {trace.best_iteration})[/dim]"
    residual = trace.objective_residual[-1] if trace.objective_residual else None
    table.add_row(
        str(trace.iterations_run),
        f"{trace.gamma:.4g}",
        stopped,
        format_db(trace.final_psnr),
        peak,
        "-" if residual is None else f"{residual:.4g}",
    )
    console.print(table)


def show_result_table(table: ResultTable) -> None:
    """Display best-over-lambda PSNR per image and noise level, one column per method."""
    methods = list(dict.fromkeys(row.method for row in table.rows))
    scenarios = list(dict.fromkeys((row.image, row.sigma) for row in table.rows))

    out = Table(
        title=f"Best average PSNR (dB) over lambda, {table.operator}",
        show_header=True,
        header_style="bold",
    )
    out.add_column("Image")
    out.add_column("Sigma", justify="right")
    for method in methods:
        out.add_column(escape(method), justify="right")

    for image, sigma in scenarios:
        rows = {m: table.get(image, m, sigma) for m in methods}
        scores = [r.psnr_mean for r in rows.values() if r and r.psnr_mean is not None]
        top = max(scores) if scores else None
        cells = []
        for method in methods:
            row = rows[method]
            if row is None or row.psnr_mean is None:
                cells.append("[red]failed[/red]")
                continue
            text = f"{format_db(row.psnr_mean)} ± {format_db(row.psnr_std)}"
            if row.psnr_mean == top and len(methods) > 1:
                text = f"[bold green]{text}[/bold green]"
            if row.failures:
                text += f" [yellow]({row.failures} failed)[/yellow]"
            cells.append(text)
        out.add_row(escape(image), f"{sigma:g}", *cells)

    console.print(out)
    console.print(f"[dim]Selected by {table.select.value}-iterate PSNR[/dim]")


def show_spectrum(
    spectrum: Spectrum, basis_name: str, operator: str, step: Optional[float] = None
) -> None:
    """Summarize a computed spectrum, with the automatic FIDA step when given."""
    deltas = spectrum.deltas
    support = spectrum.support
    lines = [
        f"[bold]Operator:[/bold] {operator}",
        f"[bold]Basis:[/bold] {basis_name}",
        f"[bold]Strategy:[/bold] {spectrum.strategy.value}",
        f"[bold]Atoms:[/bold] {deltas.size}",
        f"[bold]Delta range:[/bold] {deltas.min():.4g} .. {deltas.max():.4g}",
        f"[bold]Recoverable:[/bold] {int(support.sum())} of {deltas.size}",
    ]
    if step is not None:
        lines.append(f"[bold]Automatic FIDA step:[/bold] {step:.4g}")
    console.print(Panel("\n".join(lines), title="Spectrum", border_style="blue"))


def show_presets(presets: dict[str, ExperimentSpec]) -> None:
    """List built-in experiment presets."""
    table = Table(title="Presets", show_header=True, header_style="bold")
    table.add_column("Name", style="cyan")
    table.add_column("Operator")
    table.add_column("Noise sigmas", justify="right")
    table.add_column("Methods")

    for name, spec in presets.items():
        table.add_row(
            name,
            spec.operator.descriptor(),
            ", ".join(f"{s:g}" for s in spec.noise_sigmas),
            ", ".join(m.label for m in spec.methods),
        )
    console.print(table)
