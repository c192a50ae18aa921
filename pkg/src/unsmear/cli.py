"""CLI interface for unsmear."""

import logging
import math
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

import typer
from pydantic import ValidationError
from rich.logging import RichHandler
from rich.markup import escape

from unsmear import __app_name__, __version__
from unsmear.cache import cached_spectrum, clear_cache, deltas_as_array
from unsmear.denoisers import build_denoiser
from unsmear.descriptors import (
    build_basis,
    build_operator,
    parse_basis,
    parse_denoiser,
    parse_method,
    parse_mode,
    parse_operator,
)
from unsmear.display import (
    console,
    show_presets,
    show_progress,
    show_result_table,
    show_spectrum,
    show_trace,
)
from unsmear.errors import DescriptorError, SolverError, UnsmearError
from unsmear.fetch import STANDARD_IMAGES, fetch_images
from unsmear.fileio import expand_path, read_image, write_fidb, write_image, write_pgm
from unsmear.harness import (
    PreparedMethod,
    degrade as degrade_image,
    load_experiment,
    load_image,
    prepare_method,
    run_solve,
    run_sweep,
    save_observation,
    write_trace_csv,
)
from unsmear.models import (
    DEFAULT_MAX_ITERS,
    DEFAULT_REL_TOL,
    DenoiserKind,
    ExperimentSpec,
    InitKind,
    Method,
    MethodSpec,
    SelectBy,
    SolverConfig,
    Strategy,
)
from unsmear.numerics import psnr as psnr_db
from unsmear.phantoms import DEFAULT_PHANTOM_SIZE
from unsmear.presets import PRESETS, get_preset
from unsmear.solvers import fida_step_size

app = typer.Typer(
    name=__app_name__,
    help="Image restoration with filtered iterative denoising",
    add_completion=False,
    no_args_is_help=True,
)


def version_callback(value: bool) -> None:
    """Print version and exit."""
    if value:
        console.print(f"unsmear version {__version__}")
        raise typer.Exit()


def configure_logging(verbose: bool) -> None:
    """Route library logging through the shared rich console."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False, markup=False)],
        force=True,
    )


@contextmanager
def handle_errors():
    """Turn library errors into a red message and exit code 1."""
    try:
        yield
    except (UnsmearError, ValidationError, OSError) as e:
        console.print(f"[red]Error:[/red] {escape(str(e))}")
        raise typer.Exit(1)


def parse_shape(text: str) -> tuple[int, int]:
    """Parse `ROWSxCOLS` (or a single side for square images)."""
    parts = text.lower().split("x")
    try:
        sides = [int(p) for p in parts]
    except ValueError:
        raise DescriptorError(f"invalid shape {text!r}; use ROWSxCOLS") from None
    if len(sides) == 1:
        sides = sides * 2
    if len(sides) != 2 or min(sides) < 1:
        raise DescriptorError(f"invalid shape {text!r}; use ROWSxCOLS")
    return sides[0], sides[1]


def _progress_callback(progress, task):
    def update(name: str, current: int, total: int):
        progress.update(task, completed=current, total=total, description=f"{name}...")

    return update


@app.callback()
def main(
    version: bool = typer.Option(
        None,
        "--version",
        "-v",
        help="Show version and exit.",
        callback=version_callback,
        is_eager=True,
    ),
    verbose: bool = typer.Option(False, "--verbose", "-V", help="Show debug logging."),
) -> None:
    """unsmear - restore blurred or miscalibrated images with iterative denoising."""
    configure_logging(verbose)


@app.command()
def degrade(
    image: str = typer.Argument(..., help="Input PGM/FIDB file or phantom:NAME"),
    output: Path = typer.Argument(..., help="Output path (.fidb and .pgm preview are written)"),
    op: str = typer.Option("blur:sigma=2.0,radius=7", "--op", help="Forward operator"),
    sigma: float = typer.Option(0.0, "--sigma", "-s", min=0.0, help="Noise standard deviation"),
    seed: int = typer.Option(0, "--seed", min=0, help="Noise seed"),
    size: int = typer.Option(DEFAULT_PHANTOM_SIZE, "--size", help="Side of phantom images"),
) -> None:
    """Apply a forward operator and add Gaussian noise."""
    with handle_errors():
        truth = load_image(image, size)
        operator = build_operator(parse_operator(op), truth.shape)
        y = degrade_image(truth, operator, sigma, seed)
        fidb, preview = save_observation(y, output)
    console.print(f"[green]Wrote[/green] {fidb} and {preview}")


@app.command()
def solve(
    observation: Path = typer.Argument(..., help="Degraded image (FIDB or PGM)"),
    output: Path = typer.Argument(..., help="Output path (.fidb and .pgm are written)"),
    op: str = typer.Option("blur:sigma=2.0,radius=7", "--op", help="Forward operator"),
    method: Method = typer.Option(Method.FIDA, "--method", "-m", help="Algorithm"),
    basis: str = typer.Option("auto", "--basis", help="Filtering basis (fida, wvd)"),
    mode: str = typer.Option("pinv", "--mode", help="pinv, mask or wiener:tau=..."),
    strategy: Strategy = typer.Option(Strategy.AUTO, "--strategy", help="Delta strategy"),
    denoiser: str = typer.Option("wavelet-soft", "--denoiser", "-d", help="Denoiser"),
    lam: float = typer.Option(1.0, "--lambda", "-l", min=0.0, help="Denoising parameter"),
    gamma: Optional[float] = typer.Option(None, "--gamma", help="Step size (default: auto)"),
    max_iters: int = typer.Option(DEFAULT_MAX_ITERS, "--max-iters", min=1),
    rel_tol: float = typer.Option(DEFAULT_REL_TOL, "--rel-tol", min=0.0),
    init: InitKind = typer.Option(InitKind.AUTO, "--init", help="Starting point"),
    truth: Optional[Path] = typer.Option(None, "--truth", help="Ground truth for PSNR"),
    trace: Optional[Path] = typer.Option(None, "--trace", help="Per-iteration CSV"),
    seed: int = typer.Option(0, "--seed", min=0, help="Power-iteration seed"),
    cache_dir: Optional[Path] = typer.Option(None, "--cache-dir", help="Spectrum cache"),
    force: bool = typer.Option(False, "--force", help="Allow slow exact spectra"),
) -> None:
    """Restore an observation with IDA, FIDA or the one-shot estimate."""
    if init == InitKind.CUSTOM:
        console.print("[red]Error:[/red] custom init is only available from Python")
        raise typer.Exit(1)

    with handle_errors():
        y = read_image(expand_path(observation))
        reference = read_image(expand_path(truth)) if truth else None
        operator = build_operator(parse_operator(op), y.shape)
        mspec = MethodSpec(
            label=method.value.upper(),
            method=method,
            basis=parse_basis(basis),
            mode=parse_mode(mode),
            strategy=strategy,
        )
        if method == Method.IDA:
            prepared = PreparedMethod(mspec)
        else:
            with show_progress() as progress:
                task = progress.add_task("Computing spectrum...", total=None)
                prepared = prepare_method(
                    mspec,
                    operator,
                    cache_dir=cache_dir,
                    force=force,
                    progress_callback=_progress_callback(progress, task),
                )
        cfg = SolverConfig(
            method=method,
            gamma=gamma,
            lambda_gamma=lam,
            max_iters=max_iters,
            rel_tol=rel_tol,
            init=init,
            seed=seed,
        )
        d = build_denoiser(parse_denoiser(denoiser), y.shape)
        result = run_solve(y, operator, prepared, d, cfg, truth=reference)
        out = expand_path(output)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_fidb(result.final, out.with_suffix(".fidb"))
        write_pgm(result.final, out.with_suffix(".pgm"))
        if trace:
            write_trace_csv(result, trace)

    show_trace(result, mspec.label)
    console.print(f"[green]Wrote[/green] {out.with_suffix('.fidb')} and {out.with_suffix('.pgm')}")


@app.command()
def sweep(
    spec_file: Optional[Path] = typer.Argument(None, help="Experiment spec (YAML)"),
    preset: Optional[str] = typer.Option(None, "--preset", "-p", help="Built-in preset"),
    images: Optional[List[str]] = typer.Option(None, "--image", "-i", help="Image or phantom"),
    size: Optional[int] = typer.Option(None, "--size", help="Side of phantom images"),
    op: Optional[str] = typer.Option(None, "--op", help="Forward operator"),
    sigmas: Optional[List[float]] = typer.Option(None, "--sigma", "-s", help="Noise level"),
    methods: Optional[List[str]] = typer.Option(
        None, "--method", "-m", help="ida, w-fida, d-fida, w-wvd, d-wvd (optionally @MODE)"
    ),
    denoiser: Optional[str] = typer.Option(None, "--denoiser", "-d", help="Denoiser"),
    lambdas: Optional[List[float]] = typer.Option(None, "--lambda", "-l", help="Grid value"),
    points: Optional[int] = typer.Option(None, "--points", help="Default grid size"),
    runs: Optional[int] = typer.Option(None, "--runs", "-r", help="Seeds per cell"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Base seed"),
    max_iters: Optional[int] = typer.Option(None, "--max-iters"),
    select: Optional[SelectBy] = typer.Option(None, "--select", help="final or peak"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Results directory"),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", help="Worker threads"),
    no_images: bool = typer.Option(False, "--no-images", help="Skip restored images"),
    cache_dir: Optional[Path] = typer.Option(None, "--cache-dir", help="Spectrum cache"),
) -> None:
    """Sweep the denoising parameter and tabulate the best average PSNR."""
    with handle_errors():
        if spec_file and preset:
            raise DescriptorError("give either a spec file or --preset, not both")
        if spec_file:
            base = load_experiment(spec_file).model_dump()
        elif preset:
            base = get_preset(preset).model_dump()
        else:
            if not (op and sigmas and methods):
                raise DescriptorError(
                    "without a spec file or --preset, give --op, --sigma and --method"
                )
            base = {}

        overrides = {
            "images": images,
            "image_size": size,
            "operator": parse_operator(op) if op else None,
            "noise_sigmas": sigmas,
            "methods": [parse_method(m) for m in methods] if methods else None,
            "denoiser": parse_denoiser(denoiser) if denoiser else None,
            "lambda_grid": lambdas,
            "lambda_points": points,
            "runs": runs,
            "base_seed": seed,
            "max_iters": max_iters,
            "select": select,
            "output_dir": str(output) if output else None,
            "workers": workers,
        }
        base.update({k: v for k, v in overrides.items() if v not in (None, [], ())})
        if no_images:
            base["save_images"] = False
        spec = ExperimentSpec.model_validate(base)

        console.print(
            f"[bold blue]Sweeping {spec.name}[/bold blue] ({escape(spec.operator.descriptor())})"
        )
        with show_progress() as progress:
            task = progress.add_task("Preparing...", total=None)
            table = run_sweep(
                spec, cache_dir=cache_dir, progress_callback=_progress_callback(progress, task)
            )

    console.print()
    show_result_table(table)
    console.print(f"[dim]Results in {expand_path(spec.output_dir)}[/dim]")


@app.command()
def psnr(
    reference: Path = typer.Argument(..., help="Ground-truth image"),
    test: Path = typer.Argument(..., help="Image to score"),
    peak: float = typer.Option(255.0, "--peak", help="Peak value"),
) -> None:
    """Print the PSNR of TEST against REFERENCE in dB."""
    with handle_errors():
        value = psnr_db(read_image(expand_path(reference)), read_image(expand_path(test)), peak)
    console.print(f"{value:.4f} dB" if math.isfinite(value) else "inf dB")


@app.command()
def spectrum(
    op: str = typer.Option("blur:sigma=2.0,radius=7", "--op", help="Forward operator"),
    basis: str = typer.Option("auto", "--basis", help="Basis descriptor"),
    strategy: Strategy = typer.Option(Strategy.AUTO, "--strategy", help="Delta strategy"),
    shape: Optional[str] = typer.Option(None, "--shape", help="Image shape ROWSxCOLS"),
    image: Optional[Path] = typer.Option(None, "--image", help="Take the shape from an image"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write deltas as FIDB"),
    cache_dir: Optional[Path] = typer.Option(None, "--cache-dir", help="Spectrum cache"),
    force: bool = typer.Option(False, "--force", help="Allow slow exact spectra"),
    workers: int = typer.Option(4, "--workers", "-w", min=1, help="Worker threads"),
    clear: bool = typer.Option(False, "--clear-cache", help="Delete cached spectra and exit"),
) -> None:
    """Precompute (and cache) the atom attenuations of an operator in a basis."""
    with handle_errors():
        if clear:
            removed = clear_cache(cache_dir)
            console.print(f"[green]Removed {removed} cached spectra[/green]")
            return
        if image:
            dims = read_image(expand_path(image)).shape
        else:
            dims = parse_shape(shape or f"{DEFAULT_PHANTOM_SIZE}")
        operator = build_operator(parse_operator(op), dims)
        chosen = build_basis(parse_basis(basis), operator, dims)
        with show_progress() as progress:
            task = progress.add_task("Computing spectrum...", total=None)
            result = cached_spectrum(
                operator,
                chosen,
                strategy=strategy,
                cache_dir=cache_dir,
                force=force,
                workers=workers,
                progress_callback=_progress_callback(progress, task),
            )
        if out:
            write_fidb(deltas_as_array(result), expand_path(out))
    try:
        step = fida_step_size(operator, chosen, result)
    except SolverError:
        step = None

    show_spectrum(result, chosen.describe(), operator.label, step)
    if out:
        console.print(f"[green]Wrote[/green] {out}")


@app.command()
def denoise(
    source: Path = typer.Argument(..., help="Input image (FIDB or PGM)"),
    output: Path = typer.Argument(..., help="Output image (FIDB or PGM)"),
    lam: float = typer.Argument(..., min=0.0, help="Denoising parameter"),
    denoiser: str = typer.Option("wavelet-soft", "--denoiser", "-d", help="Internal denoiser"),
) -> None:
    """Apply an internal denoiser; usable as an external-bridge executable."""
    with handle_errors():
        spec = parse_denoiser(denoiser)
        if spec.kind == DenoiserKind.EXTERNAL:
            raise DescriptorError("denoise runs internal denoisers only")
        x = read_image(expand_path(source))
        write_image(build_denoiser(spec, x.shape).denoise(x, lam), expand_path(output))


@app.command()
def presets() -> None:
    """List built-in experiment presets."""
    show_presets(PRESETS)


@app.command("fetch-images")
def fetch_images_command(
    base_url: str = typer.Option(..., "--base-url", help="Mirror serving NAME.pgm files"),
    dest: Path = typer.Option(Path("images"), "--dest", help="Destination directory"),
    names: Optional[List[str]] = typer.Option(None, "--name", "-n", help="Image name"),
    overwrite: bool = typer.Option(False, "--overwrite", help="Replace existing files"),
) -> None:
    """Download the standard test images from a mirror you provide."""
    wanted = names or STANDARD_IMAGES
    with show_progress() as progress:
        task = progress.add_task("Downloading...", total=len(wanted))
        results = fetch_images(
            base_url, dest, wanted, overwrite, progress_callback=_progress_callback(progress, task)
        )

    failed = [r for r in results if not r.success]
    for r in results:
        if not r.success:
            console.print(f"  [red]✗[/red] {r.name}: {escape(r.error or '')}")
        elif r.skipped:
            console.print(f"  [dim]-[/dim] {r.name} (already present)")
        else:
            console.print(f"  [green]✓[/green] {r.name} ({r.bytes_written} bytes)")
    if failed:
        console.print(f"[red]{len(failed)} of {len(results)} downloads failed[/red]")
        raise typer.Exit(1)


if __name__ == "__main__":
    app()
