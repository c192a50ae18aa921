"""Experiment harness: load and degrade images, run solves and lambda sweeps, write CSVs."""

from __future__ import annotations

import csv
import logging
import re
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml
from pydantic import ValidationError

from unsmear.cache import cached_spectrum
from unsmear.denoisers import Denoiser, build_denoiser
from unsmear.descriptors import build_basis, build_operator
from unsmear.errors import DescriptorError, SolverError
from unsmear.fileio import expand_path, read_image, write_fidb, write_pgm
from unsmear.models import (
    CellResult,
    ExperimentSpec,
    Method,
    MethodSpec,
    ResultRow,
    ResultTable,
    SelectBy,
    SolverConfig,
    SolveTrace,
    SpectrumMode,
)
from unsmear.numerics import add_gaussian_noise, as_image, derive_seed
from unsmear.operators import ForwardOperator
from unsmear.phantoms import DEFAULT_PHANTOM_SIZE, PHANTOM_PREFIX, is_phantom, make_phantom
from unsmear.solvers import fida_step_size, ida_step_size, solve
from unsmear.spectrum import Spectrum
from unsmear.transforms import OrthoBasis

logger = logging.getLogger(__name__)

LAMBDA_GRID_POINTS = 15
# Default grid spans [LOW, HIGH] times max(sigma, FLOOR), geometrically spaced
LAMBDA_GRID_LOW = 0.05
LAMBDA_GRID_HIGH = 10.0
LAMBDA_GRID_FLOOR = 0.25

RUNS_CSV = "runs.csv"
TABLE_CSV = "table.csv"
SPEC_YAML = "spec.yaml"
CURVES_DIR = "curves"
IMAGES_DIR = "images"

RUNS_FIELDS = [
    "image",
    "sigma",
    "method",
    "lambda",
    "run",
    "seed",
    "psnr_final",
    "psnr_peak",
    "iterations",
    "error",
]
TABLE_FIELDS = [
    "image",
    "method",
    "sigma",
    "best_lambda",
    "psnr_mean",
    "psnr_std",
    "psnr_final_mean",
    "psnr_peak_mean",
    "iterations",
    "runs",
    "failures",
    "operator",
]
TRACE_FIELDS = ["iteration", "residual", "psnr"]


def format_number(value: Optional[float]) -> str:
    """Shortest round-trip decimal; empty for missing values."""
    if value is None:
        return ""
    return np.format_float_positional(float(value), trim="-")


def format_psnr(value: Optional[float]) -> str:
    """PSNR with 4 decimals; empty for missing values."""
    return "" if value is None else f"{value:.4f}"


def safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", text).strip("-") or "x"


def image_label(ref: str) -> str:
    """Short name of an image reference: the phantom name or the file stem."""
    if is_phantom(ref):
        return ref[len(PHANTOM_PREFIX) :]
    return Path(ref).stem


def load_image(ref: str, size: int = DEFAULT_PHANTOM_SIZE) -> np.ndarray:
    """Load `phantom:NAME` at `size` or a PGM/FIDB file."""
    if is_phantom(ref):
        return make_phantom(ref, size)
    return read_image(expand_path(ref))


def degrade(img: np.ndarray, op: ForwardOperator, sigma: float, seed: int) -> np.ndarray:
    """A x plus i.i.d. Gaussian noise of standard deviation `sigma`."""
    return add_gaussian_noise(op.apply(as_image(img)), sigma, seed)


def save_observation(y: np.ndarray, path: Path) -> tuple[Path, Path]:
    """Write the lossless FIDB and an 8-bit PGM preview next to each other."""
    path = expand_path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fidb, preview = path.with_suffix(".fidb"), path.with_suffix(".pgm")
    write_fidb(y, fidb)
    write_pgm(y, preview)
    return fidb, preview


def default_lambda_grid(sigma: float, points: int = LAMBDA_GRID_POINTS) -> list[float]:
    """Geometric grid of denoising parameters scaled to the noise level."""
    scale = max(float(sigma), LAMBDA_GRID_FLOOR)
    if points == 1:
        return [scale]
    grid = np.geomspace(LAMBDA_GRID_LOW * scale, LAMBDA_GRID_HIGH * scale, points)
    return [float(v) for v in grid]


def load_experiment(path: Path) -> ExperimentSpec:
    """Read an experiment spec from YAML."""
    path = expand_path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as e:
        raise DescriptorError(f"cannot read experiment spec {path}: {e}") from e
    if not isinstance(data, dict):
        raise DescriptorError(f"{path}: experiment spec must be a mapping")
    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as e:
        raise DescriptorError(f"{path}: {e}") from e


@dataclass
class PreparedMethod:
    """A method with its basis and weighted spectrum resolved for one operator."""

    spec: MethodSpec
    basis: Optional[OrthoBasis] = None
    spectrum: Optional[Spectrum] = None
    gamma: Optional[float] = None


def prepare_method(
    mspec: MethodSpec,
    op: ForwardOperator,
    cache_dir: Optional[Path] = None,
    workers: int = 4,
    force: bool = False,
    progress_callback: Optional[Callable[[str, int, int], None]] = None,
    step_seed: Optional[int] = None,
) -> PreparedMethod:
    """Build the basis and spectrum a method needs (nothing for IDA).

    With `step_seed` the automatic step size is also computed, once, so that
    solves sharing the method skip the power iteration.
    """
    if mspec.method == Method.IDA:
        prepared = PreparedMethod(mspec)
        if step_seed is not None:
            prepared.gamma = _auto_step(mspec, lambda: ida_step_size(op, seed=step_seed))
        return prepared
    basis = build_basis(mspec.basis, op, op.input_shape)
    spectrum = cached_spectrum(
        op,
        basis,
        strategy=mspec.strategy,
        cache_dir=cache_dir,
        force=force,
        workers=workers,
        progress_callback=progress_callback,
    )
    if mspec.mode.kind != SpectrumMode.PINV:
        spectrum = spectrum.reweight(mspec.mode.kind, mspec.mode.tau)
    logger.info("%s uses %s (%s)", mspec.label, basis.describe(), spectrum.strategy.value)
    prepared = PreparedMethod(mspec, basis, spectrum)
    if step_seed is not None and mspec.method == Method.FIDA:
        prepared.gamma = _auto_step(
            mspec, lambda: fida_step_size(op, basis, spectrum, seed=step_seed)
        )
    return prepared


def _auto_step(mspec: MethodSpec, compute: Callable[[], float]) -> Optional[float]:
    try:
        gamma = compute()
    except SolverError as e:
        # Left to the solves, which then fail cell by cell
        logger.warning("%s: %s", mspec.label, e)
        return None
    logger.info("%s step size %.6g", mspec.label, gamma)
    return gamma


def run_solve(
    y: np.ndarray,
    op: ForwardOperator,
    prepared: PreparedMethod,
    denoiser: Denoiser,
    cfg: SolverConfig,
    truth: Optional[np.ndarray] = None,
) -> SolveTrace:
    """Solve with a prepared method; `cfg.method` is taken from the method."""
    update = {"method": prepared.spec.method}
    if cfg.gamma is None and prepared.gamma is not None:
        update["gamma"] = prepared.gamma
    cfg = cfg.model_copy(update=update)
    return solve(
        y, op, denoiser, cfg, basis=prepared.basis, spec=prepared.spectrum, truth=truth
    )


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def write_trace_csv(trace: SolveTrace, path: Path) -> None:
    """One row per iteration: residual ||A x - y|| and PSNR (empty without truth)."""
    rows = []
    for i in range(trace.iterations_run):
        value = trace.iterates_psnr[i] if i < len(trace.iterates_psnr) else None
        rows.append(
            {
                "iteration": i + 1,
                "residual": format_number(trace.objective_residual[i]),
                "psnr": format_psnr(value),
            }
        )
    _write_csv(expand_path(path), TRACE_FIELDS, rows)


@dataclass
class _Scene:
    """Everything shared by the cells of one image."""

    label: str
    truth: np.ndarray
    op: ForwardOperator
    denoiser: Denoiser
    methods: list[PreparedMethod]


def _metric(cell: CellResult, select: SelectBy) -> Optional[float]:
    return cell.psnr_peak if select == SelectBy.PEAK else cell.psnr_final


def _mean(values: list[float]) -> float:
    return float(np.mean(values))


def _std(values: list[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def _padded_mean(curves: list[list[float]]) -> list[float]:
    """Average curves of different lengths, holding each at its last value."""
    curves = [c for c in curves if c]
    if not curves:
        return []
    length = max(len(c) for c in curves)
    padded = np.array([c + [c[-1]] * (length - len(c)) for c in curves])
    return [float(v) for v in padded.mean(axis=0)]


@dataclass
class _Summary:
    row: ResultRow
    lambda_curve: list[tuple[float, Optional[float]]]
    iteration_curve: list[float]


def summarize_group(
    cells: dict[tuple[int, int], CellResult],
    grid: list[float],
    runs: int,
    select: SelectBy,
    image: str,
    method: str,
    sigma: float,
    operator: str,
) -> _Summary:
    """Best-over-lambda statistics for one (image, method, sigma) group.

    `cells` maps (lambda index, run) to results. A lambda competes only when
    all of its runs succeeded; ties keep the earliest grid value.
    """
    lambda_curve = []
    best_index, best_mean = None, None
    for i, lam in enumerate(grid):
        group = [cells[(i, r)] for r in range(runs)]
        values = [_metric(c, select) for c in group if c.ok]
        mean = _mean(values) if len(values) == runs else None
        lambda_curve.append((lam, mean))
        if mean is not None and (best_mean is None or mean > best_mean):
            best_index, best_mean = i, mean

    failures = sum(1 for c in cells.values() if not c.ok)
    row = ResultRow(
        image=image,
        method=method,
        sigma=sigma,
        runs=runs,
        failures=failures,
        operator=operator,
    )
    iteration_curve: list[float] = []
    if best_index is not None:
        best = [cells[(best_index, r)] for r in range(runs)]
        row.best_lambda = grid[best_index]
        row.psnr_mean = best_mean
        row.psnr_std = _std([_metric(c, select) for c in best])
        row.psnr_final_mean = _mean([c.psnr_final for c in best])
        row.psnr_peak_mean = _mean([c.psnr_peak for c in best])
        row.iterations = _mean([c.iterations for c in best])
        iteration_curve = _padded_mean([c.psnr_curve for c in best])
    return _Summary(row=row, lambda_curve=lambda_curve, iteration_curve=iteration_curve)


def _prepare_scenes(
    spec: ExperimentSpec,
    cache_dir: Optional[Path],
    progress_callback: Optional[Callable[[str, int, int], None]],
) -> list[_Scene]:
    scenes = []
    by_shape: dict[tuple[int, int], tuple] = {}
    for ref in spec.images:
        truth = load_image(ref, spec.image_size)
        if truth.shape not in by_shape:
            op = build_operator(spec.operator, truth.shape)
            denoiser = build_denoiser(spec.denoiser, truth.shape)
            methods = [
                prepare_method(
                    m,
                    op,
                    cache_dir=cache_dir,
                    workers=spec.workers,
                    progress_callback=progress_callback,
                    step_seed=spec.base_seed,
                )
                for m in spec.methods
            ]
            by_shape[truth.shape] = (op, denoiser, methods)
        op, denoiser, methods = by_shape[truth.shape]
        scenes.append(_Scene(image_label(ref), truth, op, denoiser, methods))

    labels = [s.label for s in scenes]
    if len(set(labels)) != len(labels):
        raise DescriptorError(f"image names must be unique, got {labels}")
    method_labels = [m.label for m in spec.methods]
    if len(set(method_labels)) != len(method_labels):
        raise DescriptorError(f"method labels must be unique, got {method_labels}")
    return scenes


def run_sweep(
    spec: ExperimentSpec,
    cache_dir: Optional[Path] = None,
    progress_callback: Optional[Callable[[str, int, int], None]] = None,
) -> ResultTable:
    """
    Solve every (image, sigma, method, lambda, run) cell and write the results.

    Writes to `spec.output_dir`: runs.csv (one row per cell), table.csv (best
    lambda per image/method/sigma), curves/lambda__*.csv (PSNR vs lambda),
    curves/iter__*.csv (PSNR vs iteration at the best lambda), spec.yaml and,
    with `save_images`, PGM restorations of run 0 at the best lambda.

    Run r of sigma s on image i uses seed derive_seed(base_seed, i, s, r), shared
    by all methods and lambdas. Cells run on a thread pool and are merged by
    index, so output bytes do not depend on the worker count.

    Args:
        spec: Experiment description
        cache_dir: Spectrum cache directory (default from the environment)
        progress_callback: Optional callback(name, current, total)

    Returns:
        ResultTable with one row per (image, method, sigma)
    """
    out_dir = expand_path(spec.output_dir)
    scenes = _prepare_scenes(spec, cache_dir, progress_callback)
    grids = [
        list(spec.lambda_grid) if spec.lambda_grid else default_lambda_grid(s, spec.lambda_points)
        for s in spec.noise_sigmas
    ]
    operator = spec.operator.descriptor()

    observations: dict[tuple[int, int, int], tuple[int, np.ndarray]] = {}
    for i, scene in enumerate(scenes):
        for j, sigma in enumerate(spec.noise_sigmas):
            for r in range(spec.runs):
                seed = derive_seed(spec.base_seed, scene.label, float(sigma), r)
                observations[(i, j, r)] = (seed, degrade(scene.truth, scene.op, sigma, seed))

    cfg = SolverConfig(max_iters=spec.max_iters, rel_tol=spec.rel_tol, seed=spec.base_seed)
    keys = [
        (i, j, m, k, r)
        for i in range(len(scenes))
        for j in range(len(spec.noise_sigmas))
        for m in range(len(spec.methods))
        for k in range(len(grids[j]))
        for r in range(spec.runs)
    ]

    def blank(key: tuple) -> CellResult:
        i, j, m, k, r = key
        return CellResult(
            image=scenes[i].label,
            sigma=spec.noise_sigmas[j],
            method=spec.methods[m].label,
            lam=grids[j][k],
            run=r,
            seed=observations[(i, j, r)][0],
        )

    def work(key: tuple) -> CellResult:
        i, j, m, k, r = key
        scene = scenes[i]
        cell = blank(key)
        trace = run_solve(
            observations[(i, j, r)][1],
            scene.op,
            scene.methods[m],
            scene.denoiser,
            cfg.model_copy(update={"lambda_gamma": grids[j][k]}),
            truth=scene.truth,
        )
        cell.psnr_final = trace.final_psnr
        cell.psnr_peak = trace.peak_psnr
        cell.iterations = trace.iterations_run
        cell.psnr_curve = trace.iterates_psnr
        return cell

    results: dict[tuple, CellResult] = {}
    with ThreadPoolExecutor(max_workers=spec.workers) as executor:
        future_to_key = {executor.submit(work, key): key for key in keys}
        for n, future in enumerate(as_completed(future_to_key)):
            key = future_to_key[future]
            try:
                results[key] = future.result()
            except Exception as e:
                cell = blank(key)
                cell.error = f"{type(e).__name__}: {e}"
                logger.warning(
                    "cell %s sigma=%g %s lambda=%g run=%d failed: %s",
                    cell.image,
                    cell.sigma,
                    cell.method,
                    cell.lam,
                    cell.run,
                    cell.error,
                )
                results[key] = cell
            if progress_callback:
                progress_callback("cells", n + 1, len(keys))

    table = ResultTable(operator=operator, select=spec.select)
    summaries: dict[tuple[int, int, int], _Summary] = {}
    for i, scene in enumerate(scenes):
        for j, sigma in enumerate(spec.noise_sigmas):
            for m, mspec in enumerate(spec.methods):
                group = {
                    (k, r): results[(i, j, m, k, r)]
                    for k in range(len(grids[j]))
                    for r in range(spec.runs)
                }
                summary = summarize_group(
                    group,
                    grids[j],
                    spec.runs,
                    spec.select,
                    image=scene.label,
                    method=mspec.label,
                    sigma=sigma,
                    operator=operator,
                )
                summaries[(i, j, m)] = summary
                table.rows.append(summary.row)

    cells = [results[key] for key in sorted(results)]
    _write_outputs(out_dir, spec, cells, table, summaries, scenes)
    if spec.save_images:
        _write_images(out_dir, spec, scenes, observations, summaries, cfg)
    return table


def _write_outputs(
    out_dir: Path,
    spec: ExperimentSpec,
    cells: list[CellResult],
    table: ResultTable,
    summaries: dict[tuple[int, int, int], _Summary],
    scenes: list[_Scene],
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / SPEC_YAML).write_text(
        yaml.safe_dump(spec.model_dump(mode="json"), sort_keys=False)
    )
    _write_csv(
        out_dir / RUNS_CSV,
        RUNS_FIELDS,
        [
            {
                "image": c.image,
                "sigma": format_number(c.sigma),
                "method": c.method,
                "lambda": format_number(c.lam),
                "run": c.run,
                "seed": c.seed,
                "psnr_final": format_psnr(c.psnr_final),
                "psnr_peak": format_psnr(c.psnr_peak),
                "iterations": c.iterations if c.ok else "",
                "error": c.error or "",
            }
            for c in cells
        ],
    )
    _write_csv(
        out_dir / TABLE_CSV,
        TABLE_FIELDS,
        [
            {
                "image": row.image,
                "method": row.method,
                "sigma": format_number(row.sigma),
                "best_lambda": format_number(row.best_lambda),
                "psnr_mean": format_psnr(row.psnr_mean),
                "psnr_std": format_psnr(row.psnr_std),
                "psnr_final_mean": format_psnr(row.psnr_final_mean),
                "psnr_peak_mean": format_psnr(row.psnr_peak_mean),
                "iterations": "" if row.iterations is None else f"{row.iterations:.1f}",
                "runs": row.runs,
                "failures": row.failures,
                "operator": row.operator,
            }
            for row in table.rows
        ],
    )

    curves = out_dir / CURVES_DIR
    for (i, j, m), summary in summaries.items():
        stem = curve_stem(scenes[i].label, spec.methods[m].label, spec.noise_sigmas[j])
        _write_csv(
            curves / f"lambda__{stem}.csv",
            ["lambda", "psnr_mean"],
            [
                {"lambda": format_number(lam), "psnr_mean": format_psnr(mean)}
                for lam, mean in summary.lambda_curve
            ],
        )
        _write_csv(
            curves / f"iter__{stem}.csv",
            ["iteration", "psnr_mean"],
            [
                {"iteration": n + 1, "psnr_mean": format_psnr(v)}
                for n, v in enumerate(summary.iteration_curve)
            ],
        )


def curve_stem(image: str, method: str, sigma: float) -> str:
    """File stem shared by the curve files of one (image, method, sigma) group."""
    return f"{safe_name(image)}__{safe_name(method)}__sigma{format_number(sigma)}"


def _write_images(
    out_dir: Path,
    spec: ExperimentSpec,
    scenes: list[_Scene],
    observations: dict[tuple[int, int, int], tuple[int, np.ndarray]],
    summaries: dict[tuple[int, int, int], _Summary],
    cfg: SolverConfig,
) -> None:
    """Truth, degraded input and each method's run-0 restoration at its best lambda."""
    images = out_dir / IMAGES_DIR
    images.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(scenes):
        write_pgm(scene.truth, images / f"{safe_name(scene.label)}__truth.pgm")
        for j, sigma in enumerate(spec.noise_sigmas):
            prefix = f"{safe_name(scene.label)}__sigma{format_number(sigma)}"
            y = observations[(i, j, 0)][1]
            write_pgm(y, images / f"{prefix}__degraded.pgm")
            for m, mspec in enumerate(spec.methods):
                best_lambda = summaries[(i, j, m)].row.best_lambda
                if best_lambda is None:
                    continue
                try:
                    trace = run_solve(
                        y,
                        scene.op,
                        scene.methods[m],
                        scene.denoiser,
                        cfg.model_copy(update={"lambda_gamma": best_lambda}),
                    )
                except Exception as e:
                    logger.warning("no restored image for %s/%s: %s", prefix, mspec.label, e)
                    continue
                write_pgm(trace.final, images / f"{prefix}__{safe_name(mspec.label)}.pgm")
