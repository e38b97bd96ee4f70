"""End-to-end experiment drivers behind the command line harness.

Pure computation in, dataclass reports out: the calibration pipeline over a
penalty grid, the sparsity/accuracy trade-off sweep, the noise robustness
study, and the localization benchmark. Heavy grids (penalty cells, noise
realizations, benchmark stacks) are independent jobs keyed by index, so they
can fan out over a process pool and merge deterministically regardless of
completion order.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .blur import Dictionary, build_digital_dictionary, build_operators
from .estimate import SgFit, debias, fit_blind_sg, localize_ps, mixture_from_calibration
from .imaging import CameraModel, GridGeometry, ImageStack, PointSource, StackKind, estimate_background, photon_stack
from .likelihood import mixture_means
from .psf import GaussianParams
from .simulate import Scene, exposure_for_psnr, mean_stack, sample_photons, simulate
from .solver import estimate_support, solve_calibration


def _map_indexed(worker, args_list, threads: int):
    """Run ``worker`` over ``args_list``, in order, optionally on processes.

    Results always come back merged by job index, never by completion order,
    so threaded and serial runs produce identical output for the same seeds.
    """
    if threads <= 1 or len(args_list) <= 1:
        return [worker(args) for args in args_list]
    chunksize = -(-len(args_list) // threads)
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, args_list, chunksize=chunksize))


def _as_photons(stack: ImageStack, camera: CameraModel) -> ImageStack:
    if stack.kind is StackKind.GREY:
        return photon_stack(stack, camera)
    if stack.kind is StackKind.PHOTONS:
        return stack
    raise ValueError("expected an acquired stack, not noise-free means")


def _cell_penalties(cell, n_kernels: int) -> tuple[float, ...]:
    if np.isscalar(cell):
        return (float(cell),) * n_kernels
    values = tuple(float(v) for v in cell)
    if len(values) != n_kernels:
        raise ValueError("one penalty per kernel required")
    return values


# ---------------------------------------------------------------------------
# Calibration pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineCell:
    """One penalty combination: sparse solve, support threshold, refit."""

    penalties: tuple[float, ...]
    support_before: int
    support_after: int
    deviance_biased: float
    deviance_debiased: float
    wall_time_s: float
    dictionary: Dictionary | None = field(repr=False, default=None)
    weights: list | None = field(repr=False, default=None)
    masks: list | None = field(repr=False, default=None)
    n_iters: int = 0
    error: str | None = None

    def row(self) -> dict:
        return {
            "penalties": ";".join(repr(v) for v in self.penalties),
            "support_before_debias": self.support_before,
            "support_after_debias": self.support_after,
            "deviance_biased": repr(self.deviance_biased),
            "deviance_debiased": repr(self.deviance_debiased),
            "wall_time_s": repr(self.wall_time_s),
            "n_iters": self.n_iters,
            "error": self.error or "",
        }


@dataclass
class CalibrationReport:
    background_rate: float
    sg: SgFit
    anchor: np.ndarray
    cells: list[PipelineCell]

    @property
    def sg_deviance(self) -> float:
        return self.sg.deviance

    def mixture(self, index: int, normalize: bool = True):
        cell = self.cells[index]
        if cell.error is not None:
            raise ValueError(f"cell {index} failed: {cell.error}")
        return mixture_from_calibration(cell.dictionary, cell.weights, self.anchor, normalize)


def _run_cell(photons, camera, dictionary, penalties, background_rate,
              max_iters, min_weight, solver_kwargs) -> PipelineCell:
    background = background_rate * camera.integration_volume
    start = time.perf_counter()
    result = solve_calibration(
        photons, dictionary, camera, penalties=list(penalties),
        background=background, max_iters=max_iters, **solver_kwargs
    )
    support = estimate_support(result.weights, dictionary.kernels, camera,
                               background_rate, min_weight=min_weight)
    effective = support.restrict(dictionary)
    warm = [w[m] for w, m in zip(result.weights, support.masks)]
    refit = debias(warm, effective, photons, background)
    return PipelineCell(
        penalties=tuple(penalties),
        support_before=support.support_size,
        support_after=sum(int(np.count_nonzero(w)) for w in refit.weights),
        deviance_biased=float(refit.deviance_trace[0]),
        deviance_debiased=refit.deviance,
        wall_time_s=time.perf_counter() - start,
        dictionary=effective,
        weights=refit.weights,
        masks=support.masks,
        n_iters=result.n_iters,
    )


def run_calibration(
    stack: ImageStack,
    camera: CameraModel,
    dictionary: Dictionary,
    penalty_grid,
    background_rate: float | None = None,
    seed: int = 0,
    sg_max_evals: int = 6000,
    max_iters: int = 4000,
    min_weight: float | None = None,
    threads: int = 1,
    **solver_kwargs,
) -> CalibrationReport:
    """Three-step calibration over a penalty grid.

    Estimates the background when none is given, anchors the model at a blind
    single-Gaussian position fit, then runs sparse solve + threshold + refit
    per penalty combination. ``min_weight`` overrides the noise-floor support
    threshold. A failing cell is recorded with its error message and the
    remaining cells still run.
    """
    grid = [_cell_penalties(cell, dictionary.n_kernels) for cell in penalty_grid]
    photons = _as_photons(stack, camera)
    if background_rate is None:
        background_rate = estimate_background(stack, camera)
    sg = fit_blind_sg(photons, background_rate * camera.integration_volume,
                      seed=seed, max_evals=sg_max_evals)
    anchor = sg.source.position
    jobs = [(photons, camera, dictionary, penalties, background_rate,
             max_iters, min_weight, solver_kwargs) for penalties in grid]
    cells = _map_indexed(_cell_job, jobs, threads)
    return CalibrationReport(background_rate=background_rate, sg=sg,
                             anchor=anchor, cells=cells)


# ---------------------------------------------------------------------------
# Sparsity/accuracy trade-off sweep
# ---------------------------------------------------------------------------

@dataclass
class TradeoffRow:
    design_index: int
    design: GaussianParams
    penalty: float
    support: int
    support_after_debias: int
    deviance_debiased: float
    wall_time_s: float
    error: str | None = None

    def row(self) -> dict:
        return {
            "design_index": self.design_index,
            "sigma_xy_um": repr(self.design.sigma_xy_um),
            "sigma_z_um": repr(self.design.sigma_z_um),
            "penalty": repr(self.penalty),
            "support": self.support,
            "support_after_debias": self.support_after_debias,
            "deviance_debiased": repr(self.deviance_debiased),
            "wall_time_s": repr(self.wall_time_s),
            "error": self.error or "",
        }


@dataclass
class TradeoffReport:
    background_rate: float
    sg_deviance: float
    rows: list[TradeoffRow]
    cells: list[PipelineCell] = field(default_factory=list, repr=False)

    def supports(self, design_index: int) -> list[int]:
        return [r.support for r in self.rows if r.design_index == design_index]

    def best_cell(self, design_index: int) -> PipelineCell | None:
        """The design's lowest-deviance successful cell, if any."""
        best = None
        for row, cell in zip(self.rows, self.cells):
            if row.design_index != design_index or cell.error is not None:
                continue
            if best is None or cell.deviance_debiased < best.deviance_debiased:
                best = cell
        return best


def tradeoff_sweep(
    stack: ImageStack,
    camera: CameraModel,
    designs,
    penalty_grid,
    background_rate: float | None = None,
    seed: int = 0,
    sg_max_evals: int = 6000,
    max_iters: int = 4000,
    min_weight: float | None = None,
    threads: int = 1,
    **solver_kwargs,
) -> TradeoffReport:
    """Deviance versus support size per single-kernel dictionary design.

    Every (design, penalty) cell is an independent job; the blind SG fit runs
    once and its deviance is the reference accuracy for the frontier.
    """
    photons = _as_photons(stack, camera)
    if background_rate is None:
        background_rate = estimate_background(stack, camera)
    sg = fit_blind_sg(photons, background_rate * camera.integration_volume,
                      seed=seed, max_evals=sg_max_evals)
    geometry = stack.geometry
    jobs = []
    labels = []
    for di, design in enumerate(designs):
        dictionary = build_digital_dictionary((design,), geometry)
        for lam in penalty_grid:
            jobs.append((photons, camera, dictionary, (float(lam),),
                         background_rate, max_iters, min_weight, solver_kwargs))
            labels.append((di, design, float(lam)))
    cells = _map_indexed(_cell_job, jobs, threads)
    rows = [
        TradeoffRow(
            design_index=di, design=design, penalty=lam,
            support=cell.support_before, support_after_debias=cell.support_after,
            deviance_debiased=cell.deviance_debiased, wall_time_s=cell.wall_time_s,
            error=cell.error,
        )
        for cell, (di, design, lam) in zip(cells, labels)
    ]
    return TradeoffReport(background_rate=background_rate,
                          sg_deviance=sg.deviance, rows=rows, cells=cells)


def _cell_job(args) -> PipelineCell:
    photons, camera, dictionary, penalties, rate, max_iters, min_weight, kwargs = args
    try:
        return _run_cell(photons, camera, dictionary, penalties, rate,
                         max_iters, min_weight, kwargs)
    except Exception as exc:
        return PipelineCell(penalties=penalties, support_before=0, support_after=0,
                            deviance_biased=float("nan"), deviance_debiased=float("nan"),
                            wall_time_s=float("nan"), error=str(exc))


# ---------------------------------------------------------------------------
# Noise robustness study
# ---------------------------------------------------------------------------

@dataclass
class FanoBin:
    lower: float
    upper: float
    n_atoms: int
    mean_weight: float
    variance: float
    fano: float

    def row(self) -> dict:
        return {
            "lower": repr(self.lower), "upper": repr(self.upper),
            "n_atoms": self.n_atoms, "mean_weight": repr(self.mean_weight),
            "variance": repr(self.variance), "fano": repr(self.fano),
        }


@dataclass
class RobustnessReport:
    support_sizes: np.ndarray
    mean_stack: ImageStack
    std_stack: ImageStack
    fano_bins: list[FanoBin]
    atom_means: np.ndarray = field(repr=False)
    atom_variances: np.ndarray = field(repr=False)

    @property
    def support_mean(self) -> float:
        return float(self.support_sizes.mean())

    @property
    def support_std(self) -> float:
        return float(self.support_sizes.std(ddof=1)) if self.support_sizes.size > 1 else 0.0


def _robustness_job(args):
    (means, camera, dictionary, penalties, rate, max_iters, min_weight,
     kwargs, seed, rounded) = args
    if rounded:
        photons = ImageStack(means.geometry, np.round(means.values), StackKind.PHOTONS)
    else:
        photons = sample_photons(means, seed)
    cell = _run_cell(photons, camera, dictionary, penalties, rate,
                     max_iters, min_weight, kwargs)
    full = []
    for mask, w in zip(cell.masks, cell.weights):
        vec = np.zeros(mask.size)
        vec[mask] = w
        full.append(vec)
    return cell.support_before, np.concatenate(full), full


def robustness_study(
    means: ImageStack,
    camera: CameraModel,
    dictionary: Dictionary,
    penalties,
    background_rate: float,
    n_realizations: int = 50,
    seed: int = 0,
    n_bins: int = 5,
    max_iters: int = 4000,
    min_weight: float | None = None,
    threads: int = 1,
    noise_model: str = "poisson",
    **solver_kwargs,
) -> RobustnessReport:
    """Calibration variability across independent noise realizations.

    Each realization re-samples the mean stack, runs the fixed
    (dictionary, penalty) pipeline, and projects the refit atom intensities
    back to the grid with zero background. ``noise_model="round"`` replaces
    sampling by rounding the mean, a zero-variance surrogate. Atoms are binned
    by their across-realization mean weight (log-spaced); bins report the
    pooled Fano factor, undefined (skipped) for bins with no mass.
    """
    if means.kind is not StackKind.MEAN:
        raise ValueError("robustness study starts from the noiseless mean stack")
    if noise_model not in ("poisson", "round"):
        raise ValueError("noise_model must be 'poisson' or 'round'")
    penalties = _cell_penalties(penalties, dictionary.n_kernels)
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=n_realizations)
    jobs = [(means, camera, dictionary, penalties, background_rate, max_iters,
             min_weight, solver_kwargs, int(s), noise_model == "round")
            for s in seeds]
    results = _map_indexed(_robustness_job, jobs, threads)

    operators = build_operators(dictionary, means.geometry)
    supports = np.array([r[0] for r in results])
    weight_matrix = np.stack([r[1] for r in results])
    projections = np.stack([
        mixture_means(operators, r[2], 0.0) for r in results
    ])
    mean_map = projections.mean(axis=0)
    std_map = projections.std(axis=0, ddof=1) if n_realizations > 1 else np.zeros_like(mean_map)

    atom_means = weight_matrix.mean(axis=0)
    atom_vars = (weight_matrix.var(axis=0, ddof=1) if n_realizations > 1
                 else np.zeros_like(atom_means))
    bins = []
    positive = atom_means > 0.0
    if np.any(positive):
        lo = atom_means[positive].min()
        hi = atom_means[positive].max()
        edges = np.geomspace(lo, hi, n_bins + 1) if hi > lo else np.array([lo, hi])
        edges[-1] *= 1.0 + 1e-12
        for b in range(edges.size - 1):
            mask = positive & (atom_means >= edges[b]) & (atom_means < edges[b + 1])
            if not np.any(mask):
                continue
            mw = float(atom_means[mask].mean())
            mv = float(atom_vars[mask].mean())
            bins.append(FanoBin(lower=float(edges[b]), upper=float(edges[b + 1]),
                                n_atoms=int(mask.sum()), mean_weight=mw,
                                variance=mv, fano=mv / mw))
    return RobustnessReport(
        support_sizes=supports,
        mean_stack=ImageStack(means.geometry, mean_map, StackKind.MEAN),
        std_stack=ImageStack(means.geometry, std_map, StackKind.MEAN),
        fano_bins=bins,
        atom_means=atom_means,
        atom_variances=atom_vars,
    )


# ---------------------------------------------------------------------------
# Localization benchmark
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkRow:
    model: str
    psnr_db: float
    stack_index: int
    position_error_um: float
    intensity_rel_error: float
    model_support: int
    wall_time_s: float
    n_evals: int

    def row(self) -> dict:
        return {
            "model": self.model, "psnr_db": repr(self.psnr_db),
            "stack_index": self.stack_index,
            "position_error_um": repr(self.position_error_um),
            "intensity_rel_error": repr(self.intensity_rel_error),
            "model_support": self.model_support,
            "wall_time_s": repr(self.wall_time_s),
            "n_evals": self.n_evals,
        }


@dataclass
class BenchmarkReport:
    rows: list[BenchmarkRow]

    def median_position_error(self, model: str, psnr_db: float) -> float:
        vals = [r.position_error_um for r in self.rows
                if r.model == model and r.psnr_db == psnr_db]
        return float(np.median(vals))

    def median_intensity_error(self, model: str, psnr_db: float) -> float:
        vals = [r.intensity_rel_error for r in self.rows
                if r.model == model and r.psnr_db == psnr_db]
        return float(np.median(vals))


def _model_support(model) -> int:
    return int(getattr(model, "support_size", 1))


def _benchmark_job(args):
    (models, scene_psf, geometry, camera, rate, truth_peak, position, psnr_db,
     stack_seed, fit_seed, max_evals, index) = args
    exposure = exposure_for_psnr(scene_psf, position, geometry, rate,
                                 camera.pixel_area_um2, psnr_db)
    cam = camera.with_exposure(exposure)
    volume = cam.integration_volume
    scene = Scene(psf=scene_psf, source=PointSource(tuple(position), volume),
                  background=rate * volume)
    grey = simulate(scene, geometry, cam, stack_seed)
    photons = photon_stack(grey, cam)
    truth_intensity = volume * truth_peak
    rows = []
    for name, model in models.items():
        start = time.perf_counter()
        loc = localize_ps(photons, model, rate * volume, seed=fit_seed,
                          max_evals=max_evals)
        rows.append(BenchmarkRow(
            model=name, psnr_db=psnr_db, stack_index=index,
            position_error_um=float(np.linalg.norm(loc.position - position)),
            intensity_rel_error=abs(loc.intensity - truth_intensity) / truth_intensity,
            model_support=_model_support(model),
            wall_time_s=time.perf_counter() - start,
            n_evals=loc.n_evals,
        ))
    return rows


def localization_benchmark(
    models: dict,
    scene_psf,
    geometry: GridGeometry,
    camera: CameraModel,
    background_rate: float,
    psnr_db_list,
    n_stacks: int = 50,
    seed: int = 0,
    margin: float = 0.15,
    max_evals: int = 800,
    threads: int = 1,
) -> BenchmarkReport:
    """Position/intensity errors of competing PSF models on common stacks.

    Uniform source positions are drawn from the volume shrunk by ``margin``
    per axis; each stack's exposure realizes the requested peak
    signal-to-noise ratio. Every model localizes the same stacks with the
    same optimizer seed. The intensity truth is the source's peak excess
    mean count under the generating model.
    """
    truth_peak = float(scene_psf.density(np.zeros(3)))
    xs, ys, zs = geometry.axes_um()
    lo = np.array([xs[0], ys[0], zs[0]])
    hi = np.array([xs[-1], ys[-1], zs[-1]])
    span = hi - lo
    rng = np.random.default_rng(seed)
    positions = rng.uniform(lo + margin * span, hi - margin * span,
                            size=(n_stacks, 3))
    psnr_db_list = [float(p) for p in psnr_db_list]
    seeds = rng.integers(0, 2**63 - 1, size=(n_stacks, len(psnr_db_list), 2))
    jobs = []
    for j in range(n_stacks):
        for i, psnr in enumerate(psnr_db_list):
            jobs.append((models, scene_psf, geometry, camera, background_rate,
                         truth_peak, positions[j], psnr, int(seeds[j, i, 0]),
                         int(seeds[j, i, 1]), max_evals, j))
    nested = _map_indexed(_benchmark_job, jobs, threads)
    return BenchmarkReport(rows=[row for rows in nested for row in rows])
