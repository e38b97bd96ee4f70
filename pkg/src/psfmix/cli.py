"""Command-line harness: experiment drivers behind strict JSON configs.

Every subcommand reads one versioned config file, writes all outputs under
``--out``, and records the config and seed in ``manifest.json``. Configs are
validated strictly: unknown keys anywhere are rejected. Exit codes: 0 on
success, 2 on configuration or input validation problems, 3 on numerical
failure inside a run.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .blur import build_digital_dictionary, build_operators
from .imaging import (
    CameraModel,
    GridGeometry,
    ImageStack,
    PointSource,
    StackKind,
    estimate_background,
    grey_stack,
)
from .io import (
    load_dictionary_spec,
    load_mixture_psf,
    load_stack,
    read_json,
    save_mixture_model,
    save_stack,
    stack_to_csv,
    write_json,
)
from .likelihood import mixture_means
from .presets import DatasetPreset, preset_by_name
from .psf import BornWolfParams, BornWolfPsf, GaussianParams, GaussianPsf
from .simulate import Scene, mean_stack, sample_photons
from .experiments import (
    localization_benchmark,
    robustness_study,
    run_calibration,
    tradeoff_sweep,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    """A configuration or input-file problem; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Config validation helpers
# ---------------------------------------------------------------------------

def _check_keys(block: dict, allowed, where: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def _need(block: dict, key: str, where: str):
    if key not in block:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return block[key]


def _number(value, where: str, minimum=None) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if not np.isfinite(out):
        raise ConfigError(f"{where}: must be finite")
    if minimum is not None and out < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}")
    return out


def _integer(value, where: str, minimum=None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}")
    return value


def _existing(path: Path, where: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{where}: file not found: {path}")
    return path


def _flag(cfg: dict, key: str, where: str) -> bool:
    value = cfg.get(key, False)
    if not isinstance(value, bool):
        raise ConfigError(f"{where}.{key}: expected true or false")
    return value


def _built(factory, where: str):
    """Run a domain constructor, mapping its validation errors to ConfigError."""
    try:
        return factory()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


CONTEXT_KEYS = ("preset", "edge", "full", "geometry", "camera")
GEOMETRY_KEYS = ("n_slices", "n_rows", "n_cols", "lateral_sampling_nm",
                 "axial_sampling_nm", "origin_um")
CAMERA_KEYS = ("quantum_efficiency", "gain", "amplification", "bias",
               "exposure_ms", "pixel_area_um2")


def _context(cfg: dict, where: str = "config"):
    """Resolve (geometry, camera, preset) from the shared context keys.

    A preset defaults 3-D datasets to the affordable desk cube; ``full``
    selects the dataset's published geometry and ``edge`` a custom cube.
    """
    if "preset" in cfg:
        if "geometry" in cfg or "camera" in cfg:
            raise ConfigError(f"{where}: give either preset or geometry+camera, not both")
        try:
            preset = preset_by_name(cfg["preset"])
        except (KeyError, ValueError):
            raise ConfigError(f"{where}: unknown preset {cfg['preset']!r}") from None
        full = _flag(cfg, "full", where)
        if full and "edge" in cfg:
            raise ConfigError(f"{where}: 'full' and 'edge' are mutually exclusive")
        if full:
            geometry = preset.geometry
        elif "edge" in cfg:
            geometry = preset.desk_geometry(_integer(cfg["edge"], f"{where}.edge", 1))
        elif preset.geometry.n_rows == 1:
            geometry = preset.geometry
        else:
            geometry = preset.desk_geometry()
        return geometry, preset.camera, preset
    if "edge" in cfg or "full" in cfg:
        raise ConfigError(f"{where}: 'edge'/'full' require a preset")
    if "geometry" not in cfg or "camera" not in cfg:
        raise ConfigError(f"{where}: need a preset, or explicit geometry and camera")
    g = cfg["geometry"]
    _check_keys(g, GEOMETRY_KEYS, f"{where}.geometry")
    geometry = _built(lambda: GridGeometry(
        n_slices=_integer(_need(g, "n_slices", f"{where}.geometry"), f"{where}.geometry.n_slices", 1),
        n_rows=_integer(_need(g, "n_rows", f"{where}.geometry"), f"{where}.geometry.n_rows", 1),
        n_cols=_integer(_need(g, "n_cols", f"{where}.geometry"), f"{where}.geometry.n_cols", 1),
        lateral_sampling_nm=_number(_need(g, "lateral_sampling_nm", f"{where}.geometry"), f"{where}.geometry.lateral_sampling_nm", 0.0),
        axial_sampling_nm=_number(_need(g, "axial_sampling_nm", f"{where}.geometry"), f"{where}.geometry.axial_sampling_nm", 0.0),
        origin_um=tuple(float(v) for v in g.get("origin_um", (0.0, 0.0, 0.0))),
    ), f"{where}.geometry")
    c = cfg["camera"]
    _check_keys(c, CAMERA_KEYS, f"{where}.camera")
    camera = _built(lambda: CameraModel(*(
        _number(_need(c, k, f"{where}.camera"), f"{where}.camera.{k}") for k in CAMERA_KEYS
    )), f"{where}.camera")
    return geometry, camera, None


PSF_KEYS = {
    "bw": ("type", "wavelength_nm", "numerical_aperture", "refractive_index",
           "tabulated", "r_step_nm", "z_step_nm"),
    "sg": ("type", "sigma_xy_nm", "sigma_z_nm"),
    "sgt": ("type",),
    "gm": ("type", "model_file"),
}


def _psf_from_config(spec, geometry: GridGeometry, preset: DatasetPreset | None,
                     base_dir: Path, where: str):
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{where}: expected an object with a 'type' key")
    kind = spec["type"]
    if kind not in PSF_KEYS:
        raise ConfigError(f"{where}: unknown psf type {kind!r}")
    _check_keys(spec, PSF_KEYS[kind], where)
    if kind == "sgt":
        if preset is None:
            raise ConfigError(f"{where}: psf type 'sgt' needs a preset context")
        return GaussianPsf(preset.theoretical_sg)
    if kind == "sg":
        return _built(lambda: GaussianPsf(GaussianParams(
            _number(_need(spec, "sigma_xy_nm", where), f"{where}.sigma_xy_nm") * 1e-3,
            _number(_need(spec, "sigma_z_nm", where), f"{where}.sigma_z_nm") * 1e-3,
        )), where)
    if kind == "gm":
        path = Path(base_dir) / _need(spec, "model_file", where)
        base = _existing(path.with_suffix(".json") if path.suffix == "" else path,
                         where)
        return _built(lambda: load_mixture_psf(base), where)
    params = _built(lambda: BornWolfParams(
        _number(_need(spec, "wavelength_nm", where), f"{where}.wavelength_nm"),
        _number(_need(spec, "numerical_aperture", where), f"{where}.numerical_aperture"),
        _number(_need(spec, "refractive_index", where), f"{where}.refractive_index"),
    ), where)
    psf = BornWolfPsf(params, geometry)
    if spec.get("tabulated"):
        return psf.tabulated(
            r_step_um=_number(spec.get("r_step_nm", 2.0), f"{where}.r_step_nm", 0.0) * 1e-3,
            z_step_um=_number(spec.get("z_step_nm", 8.0), f"{where}.z_step_nm", 0.0) * 1e-3,
        )
    return psf


SCENE_KEYS = ("source", "background_rate", "psf")
SOURCE_KEYS = ("x_um", "y_um", "z_um", "intensity")


def _scene_from_config(cfg: dict, geometry, camera, preset, base_dir: Path,
                       where: str = "config"):
    """Resolve the scene block or file into (Scene, background_rate)."""
    if ("scene" in cfg) == ("scene_file" in cfg):
        raise ConfigError(f"{where}: give exactly one of 'scene' or 'scene_file'")
    if "scene_file" in cfg:
        path = _existing(Path(base_dir) / cfg["scene_file"], f"{where}.scene_file")
        spec = read_json(path)
        base_dir = path.parent
        where = str(path)
    else:
        spec = cfg["scene"]
        where = f"{where}.scene"
    _check_keys(spec, SCENE_KEYS, where)
    src = _need(spec, "source", where)
    _check_keys(src, SOURCE_KEYS, f"{where}.source")
    position = tuple(
        _number(_need(src, k, f"{where}.source"), f"{where}.source.{k}")
        for k in ("x_um", "y_um", "z_um")
    )
    intensity = _number(_need(src, "intensity", f"{where}.source"),
                        f"{where}.source.intensity", 0.0)
    rate = _number(_need(spec, "background_rate", where),
                   f"{where}.background_rate", 0.0)
    psf = _psf_from_config(_need(spec, "psf", where), geometry, preset,
                           base_dir, f"{where}.psf")
    scene = _built(lambda: Scene(psf=psf, source=PointSource(position, intensity),
                                 background=rate * camera.integration_volume),
                   where)
    return scene, rate


KERNEL_KEYS = ("sigma_xy_nm", "sigma_z_nm")


def _kernels_from_config(cfg: dict, base_dir: Path, where: str = "config"):
    if ("kernels" in cfg) == ("dictionary_file" in cfg):
        raise ConfigError(f"{where}: give exactly one of 'kernels' or 'dictionary_file'")
    if "dictionary_file" in cfg:
        path = _existing(Path(base_dir) / cfg["dictionary_file"],
                         f"{where}.dictionary_file")
        try:
            return tuple(load_dictionary_spec(path))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{where}.dictionary_file: {exc}") from None
    specs = cfg["kernels"]
    if not isinstance(specs, list) or not specs:
        raise ConfigError(f"{where}.kernels: expected a non-empty list")
    kernels = []
    for i, spec in enumerate(specs):
        _check_keys(spec, KERNEL_KEYS, f"{where}.kernels[{i}]")
        kernels.append(_built(lambda: GaussianParams(
            _number(_need(spec, "sigma_xy_nm", f"{where}.kernels[{i}]"),
                    f"{where}.kernels[{i}].sigma_xy_nm", 0.0) * 1e-3,
            _number(_need(spec, "sigma_z_nm", f"{where}.kernels[{i}]"),
                    f"{where}.kernels[{i}].sigma_z_nm", 0.0) * 1e-3,
        ), f"{where}.kernels[{i}]"))
    return tuple(kernels)


def _penalty_grid(value, n_kernels: int, where: str):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: expected a non-empty list of penalty cells")
    grid = []
    for i, cell in enumerate(value):
        if isinstance(cell, list):
            if len(cell) != n_kernels:
                raise ConfigError(f"{where}[{i}]: one penalty per kernel required")
            grid.append(tuple(_number(v, f"{where}[{i}]", 0.0) for v in cell))
        else:
            grid.append(_number(cell, f"{where}[{i}]", 0.0))
    return grid


def _load_stack_file(cfg: dict, base_dir: Path, where: str = "config") -> ImageStack:
    name = _need(cfg, "stack_file", where)
    base = Path(base_dir) / name
    sidecar = base.with_suffix(".json") if base.suffix == "" else base
    _existing(sidecar, f"{where}.stack_file")
    try:
        return load_stack(base)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{where}.stack_file: {exc}") from None


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _write_csv(path: Path, fieldnames, rows) -> Path:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def _write_manifest(out_dir: Path, command: str, cfg: dict, seed: int,
                    threads: int, outputs) -> None:
    write_json(out_dir / "manifest.json", {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "command": command,
        "config": cfg,
        "seed": seed,
        "threads": threads,
        "outputs": sorted(str(name) for name in outputs),
    })


def _sg_payload(report) -> dict:
    return {
        "sigma_xy_nm": report.sg.params.sigma_xy_um * 1e3,
        "sigma_z_nm": report.sg.params.sigma_z_um * 1e3,
        "position_um": [float(v) for v in report.sg.source.position],
        "intensity": report.sg.source.intensity,
        "deviance": report.sg.deviance,
        "n_evals": report.sg.n_evals,
        "background_rate": report.background_rate,
    }


def _project_cell(cell, geometry: GridGeometry) -> ImageStack:
    """Grid density of a refit cell's model, background set to zero."""
    operators = build_operators(cell.dictionary, geometry)
    values = mixture_means(operators, cell.weights, 0.0)
    return ImageStack(geometry, values, StackKind.MEAN)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

SIMULATE_KEYS = CONTEXT_KEYS + ("version", "scene", "scene_file", "stream", "csv")


def cmd_simulate(cfg: dict, args, out_dir: Path, base_dir: Path) -> int:
    _check_keys(cfg, SIMULATE_KEYS, "config")
    geometry, camera, preset = _context(cfg)
    scene, _ = _scene_from_config(cfg, geometry, camera, preset, base_dir)
    stream = _integer(cfg.get("stream", 0), "config.stream", 0)

    means = mean_stack(scene, geometry)
    photons = sample_photons(means, args.seed, stream)
    grey = grey_stack(photons, camera)
    outputs = []
    for name, stack in (("mean", means), ("photons", photons), ("grey", grey)):
        for path in save_stack(stack, out_dir / name):
            outputs.append(path.name)
    if cfg.get("csv"):
        outputs.append(stack_to_csv(grey, out_dir / "grey.csv").name)
    _write_manifest(out_dir, "simulate", cfg, args.seed, args.threads, outputs)
    return EXIT_OK


BACKGROUND_KEYS = CONTEXT_KEYS + ("version", "stack_file")


def cmd_estimate_background(cfg: dict, args, out_dir: Path, base_dir: Path) -> int:
    _check_keys(cfg, BACKGROUND_KEYS, "config")
    _, camera, _ = _context(cfg)
    stack = _load_stack_file(cfg, base_dir)

    rate = estimate_background(stack, camera)
    write_json(out_dir / "background.json", {
        "background_rate": rate,
        "integrated_count": rate * camera.integration_volume,
    })
    _write_manifest(out_dir, "estimate-background", cfg, args.seed, args.threads,
                    ["background.json"])
    return EXIT_OK


CALIBRATE_KEYS = CONTEXT_KEYS + (
    "version", "stack_file", "kernels", "dictionary_file", "penalties",
    "background_rate", "min_weight", "max_iters", "sg_max_evals",
)

CALIBRATION_FIELDS = (
    "cell_index", "penalties", "support_before_debias", "support_after_debias",
    "deviance_biased", "deviance_debiased", "wall_time_s", "n_iters",
    "model_file", "error",
)


def cmd_calibrate(cfg: dict, args, out_dir: Path, base_dir: Path) -> int:
    _check_keys(cfg, CALIBRATE_KEYS, "config")
    _, camera, _ = _context(cfg)
    stack = _load_stack_file(cfg, base_dir)
    kernels = _kernels_from_config(cfg, base_dir)
    grid = _penalty_grid(_need(cfg, "penalties", "config"), len(kernels),
                         "config.penalties")
    rate = (None if "background_rate" not in cfg
            else _number(cfg["background_rate"], "config.background_rate", 0.0))
    min_weight = (None if "min_weight" not in cfg
                  else _number(cfg["min_weight"], "config.min_weight", 0.0))
    max_iters = _integer(cfg.get("max_iters", 4000), "config.max_iters", 1)
    sg_max_evals = _integer(cfg.get("sg_max_evals", 6000), "config.sg_max_evals", 1)

    dictionary = build_digital_dictionary(kernels, stack.geometry)
    report = run_calibration(
        stack, camera, dictionary, grid, background_rate=rate, seed=args.seed,
        sg_max_evals=sg_max_evals, max_iters=max_iters, min_weight=min_weight,
        threads=args.threads,
    )
    outputs = ["sg.json", "calibration.csv"]
    write_json(out_dir / "sg.json", _sg_payload(report))
    rows = []
    for i, cell in enumerate(report.cells):
        row = dict(cell.row(), cell_index=i, model_file="")
        if cell.error is None:
            name = f"model_{i:03d}"
            for path in save_mixture_model(
                cell.dictionary, cell.weights, out_dir / name,
                anchor_um=report.anchor, geometry=stack.geometry,
                extra={"penalties": list(cell.penalties),
                       "deviance": cell.deviance_debiased},
            ):
                outputs.append(path.name)
            row["model_file"] = name + ".json"
        rows.append(row)
    _write_csv(out_dir / "calibration.csv", CALIBRATION_FIELDS, rows)
    _write_manifest(out_dir, "calibrate", cfg, args.seed, args.threads, outputs)
    if all(cell.error is not None for cell in report.cells):
        print("every penalty cell failed; see calibration.csv", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


TRADEOFF_KEYS = CONTEXT_KEYS + (
    "version", "stack_file", "designs", "penalties", "background_rate",
    "min_weight", "max_iters", "sg_max_evals",
)

TRADEOFF_FIELDS = (
    "design_index", "sigma_xy_um", "sigma_z_um", "penalty", "support",
    "support_after_debias", "deviance_debiased", "wall_time_s", "error",
)


def cmd_tradeoff(cfg: dict, args, out_dir: Path, base_dir: Path) -> int:
    _check_keys(cfg, TRADEOFF_KEYS, "config")
    _, camera, _ = _context(cfg)
    stack = _load_stack_file(cfg, base_dir)
    designs = cfg.get("designs")
    if not isinstance(designs, list) or not designs:
        raise ConfigError("config.designs: expected a non-empty list")
    kernels = []
    for i, spec in enumerate(designs):
        _check_keys(spec, KERNEL_KEYS, f"config.designs[{i}]")
        kernels.append(GaussianParams(
            _number(_need(spec, "sigma_xy_nm", f"config.designs[{i}]"),
                    f"config.designs[{i}].sigma_xy_nm", 0.0) * 1e-3,
            _number(_need(spec, "sigma_z_nm", f"config.designs[{i}]"),
                    f"config.designs[{i}].sigma_z_nm", 0.0) * 1e-3,
        ))
    grid = _penalty_grid(_need(cfg, "penalties", "config"), 1, "config.penalties")
    grid = [lam if np.isscalar(lam) else lam[0] for lam in grid]
    rate = (None if "background_rate" not in cfg
            else _number(cfg["background_rate"], "config.background_rate", 0.0))
    min_weight = (None if "min_weight" not in cfg
                  else _number(cfg["min_weight"], "config.min_weight", 0.0))
    max_iters = _integer(cfg.get("max_iters", 4000), "config.max_iters", 1)
    sg_max_evals = _integer(cfg.get("sg_max_evals", 6000), "config.sg_max_evals", 1)

    report = tradeoff_sweep(
        stack, camera, kernels, grid, background_rate=rate, seed=args.seed,
        sg_max_evals=sg_max_evals, max_iters=max_iters, min_weight=min_weight,
        threads=args.threads,
    )
    outputs = ["tradeoff.json", "tradeoff.csv"]
    write_json(out_dir / "tradeoff.json", {
        "background_rate": report.background_rate,
        "sg_deviance": report.sg_deviance,
    })
    _write_csv(out_dir / "tradeoff.csv", TRADEOFF_FIELDS,
               [r.row() for r in report.rows])
    for di in range(len(kernels)):
        best = report.best_cell(di)
        if best is None or best.support_after == 0:
            continue
        name = f"density_design{di}.csv"
        stack_to_csv(_project_cell(best, stack.geometry), out_dir / name)
        outputs.append(name)
    _write_manifest(out_dir, "tradeoff", cfg, args.seed, args.threads, outputs)
    if all(r.error is not None for r in report.rows):
        print("every sweep cell failed; see tradeoff.csv", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


ROBUSTNESS_KEYS = CONTEXT_KEYS + (
    "version", "scene", "scene_file", "kernels", "dictionary_file", "penalty",
    "n_realizations", "n_bins", "noise_model", "min_weight", "max_iters",
)

FANO_FIELDS = ("lower", "upper", "n_atoms", "mean_weight", "variance", "fano")


def cmd_robustness(cfg: dict, args, out_dir: Path, base_dir: Path) -> int:
    _check_keys(cfg, ROBUSTNESS_KEYS, "config")
    geometry, camera, preset = _context(cfg)
    scene, rate = _scene_from_config(cfg, geometry, camera, preset, base_dir)
    kernels = _kernels_from_config(cfg, base_dir)
    penalty = _need(cfg, "penalty", "config")
    if isinstance(penalty, list):
        if len(penalty) != len(kernels):
            raise ConfigError("config.penalty: one penalty per kernel required")
        penalty = tuple(_number(v, "config.penalty", 0.0) for v in penalty)
    else:
        penalty = _number(penalty, "config.penalty", 0.0)
    n_realizations = _integer(cfg.get("n_realizations", 50), "config.n_realizations", 1)
    n_bins = _integer(cfg.get("n_bins", 5), "config.n_bins", 1)
    noise_model = cfg.get("noise_model", "poisson")
    if noise_model not in ("poisson", "round"):
        raise ConfigError("config.noise_model: must be 'poisson' or 'round'")
    min_weight = (None if "min_weight" not in cfg
                  else _number(cfg["min_weight"], "config.min_weight", 0.0))
    max_iters = _integer(cfg.get("max_iters", 4000), "config.max_iters", 1)

    means = mean_stack(scene, geometry)
    dictionary = build_digital_dictionary(kernels, geometry)
    report = robustness_study(
        means, camera, dictionary, penalty, background_rate=rate,
        n_realizations=n_realizations, seed=args.seed, n_bins=n_bins,
        max_iters=max_iters, min_weight=min_weight, threads=args.threads,
        noise_model=noise_model,
    )
    outputs = ["support.json", "fano.csv", "mean_stack.csv", "std_stack.csv"]
    write_json(out_dir / "support.json", {
        "mean": report.support_mean,
        "std": report.support_std,
        "sizes": [int(v) for v in report.support_sizes],
    })
    _write_csv(out_dir / "fano.csv", FANO_FIELDS, [b.row() for b in report.fano_bins])
    for name, stack in (("mean_stack", report.mean_stack),
                        ("std_stack", report.std_stack)):
        for path in save_stack(stack, out_dir / name):
            outputs.append(path.name)
        stack_to_csv(stack, out_dir / f"{name}.csv")
    _write_manifest(out_dir, "robustness", cfg, args.seed, args.threads, outputs)
    return EXIT_OK


LOCALIZE_KEYS = CONTEXT_KEYS + (
    "version", "generator", "models", "psnr_db", "background_rate",
    "n_stacks", "margin", "max_evals",
)

BENCHMARK_FIELDS = (
    "model", "psnr_db", "stack_index", "position_error_um",
    "intensity_rel_error", "model_support", "wall_time_s", "n_evals",
)

MEDIAN_FIELDS = (
    "model", "psnr_db", "median_position_error_um", "median_intensity_rel_error",
    "model_support", "mean_wall_time_s",
)


def cmd_localize(cfg: dict, args, out_dir: Path, base_dir: Path) -> int:
    _check_keys(cfg, LOCALIZE_KEYS, "config")
    geometry, camera, preset = _context(cfg)
    generator = _psf_from_config(_need(cfg, "generator", "config"), geometry,
                                 preset, base_dir, "config.generator")
    model_specs = _need(cfg, "models", "config")
    if not isinstance(model_specs, dict) or not model_specs:
        raise ConfigError("config.models: expected a non-empty name->psf object")
    models = {
        name: _psf_from_config(spec, geometry, preset, base_dir,
                               f"config.models.{name}")
        for name, spec in model_specs.items()
    }
    psnr_db = _need(cfg, "psnr_db", "config")
    if not isinstance(psnr_db, list) or not psnr_db:
        raise ConfigError("config.psnr_db: expected a non-empty list")
    psnr_db = [_number(v, "config.psnr_db") for v in psnr_db]
    rate = _number(_need(cfg, "background_rate", "config"),
                   "config.background_rate", 0.0)
    n_stacks = _integer(cfg.get("n_stacks", 100), "config.n_stacks", 1)
    margin = _number(cfg.get("margin", 0.15), "config.margin", 0.0)
    if margin >= 0.5:
        raise ConfigError("config.margin: must be < 0.5")
    max_evals = _integer(cfg.get("max_evals", 800), "config.max_evals", 1)

    report = localization_benchmark(
        models, generator, geometry, camera, background_rate=rate,
        psnr_db_list=psnr_db, n_stacks=n_stacks, seed=args.seed, margin=margin,
        max_evals=max_evals, threads=args.threads,
    )
    _write_csv(out_dir / "benchmark.csv", BENCHMARK_FIELDS,
               [r.row() for r in report.rows])
    medians = []
    for name in models:
        for psnr in psnr_db:
            rows = [r for r in report.rows if r.model == name and r.psnr_db == psnr]
            medians.append({
                "model": name,
                "psnr_db": repr(psnr),
                "median_position_error_um": repr(report.median_position_error(name, psnr)),
                "median_intensity_rel_error": repr(report.median_intensity_error(name, psnr)),
                "model_support": rows[0].model_support,
                "mean_wall_time_s": repr(float(np.mean([r.wall_time_s for r in rows]))),
            })
    _write_csv(out_dir / "medians.csv", MEDIAN_FIELDS, medians)
    _write_manifest(out_dir, "localize", cfg, args.seed, args.threads,
                    ["benchmark.csv", "medians.csv"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "tradeoff": cmd_tradeoff,
    "robustness": cmd_robustness,
    "localize": cmd_localize,
    "estimate-background": cmd_estimate_background,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psfmix",
        description="Gaussian-mixture PSF calibration experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for independent jobs")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if not (0 <= args.seed < 2 ** 64):
            raise ConfigError("--seed must fit an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        config_path = Path(args.config)
        _existing(config_path, "--config")
        try:
            cfg = read_json(config_path)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--config: invalid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("--config: top level must be an object")
        version = _need(cfg, "version", "config")
        if version != SCHEMA_VERSION:
            raise ConfigError(
                f"config.version: expected {SCHEMA_VERSION}, got {version!r}")
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        try:
            return COMMANDS[args.command](cfg, args, out_dir, config_path.parent)
        except ConfigError:
            raise
        except Exception as exc:
            print(f"psfmix {args.command}: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"psfmix {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
