"""File formats: image stacks, dictionary specs, mixture models, scenes.

Stacks are a JSON sidecar plus a raw little-endian payload (float64 for
counts and means, uint16 for grey values) in slice-major vectorization
order.  Mixture models are a JSON header plus a float64 weight payload.
All JSON is UTF-8 with sorted keys so identical inputs write identical
bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .blur import Dictionary
from .imaging import CameraModel, GridGeometry, ImageStack, PointSource, StackKind
from .psf import BornWolfParams, BornWolfPsf, GaussianMixturePsf, GaussianParams, GaussianPsf
from .simulate import Scene

__all__ = [
    "save_stack",
    "load_stack",
    "stack_to_csv",
    "save_dictionary_spec",
    "load_dictionary_spec",
    "save_mixture_model",
    "load_mixture_model",
    "load_mixture_psf",
    "save_scene",
    "load_scene",
    "scene_from_spec",
    "psf_from_spec",
    "write_json",
    "read_json",
]


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _base(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".bin") else p


def _geometry_header(geometry: GridGeometry) -> dict:
    return {
        "n_slices": geometry.n_slices,
        "n_rows": geometry.n_rows,
        "n_cols": geometry.n_cols,
        "lateral_sampling_nm": geometry.lateral_sampling_nm,
        "axial_sampling_nm": geometry.axial_sampling_nm,
        "origin_um": list(geometry.origin_um),
    }


def _geometry_from_header(header: dict) -> GridGeometry:
    return GridGeometry(
        n_slices=int(header["n_slices"]),
        n_rows=int(header["n_rows"]),
        n_cols=int(header["n_cols"]),
        lateral_sampling_nm=float(header["lateral_sampling_nm"]),
        axial_sampling_nm=float(header["axial_sampling_nm"]),
        origin_um=tuple(float(v) for v in header["origin_um"]),
    )


def save_stack(stack: ImageStack, path) -> tuple[Path, Path]:
    """Write ``<base>.json`` + ``<base>.bin``; returns both paths."""
    base = _base(path)
    grey = stack.kind is StackKind.GREY
    dtype = "<u2" if grey else "<f8"
    if grey and np.any(stack.values > np.iinfo(np.uint16).max):
        raise ValueError("grey values exceed the uint16 payload range")
    header = dict(_geometry_header(stack.geometry), kind=stack.kind.value, dtype=dtype)
    write_json(base.with_suffix(".json"), header)
    payload = stack.values.astype(dtype)
    base.with_suffix(".bin").write_bytes(payload.tobytes())
    return base.with_suffix(".json"), base.with_suffix(".bin")


def load_stack(path) -> ImageStack:
    base = _base(path)
    header = read_json(base.with_suffix(".json"))
    geometry = _geometry_from_header(header)
    values = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype=header["dtype"])
    if values.size != geometry.n_pixels:
        raise ValueError("payload length does not match the sidecar geometry")
    return ImageStack(geometry, values.astype(float), StackKind(header["kind"]))


def stack_to_csv(stack: ImageStack, path) -> Path:
    """Flat (j, s, r, c, value) export for quick inspection/plotting."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["j", "s", "r", "c", "value"])
        for j in range(stack.geometry.n_pixels):
            s, r, c = stack.geometry.indices(j)
            writer.writerow([j, s, r, c, repr(float(stack.values[j]))])
    return path


def _kernel_header(kernel: GaussianParams) -> dict:
    return {
        "sigma_xy_nm": kernel.sigma_xy_um * 1e3,
        "sigma_z_nm": kernel.sigma_z_um * 1e3,
        "placement": "digital",
    }


def _kernel_from_header(spec: dict) -> GaussianParams:
    return GaussianParams(float(spec["sigma_xy_nm"]) * 1e-3, float(spec["sigma_z_nm"]) * 1e-3)


def save_dictionary_spec(kernels, path) -> Path:
    path = Path(path)
    write_json(path, {"kernels": [_kernel_header(k) for k in kernels]})
    return path


def load_dictionary_spec(path) -> list[GaussianParams]:
    return [_kernel_from_header(spec) for spec in read_json(path)["kernels"]]


def save_mixture_model(
    dictionary: Dictionary,
    weights,
    path,
    anchor_um=(0.0, 0.0, 0.0),
    geometry: GridGeometry | None = None,
    extra: dict | None = None,
) -> tuple[Path, Path]:
    """Persist a calibrated mixture: support atoms, positions, and weights.

    Only atoms with positive weight are stored.  The float64 payload holds
    their weights, concatenated kernel by kernel in header order.
    """
    base = _base(path)
    kernels = []
    payload = []
    for kernel, positions, w in zip(dictionary.kernels, dictionary.positions, weights):
        w = np.asarray(w, dtype=float)
        idx = np.flatnonzero(w > 0.0)
        entry = _kernel_header(kernel)
        entry["support"] = [int(i) for i in idx]
        entry["positions_um"] = [[float(v) for v in positions[i]] for i in idx]
        kernels.append(entry)
        payload.append(w[idx])
    header = {
        "kind": "gm-model",
        "kernels": kernels,
        "anchor_um": [float(v) for v in anchor_um],
        "n_weights": int(sum(p.size for p in payload)),
    }
    if geometry is not None:
        header["geometry"] = _geometry_header(geometry)
    if extra:
        header.update(extra)
    write_json(base.with_suffix(".json"), header)
    flat = np.concatenate(payload) if payload else np.zeros(0)
    base.with_suffix(".bin").write_bytes(flat.astype("<f8").tobytes())
    return base.with_suffix(".json"), base.with_suffix(".bin")


def load_mixture_model(path) -> dict:
    """Read a mixture model file back into plain arrays.

    Returns a dict with kernels, per-kernel positions/weights/support and
    the anchor position.
    """
    base = _base(path)
    header = read_json(base.with_suffix(".json"))
    if header.get("kind") != "gm-model":
        raise ValueError("not a mixture model file")
    flat = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype="<f8")
    if flat.size != header["n_weights"]:
        raise ValueError("weight payload length does not match the header")
    kernels, positions, weights, support = [], [], [], []
    offset = 0
    for spec in header["kernels"]:
        kernels.append(_kernel_from_header(spec))
        idx = np.asarray(spec["support"], dtype=int)
        positions.append(np.asarray(spec["positions_um"], dtype=float).reshape(idx.size, 3))
        weights.append(flat[offset : offset + idx.size].copy())
        support.append(idx)
        offset += idx.size
    return {
        "kernels": kernels,
        "positions": positions,
        "weights": weights,
        "support": support,
        "anchor_um": np.asarray(header["anchor_um"], dtype=float),
        "header": header,
    }


def load_mixture_psf(path, normalize: bool = True) -> GaussianMixturePsf:
    """Rebuild the mixture PSF anchored at its stored anchor position."""
    model = load_mixture_model(path)
    offsets = [p - model["anchor_um"] for p in model["positions"]]
    psf = GaussianMixturePsf(model["kernels"], offsets, model["weights"])
    return psf.normalized() if normalize else psf


def save_scene(scene_spec: dict, path) -> Path:
    """Write a scene description: source, background rate, PSF spec."""
    path = Path(path)
    write_json(path, scene_spec)
    return path


def psf_from_spec(spec: dict, geometry: GridGeometry, base_dir=".") -> object:
    """Build a PSF from a plain spec dict.

    Types: ``bw`` (wavelength_nm, numerical_aperture, refractive_index),
    ``sg`` (sigma_xy_nm, sigma_z_nm) or ``gm`` (model_file, resolved against
    ``base_dir``).
    """
    spec = dict(spec)
    kind = spec.pop("type")
    if kind == "bw":
        params = BornWolfParams(
            float(spec["wavelength_nm"]),
            float(spec["numerical_aperture"]),
            float(spec["refractive_index"]),
        )
        return BornWolfPsf(params, geometry)
    if kind == "sg":
        return GaussianPsf(_kernel_from_header(spec))
    if kind == "gm":
        return load_mixture_psf(Path(base_dir) / spec["model_file"])
    raise ValueError(f"unknown psf type {kind!r}")


def scene_from_spec(spec: dict, camera: CameraModel, geometry: GridGeometry,
                    base_dir=".") -> Scene:
    """Build a Scene from a plain spec dict.

    The spec stores the background as a rate per integration volume; the
    camera converts it to the integrated per-pixel count.  The source
    intensity is already integrated.
    """
    src = spec["source"]
    source = PointSource(
        (float(src["x_um"]), float(src["y_um"]), float(src["z_um"])),
        float(src["intensity"]),
    )
    background = float(spec["background_rate"]) * camera.integration_volume
    psf = psf_from_spec(spec["psf"], geometry, base_dir)
    return Scene(psf=psf, source=source, background=background)


def load_scene(path, camera: CameraModel, geometry: GridGeometry) -> Scene:
    """Build a Scene from a scene file (see ``scene_from_spec``)."""
    path = Path(path)
    return scene_from_spec(read_json(path), camera, geometry, path.parent)
