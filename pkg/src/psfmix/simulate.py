"""Virtual microscope: mean stacks, Poisson shot noise, camera read-out."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .imaging import CameraModel, GridGeometry, ImageStack, PointSource, StackKind, grey_stack

__all__ = [
    "Scene",
    "mean_stack",
    "sample_photons",
    "simulate",
    "exposure_for_psnr",
]


@dataclass(frozen=True)
class Scene:
    """A point emitter over a uniform background, seen through one PSF.

    ``source.intensity`` and ``background`` are integrated per-pixel photon
    quantities (exposure and pixel area already folded in): the mean count at
    pixel j is intensity * psf.density(x_j - x0) + background.
    """

    psf: object
    source: PointSource
    background: float = 0.0

    def __post_init__(self) -> None:
        if self.background < 0.0:
            raise ValueError("background must be non-negative")


def mean_stack(scene: Scene, geometry: GridGeometry) -> ImageStack:
    """Noise-free per-pixel mean photon counts of a scene on a grid."""
    offsets = geometry.pixel_centers() - scene.source.position
    values = scene.source.intensity * scene.psf.density(offsets) + scene.background
    values = np.asarray(values, dtype=float)
    if values.max() <= 0.0:
        warnings.warn("scene deposits no photons anywhere on the grid", stacklevel=2)
    return ImageStack(geometry, values, StackKind.MEAN)


def sample_photons(means: ImageStack, seed: int, stream: int = 0) -> ImageStack:
    """Poisson-sample a mean stack into photon counts.

    The (seed, stream) pair keys an independent generator, so repeated draws
    from one scene stay reproducible and uncorrelated across streams.
    """
    if means.kind is not StackKind.MEAN:
        raise ValueError("can only sample from a mean-intensity stack")
    rng = np.random.default_rng([int(seed), int(stream)])
    values = rng.poisson(means.values).astype(float)
    return ImageStack(means.geometry, values, StackKind.PHOTONS)


def simulate(
    scene: Scene,
    geometry: GridGeometry,
    camera: CameraModel,
    seed: int,
    stream: int = 0,
) -> ImageStack:
    """One synthetic acquisition: mean counts, shot noise, then read-out."""
    photons = sample_photons(mean_stack(scene, geometry), seed, stream)
    return grey_stack(photons, camera)


def exposure_for_psnr(
    psf: object,
    source_position_um,
    geometry: GridGeometry,
    background_rate: float,
    pixel_area_um2: float,
    psnr_db: float,
    intensity_rate: float = 1.0,
) -> float:
    """Exposure time (ms) that realizes a target peak signal-to-noise ratio.

    PSNR is the squared peak mean signal over the grid-averaged Poisson
    variance; rates are per unit integration volume (pixel area x exposure).
    """
    if pixel_area_um2 <= 0.0 or intensity_rate <= 0.0:
        raise ValueError("pixel area and intensity rate must be positive")
    offsets = geometry.pixel_centers() - np.asarray(source_position_um, dtype=float)
    values = np.asarray(psf.density(offsets), dtype=float)
    peak = float(values.max())
    if peak <= 0.0:
        raise ValueError("PSF peak on the grid must be positive")
    mean_noise = background_rate + intensity_rate * float(values.mean())
    ratio = 10.0 ** (0.1 * psnr_db)
    return ratio * mean_noise / (pixel_area_um2 * (intensity_rate * peak) ** 2)
