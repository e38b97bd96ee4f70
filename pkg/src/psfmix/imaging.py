"""Grid geometry, camera model and image stacks.

Conventions used throughout the package:

- stacks are stored as flat vectors in slice-major order,
  ``j = s * (n_rows * n_cols) + r * n_cols + c``
- pixel centre positions are in micrometers, sampling steps in nanometers
- photon counts and mean intensities are per pixel and per exposure
  (the integration volume ``c = pixel_area * exposure`` is already folded in)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class StackKind(enum.Enum):
    """What the values of an :class:`ImageStack` mean."""

    GREY = "GreyValues"
    PHOTONS = "PhotonCounts"
    MEAN = "MeanIntensity"


@dataclass(frozen=True)
class GridGeometry:
    """Regular 3-D pixel grid of an acquired or simulated stack.

    ``origin_um`` is the centre of pixel (slice 0, row 0, col 0). Lateral
    sampling applies to rows (y) and columns (x), axial sampling to slices (z).
    """

    n_slices: int
    n_rows: int
    n_cols: int
    lateral_sampling_nm: float
    axial_sampling_nm: float
    origin_um: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.n_slices, self.n_rows, self.n_cols) < 1:
            raise ValueError("grid dimensions must be positive")
        if self.lateral_sampling_nm <= 0 or self.axial_sampling_nm <= 0:
            raise ValueError("sampling steps must be positive")

    @property
    def n_pixels(self) -> int:
        return self.n_slices * self.n_rows * self.n_cols

    def indices(self, j):
        """Flat index -> (slice, row, col)."""
        j = np.asarray(j)
        if np.any(j < 0) or np.any(j >= self.n_pixels):
            raise IndexError("pixel index out of range")
        per_slice = self.n_rows * self.n_cols
        s, rem = np.divmod(j, per_slice)
        r, c = np.divmod(rem, self.n_cols)
        return s, r, c

    def pixel_center(self, j):
        """Centre of pixel ``j`` in micrometers, shape (3,) or (len(j), 3)."""
        s, r, c = self.indices(j)
        x = self.origin_um[0] + c * self.lateral_sampling_nm * 1e-3
        y = self.origin_um[1] + r * self.lateral_sampling_nm * 1e-3
        z = self.origin_um[2] + s * self.axial_sampling_nm * 1e-3
        return np.stack([x, y, z], axis=-1)

    def pixel_centers(self) -> np.ndarray:
        """All pixel centres in vectorization order, shape (N, 3)."""
        return self.pixel_center(np.arange(self.n_pixels))

    def axes_um(self):
        """Per-axis coordinate vectors (x of cols, y of rows, z of slices)."""
        x = self.origin_um[0] + np.arange(self.n_cols) * self.lateral_sampling_nm * 1e-3
        y = self.origin_um[1] + np.arange(self.n_rows) * self.lateral_sampling_nm * 1e-3
        z = self.origin_um[2] + np.arange(self.n_slices) * self.axial_sampling_nm * 1e-3
        return x, y, z

    def center_um(self) -> np.ndarray:
        """Geometric centre of the imaged volume."""
        x, y, z = self.axes_um()
        return np.array([x.mean(), y.mean(), z.mean()])

    def shape(self) -> tuple[int, int, int]:
        return (self.n_slices, self.n_rows, self.n_cols)


@dataclass(frozen=True)
class CameraModel:
    """Affine photon-to-grey-value camera with a global exposure.

    grey = round(quantum_efficiency * gain / amplification * photons + bias)
    """

    quantum_efficiency: float
    gain: float
    amplification: float
    bias: float
    exposure_ms: float
    pixel_area_um2: float

    def __post_init__(self):
        if not 0.0 < self.quantum_efficiency <= 1.0:
            raise ValueError("quantum efficiency must be in (0, 1]")
        if self.gain <= 0 or self.amplification <= 0:
            raise ValueError("gain and amplification must be positive")
        if self.bias < 0:
            raise ValueError("bias must be non-negative")
        if self.exposure_ms <= 0 or self.pixel_area_um2 <= 0:
            raise ValueError("exposure and pixel area must be positive")

    @property
    def integration_volume(self) -> float:
        """Pixel area times exposure, the per-pixel integration factor."""
        return self.pixel_area_um2 * self.exposure_ms

    def with_exposure(self, exposure_ms: float) -> "CameraModel":
        return CameraModel(
            self.quantum_efficiency,
            self.gain,
            self.amplification,
            self.bias,
            exposure_ms,
            self.pixel_area_um2,
        )


def identity_camera(exposure_ms: float, pixel_area_um2: float) -> CameraModel:
    """Unit-QE, unit-gain, zero-bias camera (grey values == rounded photons)."""
    return CameraModel(1.0, 1.0, 1.0, 0.0, exposure_ms, pixel_area_um2)


@dataclass(frozen=True)
class PointSource:
    """An idealized point emitter: position (um) and integrated intensity (photons).

    Zero intensity is allowed (a dark emitter leaves only the background).
    """

    position_um: tuple[float, float, float]
    intensity: float

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError("source intensity must be non-negative")

    @property
    def position(self) -> np.ndarray:
        return np.asarray(self.position_um, dtype=float)


@dataclass
class ImageStack:
    """A flat stack of per-pixel values with its geometry and value kind."""

    geometry: GridGeometry
    values: np.ndarray
    kind: StackKind

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 1 or self.values.size != self.geometry.n_pixels:
            raise ValueError(
                f"expected {self.geometry.n_pixels} values, got shape {self.values.shape}"
            )
        if self.kind is StackKind.GREY:
            if np.any(self.values < 0) or np.any(self.values != np.round(self.values)):
                raise ValueError("grey values must be non-negative integers")
        elif np.any(self.values < 0):
            raise ValueError("photon counts and means must be non-negative")

    def as_cube(self) -> np.ndarray:
        """Values reshaped to (n_slices, n_rows, n_cols)."""
        return self.values.reshape(self.geometry.shape())


def grey_from_photons(photons, camera: CameraModel) -> np.ndarray:
    """Map raw photon counts to rounded grey values, clamped at zero."""
    photons = np.asarray(photons, dtype=float)
    scale = camera.quantum_efficiency * camera.gain / camera.amplification
    grey = np.round(scale * photons + camera.bias)
    return np.maximum(grey, 0.0)


def photons_from_grey(grey, camera: CameraModel) -> np.ndarray:
    """Invert the affine camera map; negative estimates clamp to zero."""
    grey = np.asarray(grey, dtype=float)
    scale = camera.amplification / (camera.quantum_efficiency * camera.gain)
    return np.maximum((grey - camera.bias) * scale, 0.0)


def grey_stack(photon_stack: ImageStack, camera: CameraModel) -> ImageStack:
    values = grey_from_photons(photon_stack.values, camera)
    return ImageStack(photon_stack.geometry, values, StackKind.GREY)


def photon_stack(grey: ImageStack, camera: CameraModel) -> ImageStack:
    values = photons_from_grey(grey.values, camera)
    return ImageStack(grey.geometry, values, StackKind.PHOTONS)


def estimate_background(stack: ImageStack, camera: CameraModel) -> float:
    """Median raw photon count divided by the integration volume.

    Grey stacks are converted to photon counts first. The returned value is a
    rate per unit integration volume; multiply by
    ``camera.integration_volume`` to get the mean background count per pixel.
    """
    if stack.kind is StackKind.GREY:
        values = photons_from_grey(stack.values, camera)
    else:
        values = np.asarray(stack.values, dtype=float)
    return float(np.median(values)) / camera.integration_volume
