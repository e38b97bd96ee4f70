"""Reference acquisition setups and dictionary designs.

Four datasets are bundled: a synthetic 1-D line scan, a synthetic 3-D
widefield setup (SBW), and two real-microscope setups (WFFM, LSCM) shipped
for users who bring their own bead stacks.  The immersion index of the two
real setups is unknown, so scalar-diffraction simulation is only available
for the synthetic ones.
"""

from __future__ import annotations

from dataclasses import dataclass

from .imaging import CameraModel, GridGeometry
from .psf import BornWolfParams, GaussianParams, theoretical_gaussian

__all__ = [
    "DatasetPreset",
    "DESK_EDGE",
    "synthetic_1d",
    "sbw",
    "wffm",
    "lscm",
    "preset_by_name",
    "PRESET_NAMES",
]

# default edge length for affordable 3-D experiment runs
DESK_EDGE = 21


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    wavelength_nm: float
    numerical_aperture: float
    refractive_index: float | None
    geometry: GridGeometry
    camera: CameraModel
    theoretical_sg: GaussianParams
    kernel_designs: tuple[GaussianParams, ...]
    bead_diameter_nm: float | None

    def born_wolf_params(self) -> BornWolfParams:
        if self.refractive_index is None:
            raise ValueError(
                f"{self.name}: immersion refractive index unknown, "
                "scalar-diffraction simulation undefined"
            )
        return BornWolfParams(self.wavelength_nm, self.numerical_aperture, self.refractive_index)

    def desk_geometry(self, edge: int = DESK_EDGE) -> GridGeometry:
        """Small centred cube at the preset's sampling, for affordable runs."""
        return GridGeometry(
            n_slices=edge,
            n_rows=edge,
            n_cols=edge,
            lateral_sampling_nm=self.geometry.lateral_sampling_nm,
            axial_sampling_nm=self.geometry.axial_sampling_nm,
        )

    def two_kernel_design(self) -> tuple[GaussianParams, GaussianParams]:
        """The bundled two-kernel dictionary for this dataset."""
        if len(self.kernel_designs) >= 3:
            return (self.kernel_designs[1], self.kernel_designs[2])
        return (self.kernel_designs[0], self.kernel_designs[1])


def _designs_nm(*pairs: tuple[float, float]) -> tuple[GaussianParams, ...]:
    return tuple(GaussianParams(xy * 1e-3, z * 1e-3) for xy, z in pairs)


def synthetic_1d() -> DatasetPreset:
    """1x1x101 line at 50 nm pitch, identity camera, 1 ms exposure.

    The axial pitch is not part of the published setup (single slice); the
    lateral pitch is reused as a placeholder.
    """
    return DatasetPreset(
        name="synthetic-1d",
        wavelength_nm=474.0,
        numerical_aperture=1.45,
        refractive_index=1.518,
        geometry=GridGeometry(
            n_slices=1, n_rows=1, n_cols=101,
            lateral_sampling_nm=50.0, axial_sampling_nm=50.0,
        ),
        camera=CameraModel(
            quantum_efficiency=1.0, gain=1.0, amplification=1.0, bias=0.0,
            exposure_ms=1.0, pixel_area_um2=0.05**2,
        ),
        theoretical_sg=theoretical_gaussian(474.0, 1.45, 1.518),
        kernel_designs=_designs_nm((100.0, 100.0), (200.0, 200.0)),
        bead_diameter_nm=None,
    )


def sbw() -> DatasetPreset:
    """Synthetic 3-D widefield setup: 81x81 frames, 101 slices."""
    return DatasetPreset(
        name="sbw",
        wavelength_nm=474.0,
        numerical_aperture=1.45,
        refractive_index=1.518,
        geometry=GridGeometry(
            n_slices=101, n_rows=81, n_cols=81,
            lateral_sampling_nm=65.0, axial_sampling_nm=200.0,
        ),
        camera=CameraModel(
            quantum_efficiency=0.81, gain=1.0, amplification=2.0, bias=100.0,
            exposure_ms=21.0, pixel_area_um2=0.065**2,
        ),
        theoretical_sg=theoretical_gaussian(474.0, 1.45, 1.518),
        kernel_designs=_designs_nm((262, 842), (131, 421), (87, 281), (66, 210)),
        bead_diameter_nm=None,
    )


def wffm() -> DatasetPreset:
    """Widefield fluorescence setup for user-supplied bead stacks."""
    return DatasetPreset(
        name="wffm",
        wavelength_nm=620.0,
        numerical_aperture=1.45,
        refractive_index=None,
        geometry=GridGeometry(
            n_slices=31, n_rows=81, n_cols=81,
            lateral_sampling_nm=65.0, axial_sampling_nm=200.0,
        ),
        camera=CameraModel(
            quantum_efficiency=0.81, gain=1.0, amplification=2.14, bias=98.24,
            exposure_ms=21.0, pixel_area_um2=0.065**2,
        ),
        # paraxial widefield formula, standard oil-immersion index assumed
        theoretical_sg=theoretical_gaussian(620.0, 1.45, 1.518),
        kernel_designs=_designs_nm((400, 801), (200, 401), (133, 267), (100, 200)),
        bead_diameter_nm=50.0,
    )


def lscm() -> DatasetPreset:
    """Confocal setup for user-supplied bead stacks.

    The paraxial widefield Gaussian match does not apply to a confocal
    pinhole system, so the theoretical widths are shipped as constants.
    """
    return DatasetPreset(
        name="lscm",
        wavelength_nm=520.0,
        numerical_aperture=1.45,
        refractive_index=None,
        geometry=GridGeometry(
            n_slices=101, n_rows=61, n_cols=61,
            lateral_sampling_nm=133.0, axial_sampling_nm=50.0,
        ),
        camera=CameraModel(
            quantum_efficiency=0.70, gain=200.0, amplification=6.44, bias=398.06,
            exposure_ms=12.0, pixel_area_um2=0.133**2,
        ),
        theoretical_sg=GaussianParams(0.063, 0.229),
        kernel_designs=_designs_nm((246, 509), (123, 255)),
        bead_diameter_nm=100.0,
    )


PRESET_NAMES = ("synthetic-1d", "sbw", "wffm", "lscm")


def preset_by_name(name: str) -> DatasetPreset:
    builders = {
        "synthetic-1d": synthetic_1d,
        "sbw": sbw,
        "wffm": wffm,
        "lscm": lscm,
    }
    try:
        return builders[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown dataset preset {name!r}; choose from {PRESET_NAMES}") from None
