"""Point spread function models.

Three PSF families share the ``density(offsets) -> values`` interface, where
``offsets`` are pixel-minus-source displacement vectors in micrometers and the
returned values are intensity densities (um^-3):

- :class:`BornWolfPsf`: scalar diffraction integral for an aberration-free
  objective, normalized numerically on a bounded box.
- :class:`GaussianPsf`: axially symmetric 3-D Gaussian with unit mass.
- :class:`GaussianMixturePsf`: convex/weighted combination of shifted
  Gaussian kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import j0

from .imaging import GridGeometry

# Lateral half-extent (um) of the Born-Wolf normalization box; also the axial
# fallback for single-slice grids, whose own axial span has zero measure.
BW_NORMALIZATION_HALF_EXTENT_UM = 3.0

DEFAULT_PANELS = 512
_REL_TOL = 1e-9


# ---------------------------------------------------------------------------
# Gaussian model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianParams:
    """Lateral and axial standard deviations of a 3-D Gaussian, in um."""

    sigma_xy_um: float
    sigma_z_um: float

    def __post_init__(self):
        if self.sigma_xy_um <= 0 or self.sigma_z_um <= 0:
            raise ValueError("Gaussian widths must be positive")

    @property
    def peak(self) -> float:
        """Density at the origin, (8 pi^3 sxy^4 sz^2)^(-1/2)."""
        return 1.0 / np.sqrt(8.0 * np.pi**3 * self.sigma_xy_um**4 * self.sigma_z_um**2)

    def scaled(self, divisor: float) -> "GaussianParams":
        return GaussianParams(self.sigma_xy_um / divisor, self.sigma_z_um / divisor)


def gaussian_density(params: GaussianParams, offsets) -> np.ndarray:
    """Unit-mass 3-D Gaussian density at displacement vectors (um^-3)."""
    offsets = np.asarray(offsets, dtype=float)
    pts = np.atleast_2d(offsets)
    gx = np.exp(-0.5 * (pts[..., 0] / params.sigma_xy_um) ** 2)
    gy = np.exp(-0.5 * (pts[..., 1] / params.sigma_xy_um) ** 2)
    gz = np.exp(-0.5 * (pts[..., 2] / params.sigma_z_um) ** 2)
    vals = params.peak * gx * gy * gz
    return vals[0] if offsets.ndim == 1 else vals


def theoretical_gaussian(
    wavelength_nm: float, numerical_aperture: float, refractive_index: float
) -> GaussianParams:
    """Paraxial widefield Gaussian match of a diffraction-limited PSF.

    sigma_xy = sqrt(2) / (k * NA), sigma_z = 2 sqrt(6) n / (k * NA^2),
    with k the emission wavenumber 2 pi / wavelength.
    """
    k = 2.0 * np.pi / (wavelength_nm * 1e-3)
    sigma_xy = np.sqrt(2.0) / (k * numerical_aperture)
    sigma_z = 2.0 * np.sqrt(6.0) * refractive_index / (k * numerical_aperture**2)
    return GaussianParams(sigma_xy, sigma_z)


class GaussianPsf:
    """Single-Gaussian PSF model."""

    def __init__(self, params: GaussianParams):
        self.params = params

    def density(self, offsets) -> np.ndarray:
        return gaussian_density(self.params, offsets)

    def density_axes(self, dx, dy, dz) -> np.ndarray:
        """Density on a separable offset grid, shape (len(dz), len(dy), len(dx))."""
        dx, dy, dz = (np.asarray(a, dtype=float) for a in (dx, dy, dz))
        gx = np.exp(-0.5 * (dx / self.params.sigma_xy_um) ** 2)
        gy = np.exp(-0.5 * (dy / self.params.sigma_xy_um) ** 2)
        gz = np.exp(-0.5 * (dz / self.params.sigma_z_um) ** 2)
        return self.params.peak * gz[:, None, None] * gy[None, :, None] * gx[None, None, :]

    def __repr__(self):
        return f"GaussianPsf({self.params})"


# ---------------------------------------------------------------------------
# Gaussian mixture model
# ---------------------------------------------------------------------------

class GaussianMixturePsf:
    """Weighted sum of Gaussian kernels at fixed offsets from the source.

    ``kernels`` is a sequence of :class:`GaussianParams`; ``offsets[k]`` is an
    (M_k, 3) array of atom displacements (um) relative to the source position
    and ``weights[k]`` the matching non-negative weights. A probability PSF
    has weights summing to one; calibration intermediates carry net
    intensities instead.
    """

    def __init__(self, kernels, offsets, weights):
        if not len(kernels) == len(offsets) == len(weights):
            raise ValueError("kernels, offsets and weights must align")
        self.kernels = tuple(kernels)
        self.offsets = [np.atleast_2d(np.asarray(o, dtype=float)) for o in offsets]
        self.weights = [np.atleast_1d(np.asarray(w, dtype=float)) for w in weights]
        for o, w in zip(self.offsets, self.weights):
            if o.shape != (w.size, 3):
                raise ValueError("offsets must be (M_k, 3) matching weights")
            if np.any(w < 0):
                raise ValueError("mixture weights must be non-negative")

    @property
    def support_size(self) -> int:
        return sum(int(np.count_nonzero(w)) for w in self.weights)

    @property
    def total_weight(self) -> float:
        return float(sum(w.sum() for w in self.weights))

    def normalized(self) -> "GaussianMixturePsf":
        total = self.total_weight
        if total <= 0:
            raise ValueError("cannot normalize an all-zero mixture")
        return GaussianMixturePsf(
            self.kernels, self.offsets, [w / total for w in self.weights]
        )

    def shifted(self, delta_um) -> "GaussianMixturePsf":
        """Rigidly translate every atom by ``delta_um`` (re-anchoring)."""
        delta = np.asarray(delta_um, dtype=float)
        return GaussianMixturePsf(
            self.kernels, [o + delta for o in self.offsets], self.weights
        )

    def density(self, offsets) -> np.ndarray:
        offsets = np.asarray(offsets, dtype=float)
        pts = np.atleast_2d(offsets)
        total = np.zeros(pts.shape[0])
        for params, atoms, w in zip(self.kernels, self.offsets, self.weights):
            for m in range(atoms.shape[0]):
                if w[m] == 0.0:
                    continue
                total += w[m] * gaussian_density(params, pts - atoms[m])
        return total[0] if offsets.ndim == 1 else total

    def density_axes(self, dx, dy, dz) -> np.ndarray:
        """Density on a separable offset grid, shape (len(dz), len(dy), len(dx)).

        Each kernel factors into per-axis profiles, so a grid evaluation
        costs O(M (nx + ny + nz)) exponentials plus one sum of M outer
        products instead of M full-grid Gaussian evaluations.
        """
        dx, dy, dz = (np.asarray(a, dtype=float) for a in (dx, dy, dz))
        total = np.zeros((dz.size, dy.size, dx.size))
        for params, atoms, w in zip(self.kernels, self.offsets, self.weights):
            live = w > 0.0
            if not np.any(live):
                continue
            atoms, wk = atoms[live], w[live]
            gx = np.exp(-0.5 * ((dx[None, :] - atoms[:, 0:1]) / params.sigma_xy_um) ** 2)
            gy = np.exp(-0.5 * ((dy[None, :] - atoms[:, 1:2]) / params.sigma_xy_um) ** 2)
            gz = np.exp(-0.5 * ((dz[None, :] - atoms[:, 2:3]) / params.sigma_z_um) ** 2)
            lateral = gy[:, :, None] * gx[:, None, :]
            planes = (gz * (params.peak * wk)[:, None]).T @ lateral.reshape(wk.size, -1)
            total += planes.reshape(dz.size, dy.size, dx.size)
        return total


# ---------------------------------------------------------------------------
# Born-Wolf model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BornWolfParams:
    """Optical parameters of the scalar diffraction model."""

    wavelength_nm: float
    numerical_aperture: float
    refractive_index: float

    def __post_init__(self):
        if self.wavelength_nm <= 0:
            raise ValueError("wavelength must be positive")
        if self.numerical_aperture <= 0 or self.refractive_index <= 0:
            raise ValueError("NA and refractive index must be positive")

    @property
    def wavenumber(self) -> float:
        """2 pi / (wavelength * n), in um^-1."""
        return 2.0 * np.pi / (self.wavelength_nm * 1e-3 * self.refractive_index)


def _simpson_weights(panels: int) -> np.ndarray:
    if panels < 2 or panels % 2:
        raise ValueError("Simpson rule needs an even panel count >= 2")
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * panels)


def _bw_table(params: BornWolfParams, radii, depths, panels: int) -> np.ndarray:
    """Unnormalized intensity on the product grid radii x |depths|.

    Fixed composite Simpson rule on the pupil variable. The integrand
    factorizes into a radius-dependent Bessel part and a depth-dependent
    defocus phase, so the rule contracts a (n_r, nodes) with a (n_z, nodes)
    array instead of evaluating each point separately.
    """
    k0 = params.wavenumber
    na = params.numerical_aperture
    rho = np.linspace(0.0, 1.0, panels + 1)
    weights = _simpson_weights(panels) * rho
    bessel = j0(np.multiply.outer(k0 * na * np.asarray(radii, dtype=float), rho))
    defocus = k0 * na**2 / (2.0 * params.refractive_index)
    phase = np.exp(-1j * np.multiply.outer(np.asarray(depths, dtype=float), defocus * rho**2))
    amplitude = np.einsum("rn,zn->rz", bessel * weights, phase)
    return np.abs(amplitude) ** 2


def _bw_pairs(params: BornWolfParams, radii, depths, panels: int) -> np.ndarray:
    """Unnormalized intensity at paired (r_i, z_i) points."""
    k0 = params.wavenumber
    na = params.numerical_aperture
    rho = np.linspace(0.0, 1.0, panels + 1)
    weights = _simpson_weights(panels) * rho
    bessel = j0(np.multiply.outer(k0 * na * np.asarray(radii, dtype=float), rho))
    defocus = k0 * na**2 / (2.0 * params.refractive_index)
    phase = np.exp(-1j * np.multiply.outer(np.asarray(depths, dtype=float), defocus * rho**2))
    amplitude = (bessel * phase) @ weights
    return np.abs(amplitude) ** 2


def _adaptive(eval_fn, panels: int | None):
    """Run ``eval_fn(panels)``, doubling until 1e-9 sup-relative agreement.

    A fixed panel count skips the doubling (caller opts in for hot loops).
    """
    if panels is not None:
        return eval_fn(panels)
    n = DEFAULT_PANELS
    prev = eval_fn(n)
    for _ in range(6):
        n *= 2
        cur = eval_fn(n)
        scale = max(float(np.max(cur)), 1e-300)
        err = np.abs(cur - prev)
        # relative agreement, with an absolute floor so that far-field values
        # dominated by cancellation noise cannot stall the refinement
        if np.all(err <= np.maximum(_REL_TOL * cur, 1e-12 * scale)):
            return cur
        prev = cur
    return prev


def born_wolf_intensity(params: BornWolfParams, radii, depths, panels: int | None = None):
    """Unnormalized |integral|^2 on the product grid of radii and depths (um)."""
    return _adaptive(lambda n: _bw_table(params, radii, depths, n), panels)


def born_wolf_raw(params: BornWolfParams, offsets, panels: int | None = None) -> np.ndarray:
    """Unnormalized Born-Wolf intensity at displacement vectors.

    Deduplicates exact repeated radii/depths (grids repeat both), evaluating
    a product table when that is cheaper than point-by-point quadrature.
    """
    offsets = np.asarray(offsets, dtype=float)
    pts = np.atleast_2d(offsets)
    r = np.hypot(pts[:, 0], pts[:, 1])
    z = np.abs(pts[:, 2])
    ur, inv_r = np.unique(r, return_inverse=True)
    uz, inv_z = np.unique(z, return_inverse=True)
    if ur.size * uz.size <= 4 * pts.shape[0]:
        table = _adaptive(lambda n: _bw_table(params, ur, uz, n), panels)
        vals = table[inv_r, inv_z]
    else:
        vals = _adaptive(lambda n: _bw_pairs(params, r, z, n), panels)
    return vals[0] if offsets.ndim == 1 else vals


def _normalization_cells(geometry: GridGeometry):
    """Midpoint cells of the normalization box at working grid resolution."""
    half = BW_NORMALIZATION_HALF_EXTENT_UM
    step_lat = geometry.lateral_sampling_nm * 1e-3
    n_lat = max(1, round(2.0 * half / step_lat))
    h_lat = 2.0 * half / n_lat
    lateral = -half + (np.arange(n_lat) + 0.5) * h_lat
    if geometry.n_slices > 1:
        h_ax = geometry.axial_sampling_nm * 1e-3
        axial = (np.arange(geometry.n_slices) - (geometry.n_slices - 1) / 2.0) * h_ax
    else:
        h_ax = h_lat
        axial = lateral.copy()
    return lateral, h_lat, axial, h_ax


@lru_cache(maxsize=128)
def born_wolf_normalization(
    params: BornWolfParams, geometry: GridGeometry, panels: int | None = None
) -> float:
    """Constant making the intensity integrate to one on the bounded box.

    Lateral box +/-3 um; axial box spans the stack (fallback +/-3 um for
    single-slice grids). Midpoint quadrature at the working grid resolution.
    Cached: the constant is reused heavily by fits and simulations.
    """
    lateral, h_lat, axial, h_ax = _normalization_cells(geometry)
    r = np.hypot(lateral[:, None], lateral[None, :]).ravel()
    ur, counts_r = np.unique(r, return_counts=True)
    uz, counts_z = np.unique(np.abs(axial), return_counts=True)
    table = born_wolf_intensity(params, ur, uz, panels)
    total = counts_r @ table @ counts_z * h_lat * h_lat * h_ax
    return 1.0 / total


class BornWolfPsf:
    """Box-normalized Born-Wolf PSF bound to a grid geometry.

    ``panels=None`` (default) evaluates the pupil integral with an adaptive
    composite Simpson rule; passing a fixed even panel count trades the
    refinement check for speed inside optimization loops.
    """

    def __init__(
        self,
        params: BornWolfParams,
        geometry: GridGeometry,
        panels: int | None = None,
    ):
        self.params = params
        self.geometry = geometry
        self.panels = panels
        self.normalization = born_wolf_normalization(params, geometry, panels)

    def density(self, offsets) -> np.ndarray:
        return self.normalization * born_wolf_raw(self.params, offsets, self.panels)

    def tabulated(self, r_max_um=None, z_max_um=None, r_step_um=0.005, z_step_um=0.02):
        return TabulatedBornWolf(self, r_max_um, z_max_um, r_step_um, z_step_um)

    def __repr__(self):
        return f"BornWolfPsf({self.params})"


class TabulatedBornWolf:
    """Bilinear (radius, depth) lookup of a fixed Born-Wolf PSF.

    Used where the same model is evaluated for millions of candidate
    positions (localization benchmarks). The table spans the displacement
    range reachable within the geometry plus one sampling step of margin;
    queries beyond it clamp to the boundary.
    """

    def __init__(self, exact: BornWolfPsf, r_max_um=None, z_max_um=None,
                 r_step_um=0.005, z_step_um=0.02):
        geom = exact.geometry
        if r_max_um is None:
            w = (geom.n_cols + 1) * geom.lateral_sampling_nm * 1e-3
            h = (geom.n_rows + 1) * geom.lateral_sampling_nm * 1e-3
            r_max_um = np.hypot(w, h)
        if z_max_um is None:
            z_max_um = (geom.n_slices + 1) * geom.axial_sampling_nm * 1e-3
        self.params = exact.params
        self.normalization = exact.normalization
        self.r_grid = np.arange(0.0, r_max_um + r_step_um, r_step_um)
        self.z_grid = np.arange(0.0, z_max_um + z_step_um, z_step_um)
        self.table = self.normalization * born_wolf_intensity(
            exact.params, self.r_grid, self.z_grid, panels=DEFAULT_PANELS
        )

    def density(self, offsets) -> np.ndarray:
        offsets = np.asarray(offsets, dtype=float)
        pts = np.atleast_2d(offsets)
        r = np.hypot(pts[:, 0], pts[:, 1])
        z = np.abs(pts[:, 2])
        vals = self._interp(r, z)
        return vals[0] if offsets.ndim == 1 else vals

    def _interp(self, r, z):
        rg, zg = self.r_grid, self.z_grid
        ri = np.clip((r - rg[0]) / (rg[1] - rg[0]), 0.0, rg.size - 1.0 - 1e-12)
        zi = np.clip((z - zg[0]) / (zg[1] - zg[0]), 0.0, zg.size - 1.0 - 1e-12)
        r0 = ri.astype(int)
        z0 = zi.astype(int)
        fr = ri - r0
        fz = zi - z0
        t = self.table
        return (
            t[r0, z0] * (1 - fr) * (1 - fz)
            + t[r0 + 1, z0] * fr * (1 - fz)
            + t[r0, z0 + 1] * (1 - fr) * fz
            + t[r0 + 1, z0 + 1] * fr * fz
        )
