"""Kernel dictionaries and the blur operators they induce.

A dictionary is a set of Gaussian kernel scales, each carrying its own atom
positions (absolute, um). "Digital" placement puts one atom at every pixel
centre, which makes the induced blur a centrally symmetric convolution on the
grid; that operator is applied and inverted in O(N log N) through the DCT-II
diagonalization of reflexive-boundary convolutions. Arbitrary ("analog")
placements fall back to dense matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn
from scipy.linalg import cho_factor, cho_solve

from .imaging import GridGeometry
from .psf import GaussianParams, gaussian_density

MAX_DICTIONARY_ATOMS = 10**8

# Stencils keep +/- this many standard deviations before renormalization.
STENCIL_RADIUS_SIGMAS = 4.0


@dataclass(frozen=True)
class Dictionary:
    """Gaussian kernel scales with their atom positions.

    ``positions[k]`` is an (M_k, 3) array of absolute atom centres in um.
    ``digital`` records that every kernel sits at every pixel centre in
    vectorization order, enabling the spectral solver path.
    """

    kernels: tuple[GaussianParams, ...]
    positions: tuple[np.ndarray, ...]
    digital: bool = False

    def __post_init__(self):
        if len(self.kernels) == 0:
            raise ValueError("dictionary needs at least one kernel scale")
        if len(self.kernels) != len(self.positions):
            raise ValueError("one position set per kernel scale required")
        for pos in self.positions:
            if pos.ndim != 2 or pos.shape[1] != 3:
                raise ValueError("positions must be (M_k, 3) arrays")

    @property
    def n_kernels(self) -> int:
        return len(self.kernels)

    @property
    def size(self) -> int:
        return sum(p.shape[0] for p in self.positions)

    def atom_counts(self) -> list[int]:
        return [p.shape[0] for p in self.positions]


def build_digital_dictionary(kernels, geometry: GridGeometry) -> Dictionary:
    """Place every kernel scale at every pixel centre."""
    kernels = tuple(kernels)
    total = len(kernels) * geometry.n_pixels
    if total > MAX_DICTIONARY_ATOMS:
        raise ValueError(
            f"digital dictionary would hold {total} atoms "
            f"(limit {MAX_DICTIONARY_ATOMS})"
        )
    centers = geometry.pixel_centers()
    return Dictionary(kernels, tuple(centers for _ in kernels), digital=True)


def dense_blur_matrix(
    kernel: GaussianParams,
    positions_um: np.ndarray,
    geometry: GridGeometry,
    source_um=(0.0, 0.0, 0.0),
) -> np.ndarray:
    """Exact blur matrix, entry (j, m) = kernel density at (x_j - x0) - atom_m."""
    pts = geometry.pixel_centers() - np.asarray(source_um, dtype=float)
    positions = np.atleast_2d(np.asarray(positions_um, dtype=float))
    diff = pts[:, None, :] - positions[None, :, :]
    return gaussian_density(kernel, diff.reshape(-1, 3)).reshape(
        geometry.n_pixels, positions.shape[0]
    )


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

class DenseBlurOperator:
    """Dense blur operator with a cached Cholesky factor of 2I + B^T B."""

    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=float)
        self.n_pixels, self.n_atoms = self.matrix.shape
        gram = 2.0 * np.eye(self.n_atoms) + self.matrix.T @ self.matrix
        self._chol = cho_factor(gram)

    def apply(self, w: np.ndarray) -> np.ndarray:
        return self.matrix @ w

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        return self.matrix.T @ v

    def solve_regularized(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (2I + B^T B) x = rhs."""
        return cho_solve(self._chol, rhs)


class IdentityOperator:
    """Unit blur (used by degenerate-instance tests and diagnostics)."""

    def __init__(self, n: int):
        self.n_pixels = n
        self.n_atoms = n

    def apply(self, w):
        return np.asarray(w, dtype=float)

    def adjoint(self, v):
        return np.asarray(v, dtype=float)

    def solve_regularized(self, rhs):
        return np.asarray(rhs, dtype=float) / 3.0


def _axis_stencil(sigma_um: float, step_um: float, n: int) -> np.ndarray:
    """One-axis unit-amplitude Gaussian stencil, truncated and renormalized.

    Truncation at +/-4 sigma, clamped to the n-1 single-reflection limit.
    The truncated stencil is rescaled to keep the discrete kernel mass over
    grid-reachable offsets (|d| <= n-1), so truncation does not lose mass but
    axes the grid cannot resolve (e.g. a single slice) are not inflated.
    """
    radius = min(int(np.ceil(STENCIL_RADIUS_SIGMAS * sigma_um / step_um)), n - 1)
    offsets = np.arange(-radius, radius + 1)
    stencil = np.exp(-0.5 * (offsets * step_um / sigma_um) ** 2)
    ref_radius = min(n - 1, max(radius, int(np.ceil(10.0 * sigma_um / step_um))))
    wide = np.arange(-ref_radius, ref_radius + 1)
    reachable_sum = np.exp(-0.5 * (wide * step_um / sigma_um) ** 2).sum()
    return stencil * (reachable_sum / stencil.sum())


def _axis_eigenvalues(stencil: np.ndarray, n: int) -> np.ndarray:
    """Eigenvalues of the reflexive-boundary convolution on n points.

    DCT-II of the operator's first column divided by the DCT-II of the unit
    impulse; exact for symmetric stencils of half-width <= n-1.
    """
    from scipy.fft import dct

    radius = (stencil.size - 1) // 2
    h = np.zeros(n + 1)
    take = min(radius, n)
    h[: take + 1] = stencil[radius : radius + take + 1]
    col0 = h[:n] + h[1 : n + 1]
    impulse = np.zeros(n)
    impulse[0] = 1.0
    return dct(col0, type=2) / dct(impulse, type=2)


class SpectralBlurOperator:
    """Reflexive-boundary Gaussian convolution on the grid, DCT-diagonalized.

    Models the blur of a digital dictionary: the separable stencil is the
    kernel sampled at grid offsets, so weights live on the pixel grid and the
    operator is symmetric. ``apply``/``adjoint`` coincide.
    """

    def __init__(self, kernel: GaussianParams, geometry: GridGeometry):
        self.kernel = kernel
        self.geometry = geometry
        self.n_pixels = geometry.n_pixels
        self.n_atoms = geometry.n_pixels
        step_lat = geometry.lateral_sampling_nm * 1e-3
        step_ax = geometry.axial_sampling_nm * 1e-3
        ez = _axis_eigenvalues(
            _axis_stencil(kernel.sigma_z_um, step_ax, geometry.n_slices),
            geometry.n_slices,
        )
        ey = _axis_eigenvalues(
            _axis_stencil(kernel.sigma_xy_um, step_lat, geometry.n_rows),
            geometry.n_rows,
        )
        ex = _axis_eigenvalues(
            _axis_stencil(kernel.sigma_xy_um, step_lat, geometry.n_cols),
            geometry.n_cols,
        )
        self.eigenvalues = kernel.peak * (
            ez[:, None, None] * ey[None, :, None] * ex[None, None, :]
        )

    def _transform(self, values: np.ndarray) -> np.ndarray:
        return dctn(values.reshape(self.geometry.shape()), type=2, norm="ortho")

    def _inverse(self, spectrum: np.ndarray) -> np.ndarray:
        return idctn(spectrum, type=2, norm="ortho").ravel()

    def apply(self, w: np.ndarray) -> np.ndarray:
        return self._inverse(self._transform(np.asarray(w, dtype=float)) * self.eigenvalues)

    adjoint = apply

    def solve_regularized(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (2I + B^T B) x = rhs through the shared eigenbasis."""
        denom = 2.0 + self.eigenvalues**2
        return self._inverse(self._transform(np.asarray(rhs, dtype=float)) / denom)

    def to_dense(self) -> np.ndarray:
        """Materialize the operator column by column (small grids only)."""
        n = self.n_pixels
        if n > 4096:
            raise ValueError("refusing to materialize a large spectral operator")
        cols = np.empty((n, n))
        basis = np.zeros(n)
        for m in range(n):
            basis[m] = 1.0
            cols[:, m] = self.apply(basis)
            basis[m] = 0.0
        return cols


def build_operators(dictionary: Dictionary, geometry: GridGeometry, source_um=(0.0, 0.0, 0.0)):
    """One blur operator per kernel scale.

    Digital dictionaries get the spectral path (atoms on the pixel grid make
    the source position a pure relabeling, so it does not enter the
    operator); analog dictionaries get exact dense matrices.
    """
    if dictionary.digital:
        return [SpectralBlurOperator(k, geometry) for k in dictionary.kernels]
    return [
        DenseBlurOperator(dense_blur_matrix(k, pos, geometry, source_um))
        for k, pos in zip(dictionary.kernels, dictionary.positions)
    ]
