"""Periodic grids, quadrature and the discrete Fourier transform.

The forward transform carries the ``h^d`` weight so that the transform of a
sampled density approximates its continuum Fourier transform
``f~(p) = int e^{-i p.x} f(x) dx``. Node ``x = 0`` sits at index ``N/2``; it is
moved to index 0 before the FFT so the phases refer to the physical origin.
"""

import os

import numpy as np
import scipy.fft
from loguru import logger

from app.models.exception import GridMismatchError, ParameterError
from app.models.field import Field, Grid, SpectralField
from app.utils import utils


def make_grid(dim: int, extent: float, points_per_axis: int) -> Grid:
    if dim not in (1, 2):
        raise ParameterError(f"dim must be 1 or 2, got {dim}")
    if not extent > 0:
        raise ParameterError(f"extent must be positive, got {extent}")
    if int(points_per_axis) != points_per_axis or points_per_axis % 2 or points_per_axis < 8:
        raise ParameterError(f"points_per_axis must be an even integer >= 8, got {points_per_axis}")
    return Grid(dim=dim, extent=float(extent), points_per_axis=int(points_per_axis))


def check_same_grid(*fields) -> Grid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"grid mismatch: {grid} vs {f.grid}")
    return grid


def sample(grid: Grid, func) -> Field:
    """Evaluate ``func(*coords)`` at every node."""
    return Field(grid=grid, values=func(*grid.coordinates()))


def constant(grid: Grid, value: float = 1.0) -> Field:
    return Field(grid=grid, values=np.full(grid.shape, float(value)))


def node_indicator(grid: Grid, index) -> Field:
    values = np.zeros(grid.shape)
    values[index] = 1.0
    return Field(grid=grid, values=values)


def integrate(f: Field) -> float:
    return float(f.grid.cell_volume * np.sum(f.values))


def _axes(grid: Grid):
    return tuple(range(grid.dim))


def transform(f: Field) -> SpectralField:
    grid = f.grid
    axes = _axes(grid)
    shifted = scipy.fft.ifftshift(f.values, axes=axes)
    spectrum = scipy.fft.fftn(shifted, axes=axes, workers=utils.get_threads())
    return SpectralField(grid=grid, values=grid.cell_volume * spectrum)


def inverse_transform(F: SpectralField) -> Field:
    """Exact inverse of ``transform``; the imaginary part is dropped."""
    grid = F.grid
    axes = _axes(grid)
    values = scipy.fft.ifftn(F.values, axes=axes, workers=utils.get_threads())
    values = scipy.fft.fftshift(values, axes=axes) / grid.cell_volume
    return Field(grid=grid, values=values.real)


def transform_at(f: Field, p) -> complex:
    """Discrete transform ``h^d sum_j f(x_j) exp(-i p.x_j)`` at any frequency ``p``."""
    grid = f.grid
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.size != grid.dim:
        raise ParameterError(f"frequency has {p.size} components, grid has dim {grid.dim}")
    phase = sum(pk * xk for pk, xk in zip(p, grid.coordinates()))
    return complex(grid.cell_volume * np.sum(f.values * np.exp(-1j * phase)))


def parseval_gap(f: Field) -> float:
    """Relative mismatch between integrate(f^2) and L^{-d} sum |F|^2."""
    grid = f.grid
    lhs = integrate(f.like(f.values**2))
    rhs = float(np.sum(np.abs(transform(f).values) ** 2)) / grid.extent**grid.dim
    return abs(lhs - rhs) / max(abs(lhs), np.finfo(float).tiny)


def write_field_csv(f: Field, path: str) -> str:
    grid = f.grid
    header = [f"x{i + 1}" for i in range(grid.dim)] + ["value"]
    columns = [c.ravel() for c in grid.coordinates()] + [f.ravel()]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    utils.write_columns_csv(path, header, columns)
    logger.debug(f"wrote field: {path}")
    return path


def read_field_csv(path: str) -> Field:
    """Load a field CSV; the grid is reconstructed from the node coordinates."""
    if not os.path.isfile(path):
        raise ParameterError(f"field file not found: {path}")
    with open(path, "r", encoding="utf-8") as fp:
        header = fp.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    dim = len(header) - 1
    axis = np.unique(data[:, 0])
    n = axis.size
    if n < 2:
        raise ParameterError(f"field file {path} has fewer than two nodes per axis")
    # x_0 = -L/2 round-trips exactly through the 17-digit format
    grid = make_grid(dim, -2.0 * float(axis[0]), n)
    if not np.allclose(axis, grid.axis(), rtol=0, atol=1e-9 * grid.extent):
        raise ParameterError(f"field file {path} is not on a centred uniform grid")
    return Field(grid=grid, values=data[:, -1])
