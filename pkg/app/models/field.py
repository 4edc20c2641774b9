"""Grid and sampled-function containers.

A ``Grid`` is the periodic uniform lattice on [-L/2, L/2)^d. Node ``j`` on an
axis sits at ``x_j = -L/2 + j*h``; the dual lattice is stored in standard FFT
order, index ``k`` mapping to ``p_k = 2*pi*fftfreq(N, h)[k]``.
"""

from typing import Any, Tuple

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict

_Config = ConfigDict(arbitrary_types_allowed=True)


class Grid(BaseModel):
    model_config = ConfigDict(frozen=True)

    dim: int
    extent: float
    points_per_axis: int

    @property
    def spacing(self) -> float:
        return self.extent / self.points_per_axis

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dim

    def axis(self) -> np.ndarray:
        n = self.points_per_axis
        return -self.extent / 2 + np.arange(n) * self.spacing

    def dual_axis(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.spacing)

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis()] * self.dim), indexing="ij"))

    def dual_coordinates(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.dual_axis()] * self.dim), indexing="ij"))

    def radius(self) -> np.ndarray:
        coords = self.coordinates()
        return np.sqrt(sum(c**2 for c in coords))

    def dual_radius(self) -> np.ndarray:
        coords = self.dual_coordinates()
        return np.sqrt(sum(c**2 for c in coords))

    def mirror(self, values: np.ndarray) -> np.ndarray:
        """Values at -x for every node x, using periodic wrap at -L/2."""
        out = values
        for ax in range(self.dim):
            out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
        return out


def _coerce(grid: Grid, values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.size != grid.size:
        raise ValueError(f"field has {arr.size} values, grid needs {grid.size}")
    arr = arr.reshape(grid.shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    arr.flags.writeable = False
    return arr


@pydantic.dataclasses.dataclass(config=_Config, frozen=True, eq=False)
class Field:
    grid: Grid
    values: Any

    def __post_init__(self):
        object.__setattr__(self, "values", _coerce(self.grid, self.values, float))

    def like(self, values) -> "Field":
        return Field(grid=self.grid, values=values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def min(self) -> float:
        return float(np.min(self.values))

    def ravel(self) -> np.ndarray:
        return self.values.ravel()


@pydantic.dataclasses.dataclass(config=_Config, frozen=True, eq=False)
class SpectralField:
    grid: Grid
    values: Any

    def __post_init__(self):
        object.__setattr__(self, "values", _coerce(self.grid, self.values, complex))

    def at_negative_frequencies(self) -> np.ndarray:
        out = self.values
        for ax in range(self.grid.dim):
            out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
        return out

    def is_conjugate_symmetric(self, rtol: float = 1e-12) -> bool:
        scale = max(float(np.max(np.abs(self.values))), np.finfo(float).tiny)
        gap = np.max(np.abs(self.at_negative_frequencies() - np.conj(self.values)))
        return bool(gap <= rtol * scale)
