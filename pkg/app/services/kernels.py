"""Dispersal kernels: continuum densities, grid samples, symbols and MGFs."""

import os
from functools import lru_cache

import numpy as np
import scipy.integrate
import scipy.special
from loguru import logger

from app.config import config
from app.models.exception import (
    GridMismatchError,
    KernelResolutionError,
    MgfUnreliableError,
    ParameterError,
)
from app.models.field import Field, Grid, SpectralField
from app.models.schema import KernelFamily, KernelSpec, TailClass, TailKind
from app.services import grid as grid_service
from app.utils import utils


@lru_cache(maxsize=64)
def _polynomial_normalizer_2d(alpha: float) -> float:
    # 1 / int_R^2 (1+|x|)^{-(2+alpha)} dx
    radial, _ = scipy.integrate.quad(
        lambda r: 2 * np.pi * r * (1 + r) ** (-(2 + alpha)), 0, np.inf, limit=200
    )
    return 1.0 / radial


def normalizer(spec: KernelSpec) -> float:
    d = spec.dim
    if spec.family == KernelFamily.laplace:
        return spec.delta / 2 if d == 1 else spec.delta**2 / (2 * np.pi)
    if spec.family == KernelFamily.gaussian:
        return (2 * np.pi * spec.sigma**2) ** (-d / 2)
    if spec.family == KernelFamily.polynomial:
        return spec.alpha / 2 if d == 1 else _polynomial_normalizer_2d(spec.alpha)
    raise ParameterError("tabulated kernels carry no analytic normalizer")


def density(spec: KernelSpec, r) -> np.ndarray:
    """Continuum density a at radius ``r = |x|``."""
    r = np.abs(np.asarray(r, dtype=float))
    c = normalizer(spec)
    if spec.family == KernelFamily.laplace:
        return c * np.exp(-spec.delta * r)
    if spec.family == KernelFamily.gaussian:
        return c * np.exp(-(r**2) / (2 * spec.sigma**2))
    return c * (1 + r) ** (-(spec.dim + spec.alpha))


def mass_outside(spec: KernelSpec, radius: float) -> float:
    """Continuum mass of the kernel outside the ball |x| < radius."""
    if spec.family == KernelFamily.tabulated:
        return 0.0
    R = float(radius)
    d = spec.dim
    if spec.family == KernelFamily.laplace:
        t = spec.delta * R
        return float(np.exp(-t) if d == 1 else (1 + t) * np.exp(-t))
    if spec.family == KernelFamily.gaussian:
        if d == 1:
            return float(scipy.special.erfc(R / (spec.sigma * np.sqrt(2))))
        return float(np.exp(-(R**2) / (2 * spec.sigma**2)))
    a = spec.alpha
    if d == 1:
        return float((1 + R) ** (-a))
    return float((1 + a) * (1 + R) ** (-a) - a * (1 + R) ** (-(1 + a)))


def log_rate(spec: KernelSpec) -> float:
    """c = -lim ln a(x)/|x|: finite for laplace, +inf for gaussian, 0 for heavy tails."""
    if spec.family == KernelFamily.laplace:
        return float(spec.delta)
    if spec.family == KernelFamily.gaussian:
        return np.inf
    if spec.family == KernelFamily.polynomial:
        return 0.0
    tc = tail_class(spec)
    if tc.kind == TailKind.exponential:
        return float(tc.rate)
    if tc.kind == TailKind.polynomial:
        return 0.0
    return np.inf


def _tabulated_values(spec: KernelSpec) -> Field:
    values = spec.values
    if values is None:
        values = grid_service.read_field_csv(spec.path)
    if not isinstance(values, Field):
        raise ParameterError("tabulated kernel values must be a Field")
    if values.grid.dim != spec.dim:
        raise ParameterError(f"tabulated kernel has dim {values.grid.dim}, spec says {spec.dim}")
    return values


def _raw_sample(spec: KernelSpec, grid: Grid) -> np.ndarray:
    if spec.family == KernelFamily.tabulated:
        values = _tabulated_values(spec)
        if values.grid != grid:
            raise GridMismatchError(f"tabulated kernel lives on {values.grid}, requested {grid}")
        raw = np.array(values.values)
        if raw.min() < 0:
            raise ParameterError(f"tabulated kernel has negative values (min {raw.min():.3e})")
        gap = float(np.max(np.abs(raw - grid.mirror(raw))))
        if gap > 1e-12 * max(float(raw.max()), np.finfo(float).tiny):
            raise ParameterError(f"tabulated kernel is not even on the grid (gap {gap:.3e})")
        return raw
    return density(spec, grid.radius())


def rescale_factor(spec: KernelSpec, grid: Grid) -> float:
    """Factor that turns the raw node samples into a discrete unit mass."""
    mass = grid.cell_volume * float(np.sum(_raw_sample(spec, grid)))
    if not mass > 0:
        raise KernelResolutionError(f"kernel sample has no mass on {grid}")
    return 1.0 / mass


def sample_kernel(spec: KernelSpec, grid: Grid) -> Field:
    if grid.dim != spec.dim:
        raise ParameterError(f"kernel dim {spec.dim} does not match grid dim {grid.dim}")

    raw = _raw_sample(spec, grid)
    # symmetrize so a(-x) = a(x) holds bit for bit
    raw = 0.5 * (raw + grid.mirror(raw))
    factor = 1.0 / (grid.cell_volume * float(np.sum(raw)))

    lo = float(config.numerics.get("kernel_rescale_min", 0.9))
    hi = float(config.numerics.get("kernel_rescale_max", 1.1))
    if not lo <= factor <= hi:
        raise KernelResolutionError(
            f"rescaling factor {factor:.4f} outside [{lo}, {hi}]: grid too coarse or too small for {spec.family.value}",
            data={"factor": factor},
        )
    leak = mass_outside(spec, grid.extent / 2)
    leak_max = float(config.numerics.get("kernel_leak_max", 0.02))
    if leak > leak_max:
        raise KernelResolutionError(
            f"{leak:.4f} of the kernel mass lies outside the box (max {leak_max}), enlarge the extent",
            data={"factor": factor, "leak": leak},
        )

    logger.debug(f"sampled {spec.family.value} kernel on {grid}, rescale factor {factor:.10f}")
    return Field(grid=grid, values=raw * factor)


def symbol(spec: KernelSpec, grid: Grid) -> SpectralField:
    if grid.dim != spec.dim:
        raise ParameterError(f"kernel dim {spec.dim} does not match grid dim {grid.dim}")
    p2 = grid.dual_radius() ** 2
    if spec.family == KernelFamily.laplace:
        d2 = spec.delta**2
        values = d2 / (d2 + p2) if spec.dim == 1 else (1 + p2 / d2) ** -1.5
        return SpectralField(grid=grid, values=values)
    if spec.family == KernelFamily.gaussian:
        return SpectralField(grid=grid, values=np.exp(-(spec.sigma**2) * p2 / 2))
    return grid_service.transform(sample_kernel(spec, grid))


def _tabulated_quadrature(spec: KernelSpec, q: float, weight) -> float:
    values = _tabulated_values(spec)
    a = sample_kernel(spec, values.grid)
    x = values.grid.axis()
    integrand = a.values * weight(q, x)
    peak = float(np.max(np.abs(integrand)))
    edge = max(abs(float(integrand[0])), abs(float(integrand[-1])))
    ratio = float(config.numerics.get("mgf_edge_ratio", 1e-8))
    if peak > 0 and edge >= ratio * peak:
        raise MgfUnreliableError(
            f"MGF unreliable at this q={q}: edge integrand is {edge / peak:.2e} of its max",
            data={"q": q},
        )
    return float(values.grid.spacing * np.sum(integrand))


def mgf(spec: KernelSpec, q: float) -> float:
    """M(q) = int a(x) e^{qx} dx in d=1; +inf past the abscissa of convergence."""
    if spec.dim != 1:
        raise ParameterError("mgf is defined for dim = 1 only")
    if q < 0:
        raise ParameterError(f"q must be nonnegative, got {q}")
    if q == 0:
        return 1.0
    if spec.family == KernelFamily.laplace:
        d2 = spec.delta**2
        return d2 / (d2 - q**2) if q < spec.delta else np.inf
    if spec.family == KernelFamily.gaussian:
        return float(np.exp(q**2 * spec.sigma**2 / 2))
    if spec.family == KernelFamily.polynomial:
        return np.inf
    return _tabulated_quadrature(spec, q, lambda q_, x: np.cosh(q_ * x))


def mgf_derivative(spec: KernelSpec, q: float) -> float:
    if spec.dim != 1:
        raise ParameterError("mgf is defined for dim = 1 only")
    if q < 0:
        raise ParameterError(f"q must be nonnegative, got {q}")
    if spec.family == KernelFamily.laplace:
        d2 = spec.delta**2
        return 2 * q * d2 / (d2 - q**2) ** 2 if q < spec.delta else np.inf
    if spec.family == KernelFamily.gaussian:
        s2 = spec.sigma**2
        return float(q * s2 * np.exp(q**2 * s2 / 2))
    if spec.family == KernelFamily.polynomial:
        return 0.0 if q == 0 else np.inf
    return _tabulated_quadrature(spec, q, lambda q_, x: x * np.sinh(q_ * x))


def _classify_tabulated(spec: KernelSpec) -> TailClass:
    values = _tabulated_values(spec)
    g = values.grid
    r = g.radius().ravel()
    v = values.ravel()
    inside = (r >= g.extent / 8) & (r <= g.extent / 4) & (v > 0)
    min_nodes = int(config.numerics.get("min_fit_nodes", 16))
    if np.count_nonzero(inside) < min_nodes:
        logger.warning(f"tabulated kernel: fewer than {min_nodes} positive nodes in the tail window")
        return TailClass(kind=TailKind.unclassified)

    log_v = np.log(v[inside])
    s_poly, _, rms_poly = utils.line_fit(np.log1p(r[inside]), log_v)
    s_exp, _, rms_exp = utils.line_fit(r[inside], log_v)
    limit = float(config.numerics.get("classify_residual", 0.1))
    logger.debug(f"tabulated tail fits: polynomial rms {rms_poly:.3e}, exponential rms {rms_exp:.3e}")

    if rms_poly <= rms_exp and rms_poly < limit:
        return TailClass(kind=TailKind.polynomial, alpha=-s_poly - g.dim, rms_residual=rms_poly)
    if rms_exp < rms_poly and rms_exp < limit:
        return TailClass(kind=TailKind.exponential, rate=-s_exp, rms_residual=rms_exp)
    return TailClass(kind=TailKind.unclassified, rms_residual=min(rms_poly, rms_exp))


def tail_class(spec: KernelSpec) -> TailClass:
    if spec.family == KernelFamily.polynomial:
        return TailClass(kind=TailKind.polynomial, alpha=spec.alpha)
    if spec.family == KernelFamily.laplace:
        return TailClass(kind=TailKind.exponential, rate=spec.delta)
    if spec.family == KernelFamily.gaussian:
        return TailClass(kind=TailKind.super_exponential)
    return _classify_tabulated(spec)


def load_kernel_spec(obj, base_dir: str = "") -> KernelSpec:
    """Build a KernelSpec from its JSON object; tabulated kernels pull their CSV."""
    if isinstance(obj, str):
        path = obj
        obj = utils.load_json(path)
        base_dir = base_dir or os.path.dirname(os.path.abspath(path))
    data = dict(obj)
    if data.get("family") == KernelFamily.tabulated.value and data.get("path"):
        path = data["path"]
        if base_dir and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        data["values"] = grid_service.read_field_csv(path)
    try:
        return KernelSpec(**data)
    except ValueError as e:
        raise ParameterError(f"invalid kernel spec {obj}: {e}")


def dump_kernel_spec(spec: KernelSpec) -> dict:
    return spec.model_dump(mode="json", exclude_none=True)
