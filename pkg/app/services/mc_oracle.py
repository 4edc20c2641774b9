"""Random-walk oracle: the geometrically stopped walk S_K has density lambda*G_lambda."""

import os
from typing import List, Optional, Sequence

import numpy as np
import scipy.special
from loguru import logger

from app.config import config
from app.models.exception import ParameterError
from app.models.field import Field, Grid
from app.models.schema import (
    Check,
    KernelFamily,
    KernelSpec,
    McEstimate,
    Report,
    TailKind,
    WalkConfig,
)
from app.services import grid as grid_service
from app.services import kernels
from app.utils import utils


def substream(seed: int, chunk: int) -> np.random.Generator:
    """Independent generator for one chunk of walks, keyed by (seed, chunk index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chunk)]))


def _chunks(n_walks: int) -> List[tuple]:
    size = int(config.mc.get("chunk_size", 1_000_000))
    return [(i, min(size, n_walks - start)) for i, start in enumerate(range(0, n_walks, size))]


class AliasTable:
    """Vose alias table over the cells of a tabulated kernel."""

    def __init__(self, probabilities: np.ndarray):
        p = np.asarray(probabilities, dtype=float).ravel()
        n = p.size
        scaled = p * n / p.sum()
        self.prob = np.ones(n)
        self.alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = l
            scaled[l] -= 1.0 - scaled[s]
            if scaled[l] < 1.0:
                small.append(l)
            else:
                large.append(l)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cells = rng.integers(0, self.prob.size, size)
        keep = rng.random(size) < self.prob[cells]
        return np.where(keep, cells, self.alias[cells])


class StepSampler:
    """Exact sampler of the jump density a for analytic families; alias method on cells otherwise."""

    def __init__(self, spec: KernelSpec):
        self.spec = spec
        self._table = None
        if spec.family == KernelFamily.tabulated:
            values = spec.values if spec.values is not None else grid_service.read_field_csv(spec.path)
            a = kernels.sample_kernel(spec, values.grid)
            self._grid = a.grid
            self._table = AliasTable(a.values)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        spec = self.spec
        d = spec.dim
        if spec.family == KernelFamily.gaussian:
            return rng.normal(0.0, spec.sigma, (size, d))
        if spec.family == KernelFamily.tabulated:
            grid = self._grid
            cells = self._table.draw(rng, size)
            index = np.unravel_index(cells, grid.shape)
            axis = grid.axis()
            jitter = rng.uniform(-0.5, 0.5, (size, d)) * grid.spacing
            return np.stack([axis[i] for i in index], axis=-1) + jitter
        if d == 1:
            if spec.family == KernelFamily.laplace:
                return rng.laplace(0.0, 1.0 / spec.delta, (size, 1))
            # P(|X| > r) = (1+r)^{-alpha}
            radius = rng.random(size) ** (-1.0 / spec.alpha) - 1.0
            sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
            return (sign * radius)[:, None]
        if spec.family == KernelFamily.laplace:
            radius = rng.gamma(2.0, 1.0 / spec.delta, size)
        else:
            radius = _polynomial_radius_2d(spec.alpha, rng.random(size))
        angle = rng.uniform(0.0, 2 * np.pi, size)
        return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)


def _polynomial_radius_2d(alpha: float, u: np.ndarray, iterations: int = 80) -> np.ndarray:
    """Invert S(r) = (1+alpha)(1+r)^{-alpha} - alpha(1+r)^{-(1+alpha)} = u by bisection."""
    u = np.maximum(u, np.finfo(float).tiny)
    lo = np.zeros_like(u)
    hi = ((1 + alpha) / u) ** (1.0 / alpha) - 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        s = (1 + alpha) * (1 + mid) ** (-alpha) - alpha * (1 + mid) ** (-(1 + alpha))
        above = s > u
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def sample_step(spec: KernelSpec, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """One step (shape (d,)) or ``size`` steps (shape (size, d))."""
    steps = StepSampler(spec).sample(rng, 1 if size is None else int(size))
    return steps[0] if size is None else steps


def sample_sum(spec: KernelSpec, n: int, size: int, rng: np.random.Generator,
               sampler: StepSampler = None) -> np.ndarray:
    """``size`` independent copies of S_n = X_1 + ... + X_n, shape (size, d)."""
    if n < 1:
        raise ParameterError(f"n must be positive, got {n}")
    if spec.family == KernelFamily.laplace and spec.dim == 1:
        scale = 1.0 / spec.delta
        return (rng.gamma(n, scale, size) - rng.gamma(n, scale, size))[:, None]
    if spec.family == KernelFamily.gaussian:
        return rng.normal(0.0, spec.sigma * np.sqrt(n), (size, spec.dim))
    sampler = sampler or StepSampler(spec)
    total = np.zeros((size, spec.dim))
    for _ in range(n):
        total += sampler.sample(rng, size)
    return total


def _cell_index(points: np.ndarray, grid: Grid):
    """Flat cell index of every point, -1 outside the box; cell j is centred on node x_j."""
    idx = np.floor((points + grid.extent / 2) / grid.spacing + 0.5).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < grid.points_per_axis), axis=1)
    flat = np.full(points.shape[0], -1, dtype=np.int64)
    if np.any(inside):
        flat[inside] = np.ravel_multi_index(tuple(idx[inside].T), grid.shape)
    return flat


def estimate_resolvent_mc(spec: KernelSpec, lam: float, walk: WalkConfig) -> McEstimate:
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    binning = walk.binning
    if not isinstance(binning, Grid) or binning.dim != spec.dim:
        raise ParameterError("walk config needs a binning grid of the kernel dimension")
    sampler = StepSampler(spec)
    p = lam / (1 + lam)

    def run(chunk):
        chunk_id, size = chunk
        rng = substream(walk.seed, chunk_id)
        # numpy's geometric starts at k = 1: P(K=k) = lam (1+lam)^{-k}
        k = rng.geometric(p, size)
        steps = sampler.sample(rng, int(k.sum()))
        offsets = np.concatenate(([0], np.cumsum(k)[:-1]))
        endpoints = np.add.reduceat(steps, offsets, axis=0)
        flat = _cell_index(endpoints, binning)
        counts = np.bincount(flat[flat >= 0], minlength=binning.size)
        return counts, int(np.count_nonzero(flat < 0)), int(k.sum())

    logger.info(f"simulating {walk.n_walks} walks at lambda={lam}, seed={walk.seed}")
    results = utils.parallel_map(run, _chunks(walk.n_walks))
    counts = np.sum([r[0] for r in results], axis=0).astype(float)
    overflow = sum(r[1] for r in results)
    steps = sum(r[2] for r in results)

    n = walk.n_walks
    cell = binning.cell_volume
    share = counts / n
    estimate = Field(grid=binning, values=share / cell)
    stderr = Field(grid=binning, values=np.sqrt(share * (1 - share) / n) / cell)
    overflow_fraction = overflow / n
    result = McEstimate(
        lam=lam,
        estimate=estimate,
        stderr=stderr,
        seed=walk.seed,
        n_walks=n,
        overflow_fraction=overflow_fraction,
        total_mass=float(counts.sum() + overflow) / n,
        mean_k=steps / n,
        verdict=walk.verdict,
    )
    limit = float(config.mc.get("overflow_warning", 0.05))
    if overflow_fraction > limit:
        message = f"{overflow_fraction:.2%} of the walks left the box (limit {limit:.0%})"
        logger.warning(message)
        result.warnings.append(message)
    return result


def cell_average(field: Field, binning: Grid) -> Field:
    """Average a fine-grid field over the cells of ``binning`` (composite trapezoid per cell)."""
    fine = field.grid
    if fine.dim != binning.dim or abs(fine.extent - binning.extent) > 1e-12 * fine.extent:
        raise ParameterError(f"cannot average {fine} onto {binning}")
    ratio, rest = divmod(fine.points_per_axis, binning.points_per_axis)
    if rest or (ratio > 1 and ratio % 2):
        raise ParameterError("fine grid must refine the binning grid by 1 or an even factor")
    values = np.array(field.values)
    if ratio == 1:
        return Field(grid=binning, values=values)
    half = ratio // 2
    weights = np.ones(ratio + 1)
    weights[[0, -1]] = 0.5
    weights /= ratio
    for ax in range(fine.dim):
        averaged = sum(w * np.roll(values, -(k - half), axis=ax) for k, w in enumerate(weights))
        values = np.take(averaged, np.arange(0, fine.points_per_axis, ratio), axis=ax)
    return Field(grid=binning, values=values)


def cross_check(mc: McEstimate, reference: Field, radius: float, sigma: float = 3.0, share: float = 0.99) -> Report:
    """Share of cells with |x| <= radius whose estimate lies within ``sigma`` standard errors.

    Also holds the walk counts to E[K] = (1+lambda)/lambda within 1%.
    """
    if not mc.verdict:
        raise ParameterError("estimate was drawn without a verdict")
    grid_service.check_same_grid(mc.estimate, reference)
    r = reference.grid.radius()
    inside = r <= radius
    diff = np.abs(mc.estimate.values - mc.lam * reference.values)[inside]
    err = mc.stderr.values[inside]
    hits = float(np.mean(diff <= sigma * err))
    mean_k = (1 + mc.lam) / mc.lam
    k_err = abs(mc.mean_k - mean_k) / mean_k
    return Report(
        name="mc_cross_check",
        checks=[
            Check(name="cells_within_standard_errors", measured=hits, bound=share, passed=hits >= share),
            Check(name="histogram_total_mass", measured=mc.total_mass, bound=1.0, passed=mc.total_mass == 1.0),
            Check(name="mean_stopping_time", measured=k_err, bound=0.01, passed=k_err <= 0.01,
                  note=f"mean K {mc.mean_k:.6f}, expected {mean_k:.6f}"),
        ],
        data={"radius": radius, "sigma": sigma, "seed": mc.seed, "n_walks": mc.n_walks, "mean_k": mc.mean_k},
    )


def step_variance(spec: KernelSpec) -> float:
    """Per-coordinate variance of one step."""
    if spec.family == KernelFamily.laplace:
        return (2.0 if spec.dim == 1 else 3.0) / spec.delta**2
    if spec.family == KernelFamily.gaussian:
        return spec.sigma**2
    if spec.family == KernelFamily.polynomial:
        return np.inf
    values = spec.values if spec.values is not None else grid_service.read_field_csv(spec.path)
    a = kernels.sample_kernel(spec, values.grid)
    return float(grid_service.integrate(a.like(a.values * a.grid.coordinates()[0] ** 2)))


def _gaussian_rms(radii: np.ndarray, survival: np.ndarray, dim: int) -> float:
    """rms in log P of the centred normal survival: erfc(r/(s sqrt 2)) in d=1, exp(-r^2/(2 s^2)) in d=2."""
    if dim == 1:
        # erfcinv(P) is linear in r
        slope, intercept, _ = utils.line_fit(radii, scipy.special.erfcinv(survival))
        model = np.log(scipy.special.erfc(intercept + slope * radii))
        return float(np.sqrt(np.mean((model - np.log(survival)) ** 2)))
    _, _, rms = utils.line_fit(radii**2, np.log(survival))
    return rms


def _regime_checks(name: str, radii: np.ndarray, survival: np.ndarray, dim: int, gaussian_wins: bool) -> List[Check]:
    rms_gauss = _gaussian_rms(radii, survival, dim)
    _, _, rms_exp = utils.line_fit(radii, np.log(survival))
    if gaussian_wins:
        checks = [Check(name=f"{name}_gaussian_beats_exponential", measured=rms_gauss, bound=rms_exp,
                        passed=rms_gauss < rms_exp)]
        limit = float(config.numerics.get("classify_residual", 0.1))
        checks.append(Check(name=f"{name}_gaussian_fit_residual", measured=rms_gauss, bound=limit, passed=rms_gauss < limit))
        return checks
    return [Check(name=f"{name}_exponential_beats_gaussian", measured=rms_exp, bound=rms_gauss, passed=rms_exp < rms_gauss)]


def walk_tail_report(spec: KernelSpec, n: int, walk: WalkConfig, radii: Sequence[float]) -> Report:
    """Empirical P(|S_n| > r): Gaussian shape for r <= r*, exponential beyond, r* = n*delta*sigma^2/2."""
    if n < 1:
        raise ParameterError(f"n must be positive, got {n}")
    if not walk.verdict:
        raise ParameterError("walk config was built without a verdict")
    tc = kernels.tail_class(spec)
    if tc.kind == TailKind.polynomial:
        raise ParameterError("walk tail report needs an exponential-class kernel")
    sampler = StepSampler(spec)

    def run(chunk):
        chunk_id, size = chunk
        rng = substream(walk.seed, chunk_id)
        return np.linalg.norm(sample_sum(spec, n, size, rng, sampler), axis=1)

    norms = np.concatenate(utils.parallel_map(run, _chunks(walk.n_walks)))
    radii = np.sort(np.asarray(radii, dtype=float))
    exceed = np.array([np.count_nonzero(norms > r) for r in radii])
    min_count = int(config.mc.get("min_exceedances", 50))

    report = Report(name=f"walk_tail_n_{n}")
    kept = exceed >= min_count
    for r in radii[~kept]:
        report.notes.append(f"radius {r:g} excluded: fewer than {min_count} exceedances")
    radii, exceed = radii[kept], exceed[kept]
    survival = exceed / walk.n_walks
    rate = tc.rate if tc.kind == TailKind.exponential else np.inf
    r_star = n * rate * step_variance(spec) / 2
    report.data = {"radii": radii.tolist(), "survival": survival.tolist(), "r_star": r_star, "n": n}

    if n == 1 and spec.family != KernelFamily.tabulated:
        exact = np.array([kernels.mass_outside(spec, r) for r in radii])
        err = np.sqrt(exact * (1 - exact) / walk.n_walks)
        worst = float(np.max(np.abs(survival - exact) / err)) if radii.size else 0.0
        report.data["step_tail"] = exact.tolist()
        report.checks.append(Check(name="step_tail_match", measured=worst, bound=4.0, passed=worst <= 4.0))
        return report

    moderate = radii <= r_star
    if np.count_nonzero(moderate) >= 3:
        report.checks.extend(
            _regime_checks("moderate", radii[moderate], survival[moderate], spec.dim, gaussian_wins=True)
        )
    if np.count_nonzero(~moderate) >= 3:
        report.checks.extend(
            _regime_checks("large", radii[~moderate], survival[~moderate], spec.dim, gaussian_wins=False)
        )
    if not report.checks:
        report.notes.append("fewer than three radii in each regime: no shape verdict")
    return report


def write_histogram(mc: McEstimate, out_dir: str, stem: str = "mc") -> str:
    os.makedirs(out_dir, exist_ok=True)
    grid_service.write_field_csv(mc.estimate, os.path.join(out_dir, f"{stem}_estimate.csv"))
    grid_service.write_field_csv(mc.stderr, os.path.join(out_dir, f"{stem}_stderr.csv"))
    return utils.write_json(os.path.join(out_dir, f"{stem}_manifest.json"), mc.manifest())
