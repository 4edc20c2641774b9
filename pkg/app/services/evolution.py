"""Cauchy problem du/dt = L0 u - m u + f, u(., 0) = 0, and its stationary limit."""

import os
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger

from app.models import const
from app.models.exception import ConvergenceError, FitError, GridMismatchError, ParameterError
from app.models.field import Field, Grid, SpectralField
from app.models.schema import (
    Check,
    EvolutionTrace,
    KernelSpec,
    Report,
    SourceKind,
    SourceSpec,
    TailKind,
    TailReport,
)
from app.services import asymptotics, kernels, resolvent
from app.services import grid as grid_service
from app.utils import utils


def source_field(source: SourceSpec, grid: Grid) -> Field:
    r = grid.radius()
    if source.kind == SourceKind.box:
        values = np.where(r <= source.radius, source.height, 0.0)
    elif source.kind == SourceKind.polynomial:
        if source.alpha is None:
            raise ParameterError("polynomial source needs 'alpha'")
        values = source.height * (1 + r) ** (-(grid.dim + source.alpha))
    elif source.kind == SourceKind.laplace:
        if source.delta is None:
            raise ParameterError("laplace source needs 'delta'")
        values = source.height * np.exp(-source.delta * r)
    elif source.kind == SourceKind.constant:
        # not integrable on R^d, only meaningful on the torus
        values = np.full(grid.shape, source.height)
    else:
        field = grid_service.read_field_csv(source.path)
        if field.grid != grid:
            raise GridMismatchError(f"source lives on {field.grid}, requested {grid}")
        values = field.values
    return Field(grid=grid, values=values)


def _check_m(m: float):
    if not m > 0:
        raise ParameterError(f"m must be positive, got {m}")


def _decay_symbol(a: Field, m: float) -> np.ndarray:
    # s(p) = 1 + m - a~(p) >= m > 0
    return 1 + m - grid_service.transform(a).values


def stationary_solution(a: Field, m: float, f: Field, agreement: float = None) -> Field:
    _check_m(m)
    grid_service.check_same_grid(a, f)
    resolvent.check_nonnegative(f, "source f")
    agreement = agreement or const.DEFAULT_TOLERANCES["stationary_agreement"]

    spectral = grid_service.inverse_transform(
        SpectralField(grid=a.grid, values=grid_service.transform(f).values / _decay_symbol(a, m))
    )
    g = resolvent.resolvent_kernel_spectral(a, m).g
    via_resolvent = (f.values + resolvent.convolve(g, f).values) / (1 + m)
    gap = float(np.max(np.abs(spectral.values - via_resolvent)))
    if gap > agreement:
        raise ConvergenceError(
            f"stationary solution self-check failed: formulas differ by {gap:.3e} (> {agreement})",
            data={"gap": gap},
        )
    logger.debug(f"stationary solution at m={m}: formulas agree to {gap:.3e}")
    return spectral


def stationarity_residual(a: Field, m: float, f: Field, u_hat: Field) -> float:
    """sup |L0 u_hat - m u_hat + f|."""
    lhs = resolvent.apply_generator(a, u_hat).values - m * u_hat.values + f.values
    return float(np.max(np.abs(lhs)))


def source_tail_alpha(source: SourceSpec, f: Field, window=None) -> float:
    """alpha_1 in f ~ |x|^{-(d+alpha_1)}; inf for compactly supported or exponentially decaying sources."""
    if source.kind == SourceKind.polynomial:
        return float(source.alpha)
    if source.kind == SourceKind.constant:
        raise ParameterError("a constant source has no tail")
    if source.kind != SourceKind.tabulated:
        return np.inf
    try:
        fit = asymptotics.fit_polynomial_tail(f, window)
    except FitError:
        return np.inf
    if not fit.passed or fit.fitted <= f.grid.dim:
        return np.inf
    return fit.fitted - f.grid.dim


def stationary_tail_report(u_hat: Field, spec: KernelSpec, source: SourceSpec, f: Field, window=None,
                           tolerances: dict = None) -> TailReport:
    """u_hat decays like |x|^{-(d + min(alpha_1, alpha))} when either tail is polynomial."""
    tolerances = tolerances or {}
    d = u_hat.grid.dim
    tc = kernels.tail_class(spec)
    alpha = tc.alpha if tc.kind == TailKind.polynomial else np.inf
    alpha_1 = source_tail_alpha(source, f, window)
    effective = min(alpha, alpha_1)
    if not np.isfinite(effective):
        report = TailReport(name="stationary_tail", model="exponential")
        report.notes.append("neither kernel nor source has a polynomial tail")
        return report

    power = d + effective
    report = asymptotics.fit_polynomial_tail(u_hat, window)
    report.name = "stationary_tail"
    tol = float(tolerances.get("stationary_exponent_tol", const.DEFAULT_TOLERANCES["stationary_exponent_tol"]))
    report.checks.append(
        Check(name="stationary_tail_exponent", measured=report.fitted, bound=tol,
              passed=abs(report.fitted - power) <= tol, note=f"expected {power:g}")
    )
    report.data = {"alpha_kernel": alpha, "alpha_source": alpha_1, "expected_exponent": power}
    return report


def evolve_exact(a: Field, m: float, f: Field, t: float) -> Field:
    _check_m(m)
    if t < 0:
        raise ParameterError(f"t must be nonnegative, got {t}")
    grid_service.check_same_grid(a, f)
    if t == 0:
        return f.like(np.zeros(a.grid.shape))
    s = _decay_symbol(a, m)
    u_hat = grid_service.transform(f).values * (-np.expm1(-s * t)) / s
    return grid_service.inverse_transform(SpectralField(grid=a.grid, values=u_hat))


def snapshot_steps(n_steps: int, levels: int = 6) -> List[int]:
    """Step indices of t_end * 2^-k, k = levels..0, plus the initial step."""
    steps = {0, n_steps}
    for k in range(levels, 0, -1):
        step = int(round(n_steps * 2.0 ** (-k)))
        if step > 0:
            steps.add(step)
    return sorted(steps)


def evolve_stepped(
    a: Field,
    m: float,
    f: Field,
    t_end: float,
    dt: float,
    output_steps: Optional[Sequence[int]] = None,
) -> EvolutionTrace:
    """Classical RK4 on the semidiscrete system u' = a*u - (1+m) u + f."""
    _check_m(m)
    grid_service.check_same_grid(a, f)
    if not dt > 0 or dt * (2 + m) > 0.5:
        raise ParameterError(f"dt={dt} violates dt*(2+m) <= 0.5 for m={m}")
    n_steps = int(round(t_end / dt))
    if n_steps < 1 or abs(n_steps * dt - t_end) > 1e-9 * max(t_end, 1.0):
        raise ParameterError(f"t_end={t_end} is not a whole number of steps dt={dt}")

    grid = a.grid
    a_hat = grid_service.transform(a).values
    source = f.values
    wanted = set(output_steps) if output_steps is not None else set(snapshot_steps(n_steps))
    wanted.update({0, n_steps})

    def rhs(u: np.ndarray) -> np.ndarray:
        spectrum = a_hat * grid_service.transform(Field(grid=grid, values=u)).values
        conv = grid_service.inverse_transform(SpectralField(grid=grid, values=spectrum)).values
        return conv - (1 + m) * u + source

    u = np.zeros(grid.shape)
    times, snapshots = [0.0], [Field(grid=grid, values=u)]
    for step in range(1, n_steps + 1):
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * dt * k1)
        k3 = rhs(u + 0.5 * dt * k2)
        k4 = rhs(u + dt * k3)
        u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if step in wanted:
            times.append(step * dt)
            snapshots.append(Field(grid=grid, values=u))
    logger.debug(f"rk4: {n_steps} steps of dt={dt}, {len(times)} snapshots")
    return EvolutionTrace(times=times, snapshots=snapshots, m=m, f=f, dt=dt)


def comparison_report(trace: EvolutionTrace, u_hat: Field, tolerances: dict = None) -> Report:
    tolerances = tolerances or {}
    slack = float(tolerances.get("comparison_slack", const.DEFAULT_TOLERANCES["comparison_slack"]))
    factor = float(tolerances.get("envelope_factor", const.DEFAULT_TOLERANCES["envelope_factor"]))
    grid_service.check_same_grid(u_hat, trace.f, *trace.snapshots)

    f_sup = trace.f.sup()
    below, above, drop = 0.0, 0.0, 0.0
    sup_dist, l2_dist, envelope_ratio = [], [], 0.0
    for i, (t, u) in enumerate(zip(trace.times, trace.snapshots)):
        below = max(below, -u.min())
        above = max(above, float(np.max(u.values - u_hat.values)))
        if i:
            drop = max(drop, float(np.max(trace.snapshots[i - 1].values - u.values)))
        dist = float(np.max(np.abs(u.values - u_hat.values)))
        sup_dist.append(dist)
        l2_dist.append(float(np.sqrt(grid_service.integrate(u.like((u.values - u_hat.values) ** 2)))))
        envelope = np.exp(-trace.m * t) * f_sup / trace.m
        if envelope > 0:
            envelope_ratio = max(envelope_ratio, float(dist / envelope))

    checks = [
        Check(name="comparison_nonnegative", measured=-below, bound=-slack, passed=below <= slack),
        Check(name="comparison_below_stationary", measured=above, bound=slack, passed=above <= slack),
        Check(name="monotone_in_time", measured=drop, bound=slack, passed=drop <= slack),
        Check(name="exponential_envelope", measured=envelope_ratio, bound=factor, passed=envelope_ratio <= factor),
    ]
    return Report(
        name="comparison",
        checks=checks,
        data={"times": list(trace.times), "sup_distance": sup_dist, "l2_distance": l2_dist},
    )


def write_trace(trace: EvolutionTrace, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    for i, u in enumerate(trace.snapshots):
        grid_service.write_field_csv(u, os.path.join(out_dir, f"snapshot_{i:03d}.csv"))
    return utils.write_json(os.path.join(out_dir, "manifest.json"), trace.manifest())
