import json
import os
from os import path
from typing import List

import numpy as np
from loguru import logger

from app.config import add_run_log
from app.models import const
from app.models.exception import ConvergenceError, JumpgenException
from app.models.field import Field
from app.models.schema import (
    Check,
    ExperimentConfig,
    KernelFamily,
    Potential,
    Report,
    SourceKind,
    TailKind,
    WalkConfig,
)
from app.services import asymptotics, evolution, kernels, mc_oracle, resolvent, schrodinger
from app.services import grid as grid_service
from app.services import state as sm
from app.utils import utils


def plot_profile(f: Field, out_dir: str, name: str) -> str:
    """Two-column plot data (radius vs value) with the log columns precomputed."""
    grid = f.grid
    if grid.dim == 1:
        x, values = grid.axis(), f.values
    else:
        x, values, _ = asymptotics.radial_profile(f, (0.0, grid.extent / 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        log_x = np.log1p(np.abs(x))
        log_v = np.where(values > 0, np.log(np.where(values > 0, values, 1.0)), np.nan)
    target = path.join(utils.output_dir(out_dir, "plot_data"), f"{name}.csv")
    return utils.write_columns_csv(target, ["x", "value", "log1p_abs_x", "log_value"], [x, values, log_x, log_v])


def merge_reports(name: str, reports: List[Report]) -> Report:
    merged = Report(name=name)
    for report in reports:
        merged.checks.extend(report.checks)
        merged.notes.extend(report.notes)
        merged.lambda_grid.extend(x for x in report.lambda_grid if x not in merged.lambda_grid)
        if report.window is not None and merged.window is None:
            merged.window = report.window
        merged.data[report.name] = report.data
    return merged


def write_report(report: Report, out_dir: str, name: str = "report") -> str:
    """Write the report JSON, refusing documents that break schema/report.json."""
    target = path.join(out_dir, f"{name}.json")
    content = utils.to_json(report.to_dict())
    errors = utils.schema_errors(json.loads(content), "report.json")
    if errors:
        raise JumpgenException(f"report {target} violates its schema: {errors[0].message}")
    utils.write_json(target, report.to_dict())
    logger.info(f"report written: {target}")
    return target


def _lower_bound_window_warning(cfg: ExperimentConfig, report: Report):
    spec = cfg.kernel
    if spec.family != KernelFamily.polynomial:
        return
    for lam in cfg.lambdas:
        start = lam ** (-(spec.alpha + 1) / spec.alpha)
        if start > cfg.grid.extent / 4:
            message = f"lambda={lam}: lower-bound window start {start:.3g} exceeds L/4={cfg.grid.extent / 4:g}"
            logger.warning(message)
            report.notes.append(message)


def run_resolvent(run_id: str, cfg: ExperimentConfig, out_dir: str) -> Report:
    logger.info("\n\n## computing resolvent kernels")
    grid = grid_service.make_grid(cfg.grid.dim, cfg.grid.extent, cfg.grid.points_per_axis)
    a = kernels.sample_kernel(cfg.kernel, grid)
    tol = cfg.tolerance("neumann_tol")
    lambdas = sorted(cfg.lambdas)
    report = Report(name="resolvent", lambda_grid=lambdas)
    _lower_bound_window_warning(cfg, report)

    def one(lam):
        spectral = resolvent.resolvent_kernel_spectral(a, lam)
        try:
            neumann = resolvent.resolvent_kernel_neumann(a, lam, tol)
        except ConvergenceError as e:
            neumann = None
            report.notes.append(f"lambda={lam}: neumann skipped ({e.message})")
        return spectral, neumann

    results = utils.parallel_map(one, lambdas)
    sm.state.update_run(run_id, progress=60)

    fields_dir = utils.output_dir(out_dir, "fields")
    previous = None
    for lam, (spectral, neumann) in zip(lambdas, results):
        g = spectral.g
        resolvent.write_resolvent(spectral, fields_dir)
        plot_profile(g, out_dir, f"resolvent_lambda_{lam:g}")
        gap = abs(lam * grid_service.integrate(g) - 1)
        report.checks.append(Check(name=f"mass_identity_lambda_{lam:g}", measured=gap, bound=1e-8, passed=gap <= 1e-8))
        if neumann is not None:
            resolvent.write_resolvent(neumann, fields_dir)
            diff = float(np.max(np.abs(neumann.g.values - g.values)))
            report.checks.append(
                Check(name=f"neumann_agreement_lambda_{lam:g}", measured=diff, bound=tol + 1e-10, passed=diff <= tol + 1e-10)
            )
        if previous is not None:
            # lambdas ascend, so G must not grow
            growth = float(np.max(g.values - previous.values))
            report.checks.append(
                Check(name=f"monotone_in_lambda_{lam:g}", measured=growth, bound=1e-10, passed=growth <= 1e-10)
            )
        previous = g
        logger.info(f"lambda={lam}: G(0)={g.values[(grid.points_per_axis // 2,) * grid.dim]:.10f}")
    return report


def run_groundstate(run_id: str, cfg: ExperimentConfig, out_dir: str) -> Report:
    logger.info("\n\n## solving for the ground state")
    grid = grid_service.make_grid(cfg.grid.dim, cfg.grid.extent, cfg.grid.points_per_axis)
    a = kernels.sample_kernel(cfg.kernel, grid)
    potential: Potential = cfg.potential
    gs = schrodinger.principal_eigenpair(a, potential, cfg.tolerance("eigen_tol"))
    sm.state.update_run(run_id, progress=60)

    schrodinger.write_groundstate(gs, utils.output_dir(out_dir, "fields"))
    plot_profile(gs.psi, out_dir, "groundstate")
    report = Report(name="groundstate", lambda_grid=[gs.lam], data=gs.sidecar())
    report.checks.append(Check(name="ground_state_found", measured=gs.lam, passed=not gs.edge_detected, informational=True))
    if gs.edge_detected:
        report.notes.append("no eigenvalue above the essential-spectrum edge")
        return report

    residual = schrodinger.groundstate_residual(a, potential, gs)
    report.checks.append(Check(name="resolvent_representation", measured=residual, bound=1e-6, passed=residual <= 1e-6))
    tail = schrodinger.groundstate_tail_report(gs, cfg.kernel, cfg.window, cfg.tolerances)
    return merge_reports("groundstate", [report, tail])


def run_evolve(run_id: str, cfg: ExperimentConfig, out_dir: str) -> Report:
    logger.info("\n\n## evolving the sourced equation")
    grid = grid_service.make_grid(cfg.grid.dim, cfg.grid.extent, cfg.grid.points_per_axis)
    a = kernels.sample_kernel(cfg.kernel, grid)
    m = cfg.m
    f = evolution.source_field(cfg.source, grid)

    u_hat = evolution.stationary_solution(a, m, f, cfg.tolerance("stationary_agreement"))
    trace = evolution.evolve_stepped(a, m, f, cfg.t_end, cfg.dt)
    sm.state.update_run(run_id, progress=60)
    exact = evolution.evolve_exact(a, m, f, trace.times[-1])

    fields_dir = utils.output_dir(out_dir, "fields")
    grid_service.write_field_csv(u_hat, path.join(fields_dir, "stationary.csv"))
    evolution.write_trace(trace, utils.output_dir(out_dir, "trace"))
    plot_profile(u_hat, out_dir, "stationary")
    plot_profile(trace.snapshots[-1], out_dir, "terminal")

    report = evolution.comparison_report(trace, u_hat, cfg.tolerances)
    dt = trace.dt
    bound = 10 * dt**4 * (2 + m) ** 4 * f.sup() * cfg.t_end
    gap = float(np.max(np.abs(trace.snapshots[-1].values - exact.values)))
    report.checks.append(Check(name="stepped_vs_exact", measured=gap, bound=bound, passed=gap <= bound))
    residual = evolution.stationarity_residual(a, m, f, u_hat)
    report.checks.append(Check(name="stationarity_residual", measured=residual, bound=1e-9, passed=residual <= 1e-9))

    if cfg.source.kind == SourceKind.constant:
        return report
    tail = evolution.stationary_tail_report(u_hat, cfg.kernel, cfg.source, f, cfg.window, cfg.tolerances)
    return merge_reports("evolve", [report, tail])


def run_mc_oracle(run_id: str, cfg: ExperimentConfig, out_dir: str) -> Report:
    logger.info("\n\n## running the random-walk oracle")
    mc = cfg.mc
    n_bin = mc.binning_points or cfg.grid.points_per_axis
    binning = grid_service.make_grid(cfg.grid.dim, cfg.grid.extent, n_bin)
    fine = grid_service.make_grid(cfg.grid.dim, cfg.grid.extent, 4 * n_bin)
    a_fine = kernels.sample_kernel(cfg.kernel, fine)
    walk = WalkConfig(spec=cfg.kernel, seed=mc.seed, n_walks=mc.n_walks, binning=binning)
    hist_dir = utils.output_dir(out_dir, "histograms")

    reports = []
    for i, lam in enumerate(cfg.lambdas):
        estimate = mc_oracle.estimate_resolvent_mc(cfg.kernel, lam, walk)
        mc_oracle.write_histogram(estimate, hist_dir, f"mc_lambda_{lam:g}")
        reference = mc_oracle.cell_average(resolvent.resolvent_kernel_spectral(a_fine, lam).g, binning)
        check = mc_oracle.cross_check(
            estimate, reference, radius=3.0, sigma=cfg.tolerance("mc_sigma"), share=cfg.tolerance("mc_cell_share")
        )
        check.name = f"mc_lambda_{lam:g}"
        check.notes.extend(estimate.warnings)
        check.lambda_grid = [lam]
        reports.append(check)
        plot_profile(estimate.estimate, out_dir, f"mc_lambda_{lam:g}")
        sm.state.update_run(run_id, progress=10 + 60 * (i + 1) / len(cfg.lambdas))

    if mc.steps and mc.radii:
        for n in mc.steps:
            reports.append(mc_oracle.walk_tail_report(cfg.kernel, n, walk, mc.radii))
    return merge_reports("mc-oracle", reports)


def run_verify(run_id: str, cfg: ExperimentConfig, out_dir: str) -> Report:
    logger.info("\n\n## verifying the tail theorems")
    grid = grid_service.make_grid(cfg.grid.dim, cfg.grid.extent, cfg.grid.points_per_axis)
    if kernels.tail_class(cfg.kernel).kind == TailKind.polynomial:
        report = asymptotics.verify_polynomial_theorem(
            cfg.kernel, cfg.lambdas, grid, cfg.window, cfg.tolerances
        )
    else:
        report = asymptotics.verify_exponential_theorem(
            cfg.kernel, cfg.lambdas, grid, cfg.window or "auto", cfg.tolerances
        )
    rows = report.data.get("rows", [])
    if rows:
        columns = [k for k, v in rows[0].items() if isinstance(v, (int, float)) or v is None]
        values = [[np.nan if row[k] is None else row[k] for row in rows] for k in columns]
        utils.write_columns_csv(path.join(utils.output_dir(out_dir, "plot_data"), "lambda_sweep.csv"), columns, values)
    return report


_pipelines = {
    const.COMMAND_RESOLVENT: run_resolvent,
    const.COMMAND_GROUNDSTATE: run_groundstate,
    const.COMMAND_EVOLVE: run_evolve,
    const.COMMAND_MC_ORACLE: run_mc_oracle,
    const.COMMAND_VERIFY: run_verify,
}


def start(run_id: str, cfg: ExperimentConfig) -> Report:
    sm.state.update_run(run_id, state=const.RUN_STATE_PROCESSING, progress=5)
    out_dir = utils.output_dir(cfg.output_dir)
    sink = add_run_log(out_dir)
    logger.info(f"\n\n## starting run: {run_id}, command: {cfg.command}")
    try:
        report = _pipelines[cfg.command](run_id, cfg, out_dir)
        write_report(report, out_dir)
        if report.passed:
            logger.success(f"run {run_id} finished, all {len(report.checks)} checks passed")
        else:
            logger.warning(f"run {run_id} finished with failed checks: {report.failed_checks()}")
    except JumpgenException:
        sm.state.update_run(run_id, state=const.RUN_STATE_FAILED)
        raise
    finally:
        logger.remove(sink)

    sm.state.update_run(
        run_id, state=const.RUN_STATE_COMPLETE, progress=100, passed=report.passed, output_dir=out_dir
    )
    return report
