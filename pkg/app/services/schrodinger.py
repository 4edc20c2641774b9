"""Principal eigenpair of L = L0 + V for compactly supported 0 <= V <= 1."""

import itertools
import os
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from loguru import logger

from app.config import config
from app.models.exception import ConvergenceError, GridMismatchError, ParameterError
from app.models.field import Field, Grid
from app.models.schema import (
    Check,
    DecayCase,
    GroundState,
    KernelSpec,
    Potential,
    PotentialProfile,
    Report,
    TailKind,
    TailReport,
)
from app.services import asymptotics, kernels, resolvent
from app.services import grid as grid_service
from app.utils import utils

# dense matrices are built for at most this many nodes
DENSE_MAX_NODES = 1024


def potential_values(potential: Potential, grid: Grid) -> Field:
    r = grid.radius()
    R = potential.support_radius
    if potential.profile == PotentialProfile.box:
        values = np.where(r <= R, potential.height, 0.0)
    elif potential.profile == PotentialProfile.bump:
        values = np.where(r <= R, potential.height * (1 - (r / R) ** 2) ** 2, 0.0)
    else:
        field = potential.values if potential.values is not None else grid_service.read_field_csv(potential.path)
        if field.grid != grid:
            raise GridMismatchError(f"tabulated potential lives on {field.grid}, requested {grid}")
        values = np.array(field.values)
        if np.any(values[r > R] != 0):
            raise ParameterError(f"tabulated potential is not supported in |x| <= {R}")
    if values.min() < 0 or values.max() > 1:
        raise ParameterError(f"potential must satisfy 0 <= V <= 1, got [{values.min()}, {values.max()}]")
    return Field(grid=grid, values=values)


def _apply(a: Field, v: np.ndarray, psi: np.ndarray) -> np.ndarray:
    return resolvent.convolve(a, a.like(psi)).values + v * psi


def principal_eigenpair(a: Field, potential: Potential, tol: float, start: Optional[Field] = None) -> GroundState:
    """Power iteration on A = S_a + V; lambda = mu - 1 for the converged Rayleigh quotient mu."""
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    grid = a.grid
    v = potential_values(potential, grid).values
    support = grid.radius() <= potential.support_radius
    edge = 1 + 10 * tol

    if start is not None:
        grid_service.check_same_grid(a, start)
        psi = np.array(start.values, dtype=float)
    else:
        psi = np.where(v > 0, 1.0, 0.0) if np.any(v > 0) else np.where(support, 1.0, 0.0)
    if not np.any(psi > 0):
        raise ParameterError("start vector has no positive entry")
    psi = psi / np.max(psi)

    if not np.any(v > 0):
        logger.info("potential vanishes on the grid: no eigenvalue above the edge")
        return GroundState(lam=0.0, psi=Field(grid=grid, values=psi), iterations=0, residual=0.0, edge_detected=True)

    max_iterations = int(config.numerics.get("eigen_max_iterations", 100_000))
    rayleigh = []
    mu = 0.0
    for it in range(1, max_iterations + 1):
        a_psi = _apply(a, v, psi)
        mu = float(np.dot(psi.ravel(), a_psi.ravel()) / np.dot(psi.ravel(), psi.ravel()))
        rayleigh.append(mu)
        residual = float(np.max(np.abs(a_psi - mu * psi)))

        if residual <= tol:
            break
        if np.all(psi > 0) and float(np.max(a_psi / psi)) <= edge:
            logger.info(f"Collatz-Wielandt bound below {edge} after {it} iterations: edge")
            break
        psi = a_psi / np.max(a_psi)
        if it % 1000 == 0:
            logger.debug(f"power iteration {it}: mu={mu:.14f}, residual={residual:.3e}")
    else:
        raise ConvergenceError(
            f"power iteration did not converge in {max_iterations} iterations, last Rayleigh quotient {mu!r}",
            data={"rayleigh": mu},
        )

    edge_detected = mu <= edge
    if edge_detected:
        logger.info(f"mu={mu:.12f} within 10*tol of the edge: no ground state")
    else:
        logger.info(f"ground state: lambda={mu - 1:.12f} after {it} iterations, residual {residual:.3e}")
    return GroundState(
        lam=mu - 1,
        psi=Field(grid=grid, values=psi),
        iterations=it,
        residual=residual,
        edge_detected=edge_detected,
        rayleigh=rayleigh,
    )


def operator_matrix(a: Field, potential: Potential) -> np.ndarray:
    """Dense matrix of A = S_a + V on a coarse grid."""
    grid = a.grid
    if grid.size > DENSE_MAX_NODES:
        raise ParameterError(f"dense matrix needs at most {DENSE_MAX_NODES} nodes, grid has {grid.size}")
    n = grid.points_per_axis
    # entry k of the shifted sample is a at displacement k*h (mod L)
    shifted = grid.cell_volume * np.fft.ifftshift(a.values)
    if grid.dim == 1:
        matrix = scipy.linalg.circulant(shifted)
    else:
        offset = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
        matrix = shifted[offset[:, None, :, None], offset[None, :, None, :]].reshape(grid.size, grid.size)
    return matrix + np.diag(potential_values(potential, grid).ravel())


def dense_eigenpair(a: Field, potential: Potential) -> GroundState:
    matrix = operator_matrix(a, potential)
    eigenvalues, eigenvectors = scipy.linalg.eigh(matrix)
    mu = float(eigenvalues[-1])
    vec = eigenvectors[:, -1]
    vec = vec if vec.sum() >= 0 else -vec
    vec = vec / np.max(vec)
    residual = float(np.max(np.abs(matrix @ vec - mu * vec)))
    return GroundState(
        lam=mu - 1,
        psi=Field(grid=a.grid, values=vec),
        iterations=0,
        residual=residual,
        edge_detected=mu <= 1 + 1e-12,
    )


def groundstate_residual(a: Field, potential: Potential, gs: GroundState) -> float:
    """sup |psi - (1+lambda)^{-1}(F + G_lambda * F)| with F = V psi."""
    if gs.edge_detected:
        raise ParameterError("no ground state: edge detected")
    if not gs.lam > 0:
        raise ParameterError(f"lambda must be positive, got {gs.lam}")
    psi = gs.psi
    grid_service.check_same_grid(a, psi)
    F = psi.like(potential_values(potential, a.grid).values * psi.values)
    g = resolvent.resolvent_kernel_spectral(a, gs.lam).g
    rhs = (F.values + resolvent.convolve(g, F).values) / (1 + gs.lam)
    return float(np.max(np.abs(psi.values - rhs)))


def groundstate_tail_report(
    gs: GroundState,
    spec: KernelSpec,
    window=None,
    tolerances: dict = None,
) -> TailReport:
    if gs.edge_detected:
        raise ParameterError("no ground state: edge detected")
    tolerances = tolerances or {}
    psi = gs.psi
    grid = psi.grid
    tc = kernels.tail_class(spec)

    if tc.kind == TailKind.polynomial:
        power = grid.dim + tc.alpha
        report = asymptotics.fit_polynomial_tail(psi, window)
        tol = float(tolerances.get("exponent_tol", 0.15))
        report.checks.append(
            Check(name="groundstate_exponent", measured=report.fitted, bound=tol, passed=abs(report.fitted - power) <= tol,
                  note=f"expected {power:g}")
        )
        return report

    if tc.kind == TailKind.super_exponential or grid.dim != 1:
        report = TailReport(name="groundstate_tail", model="exponential")
        report.notes.append(f"{tc.kind.value} tail in dim {grid.dim}: out of theorem scope")
        report.checks.append(Check(name="groundstate_scope", informational=True, note="out of theorem scope"))
        return report

    root = asymptotics.solve_decay_rate(spec, gs.lam)
    reference = root.q if root.case == DecayCase.pure_imaginary_root else root.c
    window = window or asymptotics.exponential_window(grid, reference)
    report = asymptotics.fit_exponential_tail(psi, window)
    if root.case == DecayCase.pure_imaginary_root:
        tol = float(tolerances.get("rate_rel_tol", 0.03))
        err = abs(report.fitted - root.q) / root.q
        report.checks.append(Check(name="groundstate_rate", measured=err, bound=tol, passed=err <= tol,
                                   note=f"q(lambda)={root.q:.8f}"))
    else:
        band = 0.05 * root.c
        report.checks.append(
            Check(name="groundstate_rate_band", measured=report.fitted, bound=band,
                  passed=abs(report.fitted - root.c) <= band, informational=True)
        )
    return report


def existence_scan(a: Field, heights: Sequence[float], radii: Sequence[float], tol: float) -> Report:
    """Ground-state existence over box potentials of height beta and radius R."""
    pairs = list(itertools.product(heights, radii))

    def one(pair):
        beta, radius = pair
        gs = principal_eigenpair(a, Potential(support_radius=radius, height=beta), tol)
        return {"height": beta, "radius": radius, "lambda": gs.lam, "edge_detected": gs.edge_detected,
                "iterations": gs.iterations}

    rows = utils.parallel_map(one, pairs)
    report = Report(name="existence_scan", data={"rows": rows})
    # V = 1 on an open set forces a ground state once the set holds grid nodes
    full = [row for row in rows if row["height"] >= 1 and row["radius"] > a.grid.spacing]
    if full:
        found = all(not row["edge_detected"] for row in full)
        report.checks.append(Check(name="unit_height_has_ground_state", measured=float(sum(not r["edge_detected"] for r in full)),
                                   bound=float(len(full)), passed=found))
    return report


def write_groundstate(gs: GroundState, out_dir: str, stem: str = "groundstate") -> str:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    grid_service.write_field_csv(gs.psi, csv_path)
    utils.write_json(os.path.join(out_dir, f"{stem}.json"), gs.sidecar())
    return csv_path
