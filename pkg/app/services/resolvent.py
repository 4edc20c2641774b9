"""Resolvent kernel G_lambda = sum_{k>=1} a^{*k} (1+lambda)^{-k} and convolution powers."""

import math
import os
from typing import List

import numpy as np
from loguru import logger

from app.config import config
from app.models.exception import ConvergenceError, NegativeValueError, ParameterError
from app.models.field import Field, SpectralField
from app.models.schema import Check, ResolventMethod, ResolventResult, Report
from app.services import grid as grid_service
from app.utils import utils


def negative_tolerance() -> float:
    return float(config.numerics.get("negative_tolerance", 1e-10))


def check_nonnegative(f: Field, what: str = "field") -> Field:
    low = f.min()
    if low < -negative_tolerance():
        raise NegativeValueError(f"{what} has value {low:.3e} below -{negative_tolerance()}", data={"min": low})
    return f


def convolve(a: Field, u: Field) -> Field:
    grid_service.check_same_grid(a, u)
    product = grid_service.transform(a).values * grid_service.transform(u).values
    return grid_service.inverse_transform(SpectralField(grid=a.grid, values=product))


def apply_generator(a: Field, u: Field) -> Field:
    return u.like(convolve(a, u).values - u.values)


def kernel_power(a: Field, k: int) -> Field:
    if int(k) != k or k < 1:
        raise ParameterError(f"k must be a positive integer, got {k}")
    if k == 1:
        return a
    spectrum = grid_service.transform(a).values ** int(k)
    out = grid_service.inverse_transform(SpectralField(grid=a.grid, values=spectrum))
    return check_nonnegative(out, f"a_{k}")


def _check_lambda(lam: float):
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")


def resolvent_kernel_spectral(a: Field, lam: float) -> ResolventResult:
    _check_lambda(lam)
    a_hat = grid_service.transform(a).values
    g_hat = a_hat / (1 + lam - a_hat)
    g = grid_service.inverse_transform(SpectralField(grid=a.grid, values=g_hat))
    check_nonnegative(g, f"G_{lam}")
    logger.debug(f"spectral resolvent at lambda={lam}: G(0)={g.values[a.grid.shape[0] // 2]!r}")
    return ResolventResult(lam=lam, g=g, method=ResolventMethod.spectral, terms=None, truncation_bound=0.0)


def neumann_terms(sup_a: float, lam: float, tol: float) -> int:
    """Smallest K with sup_a (1+lam)^{-K} / lam <= tol."""
    _check_lambda(lam)
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    cap = int(config.numerics.get("neumann_max_terms", 1_000_000))
    ratio = sup_a / (lam * tol)
    if ratio <= 1:
        return 1
    k = math.ceil(math.log(ratio) / math.log1p(lam))
    if k > cap:
        raise ConvergenceError(
            f"lambda too small for requested tol: {k} terms needed, cap is {cap}",
            data={"lambda": lam, "tol": tol, "terms": k},
        )
    return max(k, 1)


def resolvent_kernel_neumann(a: Field, lam: float, tol: float) -> ResolventResult:
    sup_a = a.sup()
    terms = neumann_terms(sup_a, lam, tol)
    bound = sup_a * (1 + lam) ** (-terms) / lam

    # running sum of a^{*k} (1+lam)^{-k} over physical fields, one convolution per term
    term = a.like(a.values / (1 + lam))
    total = np.array(term.values)
    for _ in range(terms - 1):
        term = term.like(convolve(a, term).values / (1 + lam))
        total += term.values
    g = a.like(total)
    check_nonnegative(g, f"Neumann G_{lam}")
    logger.debug(f"neumann resolvent at lambda={lam}: K={terms}, bound={bound:.3e}")
    return ResolventResult(lam=lam, g=g, method=ResolventMethod.neumann, terms=terms, truncation_bound=bound)


def kernel_power_bound_report(a: Field, alpha: float, ks: List[int], r_max: float) -> Report:
    """sup_{|x|<=r_max} a_k(x) (1+|x|/k)^{d+alpha} / k must not grow with k."""
    grid = a.grid
    if r_max > grid.extent / 4:
        raise ParameterError(f"r_max {r_max} outside the interior (L/4 = {grid.extent / 4})")
    r = grid.radius()
    inside = r <= r_max
    a_hat = grid_service.transform(a).values
    ratios = []
    for k in ks:
        if k == 1:
            ak = a.values
        else:
            ak = grid_service.inverse_transform(SpectralField(grid=grid, values=a_hat**k)).values
        ratio = float(np.max(ak[inside] * (1 + r[inside] / k) ** (grid.dim + alpha) / k))
        ratios.append(ratio)
    base = ratios[ks.index(1)] if 1 in ks else ratios[0]
    worst = max(ratios)
    checks = [Check(name="kernel_power_bound_k_uniform", measured=worst, bound=1.1 * base, passed=worst <= 1.1 * base)]
    return Report(name="kernel_power_bound", checks=checks, data={"k": list(ks), "ratio": ratios})


def write_resolvent(result: ResolventResult, out_dir: str, stem: str = "") -> str:
    stem = stem or f"resolvent_{result.method.value}_lambda_{result.lam:g}"
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    grid_service.write_field_csv(result.g, csv_path)
    utils.write_json(os.path.join(out_dir, f"{stem}.json"), result.sidecar())
    return csv_path
