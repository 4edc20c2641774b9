import json
import os

import numpy as np
import pytest

from app.models.exception import ConvergenceError, NegativeValueError, ParameterError
from app.models.schema import KernelSpec
from app.services import grid as grid_service
from app.services import kernels, resolvent


def _center(grid):
    return grid.points_per_axis // 2


def test_kernel_preserves_constants(laplace_kernel, fine_grid):
    one = grid_service.constant(fine_grid)
    assert np.max(np.abs(resolvent.convolve(laplace_kernel, one).values - 1)) < 1e-12
    assert np.max(np.abs(resolvent.apply_generator(laplace_kernel, one).values)) < 1e-12


def test_convolving_with_a_shifted_node_shifts(laplace_kernel, fine_grid):
    delta = grid_service.node_indicator(fine_grid, _center(fine_grid) + 5)
    delta = delta.like(delta.values / fine_grid.spacing)
    shifted = resolvent.convolve(delta, laplace_kernel)
    assert np.max(np.abs(shifted.values - np.roll(laplace_kernel.values, 5))) < 1e-12


def test_generator_is_linear(laplace_kernel, fine_grid):
    rng = np.random.default_rng(3)
    u = grid_service.sample(fine_grid, lambda x: rng.random(x.shape))
    v = grid_service.sample(fine_grid, lambda x: rng.random(x.shape))
    lhs = resolvent.apply_generator(laplace_kernel, u.like(2 * u.values - 3 * v.values)).values
    rhs = 2 * resolvent.apply_generator(laplace_kernel, u).values - 3 * resolvent.apply_generator(laplace_kernel, v).values
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_kernel_powers(laplace_kernel, fine_grid):
    assert resolvent.kernel_power(laplace_kernel, 1) is laplace_kernel
    a2 = resolvent.kernel_power(laplace_kernel, 2)
    # (a*a)(0) = int a^2 = delta/4
    assert a2.values[_center(fine_grid)] == pytest.approx(0.25, abs=1e-5)
    assert grid_service.integrate(resolvent.kernel_power(laplace_kernel, 5)) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ParameterError):
        resolvent.kernel_power(laplace_kernel, 0)


@pytest.mark.parametrize("lam", [1.0, 0.5])
def test_spectral_resolvent_matches_closed_form(laplace_kernel, fine_grid, lam):
    # G(x) = e^{-q|x|} / (2 (1+lam) q) with q = sqrt(lam/(1+lam)) for delta = 1
    g = resolvent.resolvent_kernel_spectral(laplace_kernel, lam).g
    q = np.sqrt(lam / (1 + lam))
    x = np.abs(fine_grid.axis())
    inside = x <= 8
    exact = np.exp(-q * x[inside]) / (2 * (1 + lam) * q)
    assert np.max(np.abs(g.values[inside] / exact - 1)) < 1e-3
    if lam == 1.0:
        assert g.values[_center(fine_grid)] == pytest.approx(0.353553, abs=1e-4)


@pytest.fixture(scope="module")
def tabulated_kernel(fine_grid):
    values = grid_service.sample(fine_grid, lambda x: 0.25 * np.exp(-np.abs(x) / 2))
    return kernels.sample_kernel(KernelSpec(family="tabulated", values=values), fine_grid)


@pytest.mark.parametrize("kernel", ["laplace_kernel", "polynomial_kernel", "gaussian_kernel", "tabulated_kernel"])
def test_mass_identity(request, kernel):
    a = request.getfixturevalue(kernel)
    for lam in np.geomspace(0.02, 2.0, 10):
        g = resolvent.resolvent_kernel_spectral(a, lam).g
        assert abs(lam * grid_service.integrate(g) - 1) <= 1e-8


def test_resolvent_is_nonnegative_and_monotone_in_lambda(laplace_kernel):
    g_small = resolvent.resolvent_kernel_spectral(laplace_kernel, 0.5).g
    g_large = resolvent.resolvent_kernel_spectral(laplace_kernel, 1.0).g
    assert g_small.min() >= -1e-10
    assert np.all(g_small.values >= g_large.values - 1e-10)


def test_lambda_must_be_positive(laplace_kernel):
    with pytest.raises(ParameterError):
        resolvent.resolvent_kernel_spectral(laplace_kernel, 0.0)


def test_neumann_term_count():
    assert resolvent.neumann_terms(0.5, 1.0, 1e-8) == 26
    with pytest.raises(ConvergenceError):
        resolvent.neumann_terms(0.5, 1e-9, 1e-12)


@pytest.mark.parametrize(
    "spec,extent",
    [
        (KernelSpec(family="laplace", delta=1.0), 40.0),
        (KernelSpec(family="gaussian", sigma=1.0), 40.0),
        (KernelSpec(family="polynomial", alpha=1.0), 400.0),
    ],
)
@pytest.mark.parametrize("lam", [1.0, 0.2, 0.05])
def test_neumann_agrees_with_spectral(spec, extent, lam):
    grid = grid_service.make_grid(1, extent, 4096)
    a = kernels.sample_kernel(spec, grid)
    tol = 1e-8
    spectral = resolvent.resolvent_kernel_spectral(a, lam)
    neumann = resolvent.resolvent_kernel_neumann(a, lam, tol)
    assert neumann.terms == resolvent.neumann_terms(a.sup(), lam, tol)
    assert neumann.truncation_bound <= tol
    assert np.max(np.abs(neumann.g.values - spectral.g.values)) <= tol + 1e-10


def test_negative_values_are_refused(fine_grid):
    f = grid_service.constant(fine_grid, -1e-6)
    with pytest.raises(NegativeValueError):
        resolvent.check_nonnegative(f)
    assert resolvent.check_nonnegative(f.like(np.full(fine_grid.shape, -1e-12))) is not None


def test_kernel_power_bound_is_uniform_in_k(polynomial_kernel):
    report = resolvent.kernel_power_bound_report(polynomial_kernel, 1.0, [1, 2, 5, 10, 20], r_max=100.0)
    assert report.passed
    assert len(report.data["ratio"]) == 5
    with pytest.raises(ParameterError):
        resolvent.kernel_power_bound_report(polynomial_kernel, 1.0, [1, 2], r_max=150.0)


def test_write_resolvent(tmp_path, laplace_kernel):
    result = resolvent.resolvent_kernel_neumann(laplace_kernel, 1.0, 1e-8)
    csv_path = resolvent.write_resolvent(result, str(tmp_path))
    assert os.path.basename(csv_path) == "resolvent_neumann_lambda_1.csv"
    with open(csv_path[:-4] + ".json", encoding="utf-8") as fp:
        sidecar = json.load(fp)
    assert sidecar["K"] == result.terms
    assert sidecar["method"] == "neumann"
    back = grid_service.read_field_csv(csv_path)
    assert np.array_equal(back.values, result.g.values)
