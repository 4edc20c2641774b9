import numpy as np
import pytest

from app.models.exception import FitError, ParameterError
from app.models.schema import DecayCase, KernelSpec
from app.services import asymptotics, kernels, resolvent
from app.services import grid as grid_service


def test_polynomial_fit_recovers_exponent():
    grid = grid_service.make_grid(1, 400.0, 4096)
    f = grid_service.sample(grid, lambda x: 3.0 * (1 + np.abs(x)) ** -2)
    report = asymptotics.fit_polynomial_tail(f, (20.0, 60.0))
    assert report.fitted == pytest.approx(2.0, abs=1e-6)
    assert report.amplitude == pytest.approx(3.0, rel=1e-6)
    assert report.rms_residual < 1e-8
    assert report.passed


def test_polynomial_fit_rejects_exponential_data():
    grid = grid_service.make_grid(1, 40.0, 4096)
    f = grid_service.sample(grid, lambda x: np.exp(-np.abs(x)))
    report = asymptotics.fit_polynomial_tail(f, (2.0, 10.0))
    assert report.rms_residual > 0.1
    assert not report.passed


def test_exponential_fit_recovers_rate_and_amplitude():
    grid = grid_service.make_grid(1, 40.0, 4096)
    f = grid_service.sample(grid, lambda x: 0.3 * np.exp(-0.7 * np.abs(x)))
    report = asymptotics.fit_exponential_tail(f, (5.0, 9.0))
    assert report.fitted == pytest.approx(0.7, abs=1e-6)
    assert report.amplitude == pytest.approx(0.3, rel=1e-6)


def test_two_dimensional_fit_uses_shell_averages():
    grid = grid_service.make_grid(2, 100.0, 256)
    f = grid_service.sample(grid, lambda x, y: (1 + np.sqrt(x**2 + y**2)) ** -3)
    report = asymptotics.fit_polynomial_tail(f, (12.5, 25.0))
    assert report.fitted == pytest.approx(3.0, abs=0.01)


def test_fit_window_guards():
    grid = grid_service.make_grid(1, 40.0, 64)
    f = grid_service.sample(grid, lambda x: np.exp(-np.abs(x)))
    with pytest.raises(FitError):
        asymptotics.fit_exponential_tail(f, (5.0, 12.0))
    with pytest.raises(FitError):
        asymptotics.fit_exponential_tail(f, (5.0, 9.0))
    with pytest.raises(FitError):
        asymptotics.fit_exponential_tail(f, (9.0, 5.0))


def test_resolvent_tail_matches_residue(laplace_spec, laplace_kernel):
    g = resolvent.resolvent_kernel_spectral(laplace_kernel, 1.0).g
    report = asymptotics.fit_exponential_tail(g, (5.0, 9.0))
    assert report.fitted == pytest.approx(np.sqrt(0.5), abs=0.01)
    assert report.amplitude == pytest.approx(asymptotics.residue_amplitude(laplace_spec, 1.0), rel=0.05)


def test_decay_rate_closed_forms(laplace_spec, gaussian_spec, polynomial_spec):
    root = asymptotics.solve_decay_rate(laplace_spec, 1.0)
    assert root.case == DecayCase.pure_imaginary_root
    assert root.q == pytest.approx(np.sqrt(0.5), abs=1e-9)
    assert abs(kernels.mgf(laplace_spec, root.q) - 2.0) <= 2e-10

    root = asymptotics.solve_decay_rate(gaussian_spec, 1.0)
    assert root.q == pytest.approx(np.sqrt(2 * np.log(2)), abs=1e-9)

    heavy = asymptotics.solve_decay_rate(polynomial_spec, 1.0)
    assert heavy.case == DecayCase.heavy_tail
    assert heavy.q is None


def test_decay_rate_increases_with_lambda(laplace_spec):
    qs = [asymptotics.solve_decay_rate(laplace_spec, lam).q for lam in np.geomspace(0.02, 2.0, 8)]
    assert all(lo < hi for lo, hi in zip(qs, qs[1:]))
    assert all(q < 1.0 for q in qs)


def test_residue_amplitude(laplace_spec):
    # C = delta^2 / (2 (1+lam) q) for the laplace kernel
    q = np.sqrt(0.5)
    assert asymptotics.residue_amplitude(laplace_spec, 1.0) == pytest.approx(1 / (4 * q), rel=1e-9)
    with pytest.raises(ParameterError):
        asymptotics.residue_amplitude(KernelSpec(family="polynomial", alpha=1.0), 1.0)


def test_decay_rate_guards(laplace_spec):
    with pytest.raises(ParameterError):
        asymptotics.solve_decay_rate(laplace_spec, 0.0)
    with pytest.raises(ParameterError):
        asymptotics.solve_decay_rate(KernelSpec(family="laplace", delta=1.0, dim=2), 1.0)


def test_decay_rate_of_tabulated_kernel():
    grid = grid_service.make_grid(1, 200.0, 16384)
    values = grid_service.sample(grid, lambda x: 0.5 * np.exp(-np.abs(x)))
    spec = KernelSpec(family="tabulated", values=values)
    root = asymptotics.solve_decay_rate(spec, 1.0)
    assert root.case == DecayCase.pure_imaginary_root
    assert root.c == pytest.approx(1.0, abs=1e-6)
    assert root.q == pytest.approx(np.sqrt(0.5), abs=1e-3)


def test_exponential_window():
    grid = grid_service.make_grid(1, 400.0, 1024)
    assert asymptotics.exponential_window(grid, 0.5) == (18.0, 36.0)
    assert asymptotics.exponential_window(grid, 0.1) == (50.0, 100.0)


def test_polynomial_resolvent_tail_exponent(polynomial_kernel_huge):
    g = resolvent.resolvent_kernel_spectral(polynomial_kernel_huge, 0.5).g
    report = asymptotics.fit_polynomial_tail(g)
    assert report.window == (500.0, 1000.0)
    assert report.fitted == pytest.approx(2.0, abs=0.05)


def test_polynomial_theorem_sweep(polynomial_spec, huge_grid):
    report = asymptotics.verify_polynomial_theorem(polynomial_spec, [0.05, 0.4, 0.1, 0.2], huge_grid)
    assert report.lambda_grid == [0.4, 0.2, 0.1, 0.05]
    assert report.passed, report.failed_checks()
    names = [c.name for c in report.checks]
    assert "lower_bound_lambda_uniform" in names
    assert "upper_amplitude_slope" in names
    exponents = [c for c in report.checks if c.name.startswith("tail_exponent")]
    assert len(exponents) == 4
    assert not any(c.informational for c in exponents)
    assert all(c.passed for c in exponents)


def test_polynomial_theorem_fails_when_the_window_is_too_close(polynomial_spec):
    # at small lambda the window sits in the pre-asymptotic bulk and the exponent drifts below 2
    grid = grid_service.make_grid(1, 400.0, 16384)
    report = asymptotics.verify_polynomial_theorem(polynomial_spec, [0.4, 0.05], grid, (20.0, 60.0))
    assert not report.passed
    assert "tail_exponent_lambda_0.05" in report.failed_checks()


def test_theorem_sweeps_refuse_wrong_class(laplace_spec, polynomial_spec, fine_grid, wide_grid):
    with pytest.raises(ParameterError):
        asymptotics.verify_polynomial_theorem(laplace_spec, [1.0], fine_grid)
    with pytest.raises(ParameterError):
        asymptotics.verify_exponential_theorem(polynomial_spec, [1.0], wide_grid)
    with pytest.raises(ParameterError):
        asymptotics.verify_exponential_theorem(laplace_spec, [0.01], fine_grid)


def test_exponential_theorem_single_lambda(laplace_spec, fine_grid):
    report = asymptotics.verify_exponential_theorem(laplace_spec, [1.0], fine_grid)
    assert report.passed, report.failed_checks()
    assert any("single lambda" in note for note in report.notes)


@pytest.mark.slow
def test_exponential_theorem_sweep(laplace_spec):
    grid = grid_service.make_grid(1, 400.0, 16384)
    report = asymptotics.verify_exponential_theorem(laplace_spec, [0.2, 0.1, 0.05, 0.02], grid)
    assert report.passed, report.failed_checks()
    slope = next(c for c in report.checks if c.name == "sqrt_lambda_slope")
    assert slope.measured == pytest.approx(0.5, abs=0.05)
