import json
import os

import numpy as np
import pytest

from app.models.exception import ParameterError
from app.models.schema import KernelSpec, Potential
from app.services import grid as grid_service
from app.services import kernels, schrodinger

BOX = Potential(support_radius=1.0, height=1.0)


@pytest.fixture(scope="module")
def box_state(laplace_kernel_coarse):
    return schrodinger.principal_eigenpair(laplace_kernel_coarse, BOX, 1e-10)


def test_power_iteration_matches_dense_oracle(laplace_kernel_coarse, box_state):
    dense = schrodinger.dense_eigenpair(laplace_kernel_coarse, BOX)
    assert not box_state.edge_detected
    assert box_state.lam == pytest.approx(dense.lam, abs=1e-6)
    assert np.max(np.abs(box_state.psi.values - dense.psi.values)) < 1e-4


def test_ground_state_is_positive_and_normalized(box_state):
    psi = box_state.psi
    assert psi.min() > 0
    assert psi.sup() == pytest.approx(1.0, abs=1e-12)
    assert box_state.residual <= 1e-10


def test_rayleigh_quotients_do_not_decrease(box_state):
    rayleigh = np.array(box_state.rayleigh)
    assert np.all(np.diff(rayleigh) >= -1e-13)


def test_rayleigh_bound_for_positive_trials(laplace_kernel_coarse, box_state):
    matrix = schrodinger.operator_matrix(laplace_kernel_coarse, BOX)
    rng = np.random.default_rng(11)
    for _ in range(5):
        trial = rng.random(matrix.shape[0])
        assert trial @ matrix @ trial / (trial @ trial) <= 1 + box_state.lam + 1e-12


def test_resolvent_representation(laplace_kernel_coarse, box_state):
    assert schrodinger.groundstate_residual(laplace_kernel_coarse, BOX, box_state) <= 1e-6
    rng = np.random.default_rng(5)
    noisy = box_state.model_copy(
        update={"psi": box_state.psi.like(box_state.psi.values * (1 + 0.01 * rng.uniform(-1, 1, box_state.psi.values.shape)))}
    )
    assert schrodinger.groundstate_residual(laplace_kernel_coarse, BOX, noisy) > 1e-3


def test_start_vector_scale_does_not_matter(laplace_kernel_coarse, coarse_grid, box_state):
    start = grid_service.sample(coarse_grid, lambda x: 7.0 * np.exp(-np.abs(x)))
    other = schrodinger.principal_eigenpair(laplace_kernel_coarse, BOX, 1e-10, start=start)
    assert other.lam == pytest.approx(box_state.lam, abs=1e-9)


def test_vanishing_potential_reports_the_edge(laplace_kernel_coarse, coarse_grid):
    zero = Potential(support_radius=1.0, profile="tabulated", values=grid_service.constant(coarse_grid, 0.0))
    gs = schrodinger.principal_eigenpair(laplace_kernel_coarse, zero, 1e-10)
    assert gs.edge_detected
    with pytest.raises(ParameterError):
        schrodinger.groundstate_residual(laplace_kernel_coarse, zero, gs)


def test_weak_potential_still_binds_in_one_dimension(laplace_kernel_coarse):
    weak = Potential(support_radius=0.5, height=0.3)
    gs = schrodinger.principal_eigenpair(laplace_kernel_coarse, weak, 1e-10)
    dense = schrodinger.dense_eigenpair(laplace_kernel_coarse, weak)
    assert not gs.edge_detected
    assert gs.lam > 1e-8
    assert gs.lam == pytest.approx(dense.lam, abs=1e-6)


def test_potential_profiles(coarse_grid):
    bump = schrodinger.potential_values(Potential(support_radius=2.0, profile="bump", height=0.5), coarse_grid)
    x = coarse_grid.axis()
    assert bump.values[coarse_grid.points_per_axis // 2] == 0.5
    assert np.all(bump.values[np.abs(x) >= 2.0] == 0.0)
    with pytest.raises(ValueError):
        Potential(support_radius=1.0, height=1.5)


def test_dense_oracle_size_limit(laplace_spec):
    grid = grid_service.make_grid(1, 40.0, 2048)
    a = kernels.sample_kernel(laplace_spec, grid)
    with pytest.raises(ParameterError):
        schrodinger.dense_eigenpair(a, BOX)


def test_exponential_ground_state_tail(laplace_spec, laplace_kernel_coarse, box_state):
    report = schrodinger.groundstate_tail_report(box_state, laplace_spec)
    assert report.passed, report.failed_checks()
    assert report.window == (5.0, 10.0)


def test_polynomial_ground_state_tail(polynomial_spec, polynomial_kernel_huge):
    gs = schrodinger.principal_eigenpair(polynomial_kernel_huge, BOX, 1e-10)
    assert not gs.edge_detected
    report = schrodinger.groundstate_tail_report(gs, polynomial_spec)
    assert report.window == (500.0, 1000.0)
    assert report.fitted == pytest.approx(2.0, abs=0.05)
    assert report.passed, report.failed_checks()


def test_gaussian_ground_state_is_out_of_scope(coarse_grid):
    spec = KernelSpec(family="gaussian", sigma=1.0)
    a = kernels.sample_kernel(spec, coarse_grid)
    gs = schrodinger.principal_eigenpair(a, BOX, 1e-10)
    report = schrodinger.groundstate_tail_report(gs, spec)
    assert report.passed
    assert any("out of theorem scope" in note for note in report.notes)


def test_existence_scan(laplace_kernel_coarse):
    report = schrodinger.existence_scan(laplace_kernel_coarse, [1.0, 0.5], [1.0], 1e-10)
    assert report.passed
    assert len(report.data["rows"]) == 2
    assert all(not row["edge_detected"] for row in report.data["rows"])


def test_write_groundstate(tmp_path, box_state):
    csv_path = schrodinger.write_groundstate(box_state, str(tmp_path))
    with open(os.path.join(str(tmp_path), "groundstate.json"), encoding="utf-8") as fp:
        sidecar = json.load(fp)
    assert sidecar["lambda"] == pytest.approx(box_state.lam)
    assert sidecar["edge_detected"] is False
    assert np.array_equal(grid_service.read_field_csv(csv_path).values, box_state.psi.values)
