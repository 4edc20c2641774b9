import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.models.schema import KernelSpec  # noqa: E402
from app.services import grid as grid_service  # noqa: E402
from app.services import kernels  # noqa: E402


@pytest.fixture(scope="session")
def laplace_spec():
    return KernelSpec(family="laplace", delta=1.0, dim=1)


@pytest.fixture(scope="session")
def polynomial_spec():
    return KernelSpec(family="polynomial", alpha=1.0, dim=1)


@pytest.fixture(scope="session")
def gaussian_spec():
    return KernelSpec(family="gaussian", sigma=1.0, dim=1)


@pytest.fixture(scope="session")
def fine_grid():
    # L = 40, h ~ 0.0098
    return grid_service.make_grid(1, 40.0, 4096)


@pytest.fixture(scope="session")
def coarse_grid():
    # small enough for the dense eigen oracle
    return grid_service.make_grid(1, 40.0, 512)


@pytest.fixture(scope="session")
def wide_grid():
    # polynomial alpha = 1 needs a wide box to keep the kernel mass inside
    return grid_service.make_grid(1, 400.0, 4096)


@pytest.fixture(scope="session")
def huge_grid():
    # L = 4000 puts the default window [500, 1000] past the pre-asymptotic bulk for lambda >= 0.05
    return grid_service.make_grid(1, 4000.0, 2**17)


@pytest.fixture(scope="session")
def laplace_kernel(laplace_spec, fine_grid):
    return kernels.sample_kernel(laplace_spec, fine_grid)


@pytest.fixture(scope="session")
def laplace_kernel_coarse(laplace_spec, coarse_grid):
    return kernels.sample_kernel(laplace_spec, coarse_grid)


@pytest.fixture(scope="session")
def polynomial_kernel(polynomial_spec, wide_grid):
    return kernels.sample_kernel(polynomial_spec, wide_grid)


@pytest.fixture(scope="session")
def polynomial_kernel_huge(polynomial_spec, huge_grid):
    return kernels.sample_kernel(polynomial_spec, huge_grid)


@pytest.fixture(scope="session")
def gaussian_kernel(gaussian_spec, fine_grid):
    return kernels.sample_kernel(gaussian_spec, fine_grid)
