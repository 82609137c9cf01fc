import numpy as np
import pytest

from ldcfem.mesh import DomainSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["lshape", "slit"])
def model_domain(request):
    return DomainSpec(request.param)
