import pytest

from sde_gridopt import LinearSdeModel


@pytest.fixture(scope="session")
def ou():
    """Scalar Ornstein-Uhlenbeck reference model: dX = -X dt + dW on [0, 1]."""
    return LinearSdeModel(A=[[-1.0]], B=[[1.0]], M=[[1.0]], T=1.0)
