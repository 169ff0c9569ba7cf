"""
Fixtures partagées des tests.
"""
import numpy as np
import pytest


@pytest.fixture
def rng():
    """Générateur à graine fixe."""
    return np.random.default_rng(42)
