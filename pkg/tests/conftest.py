import numpy as np
import pytest
from hypothesis import settings

from squeeze_spectra.geometry import SphereGeometry, ThicknessProfile

settings.register_profile("repo", max_examples=40, deadline=None)
settings.load_profile("repo")


@pytest.fixture
def unit_circle():
    return SphereGeometry(2, 1.0)


@pytest.fixture
def flat_profile():
    """c = 0, d = 0.2: constant thickness 0.2."""
    return ThicknessProfile.constant(0.0, 0.2)


@pytest.fixture
def cosine_profile():
    """c = 0, d = 0.2 + 0.05 cos(theta)."""
    return ThicknessProfile([0.0], [0.2, 0.05])


def grid(n):
    return 2 * np.pi * np.arange(n) / n
