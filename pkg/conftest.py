import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pytest  # noqa: E402

from src.bath import SpectralDensity  # noqa: E402
from src.liouville import operator  # noqa: E402


@pytest.fixture
def paulis():
    return {name: operator(name) for name in ("sx", "sy", "sz", "id")}


@pytest.fixture
def ohmic():
    return SpectralDensity.ohmic_exp(0.1, 1.)


@pytest.fixture
def lorentzian():
    return SpectralDensity.lorentzian(0.3, 1., 1.)
