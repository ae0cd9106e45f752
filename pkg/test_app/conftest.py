import os
import sys

import numpy as np
import pytest

# Add the repository root to the Python path
root_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if root_dir not in sys.path:
    sys.path.insert(0, root_dir)

from src.network import ActivationKind, Network  # noqa: E402
from src.properties import InputDomain, OutputCondition, PropertySpec  # noqa: E402


@pytest.fixture
def tiny_net():
    """2-2-1 ReLU net: y = relu(x0 - x1) + relu(x1 - x0) - 0.5."""
    return Network(
        weights=(np.array([[1.0, -1.0], [-1.0, 1.0]]), np.array([[1.0, 1.0]])),
        biases=(np.zeros(2), np.array([-0.5])),
        activation=ActivationKind.relu(),
        input_bounds=((0.0, 1.0), (0.0, 1.0)),
    )


@pytest.fixture
def tiny_spec():
    """``y <= 0`` on the unit square: violated where ``|x0 - x1| > 0.5``."""
    return PropertySpec('tiny', InputDomain.unit(2), OutputCondition.upper_bound(0, 0.0, 1))


@pytest.fixture(autouse=True)
def isolated_dirs(tmp_path, monkeypatch):
    """Keep logs and download caches out of the working tree."""
    monkeypatch.setenv('REPAIR_LOG_DIR', str(tmp_path / 'logs'))
    monkeypatch.setenv('REPAIR_CACHE_DIR', str(tmp_path / 'cache'))
    monkeypatch.delenv('REPAIR_THREADS', raising=False)
    monkeypatch.delenv('ACASXU_DIR', raising=False)
    return tmp_path
