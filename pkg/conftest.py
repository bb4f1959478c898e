import numpy as np
import pytest

from inertial_spin.config import get_settings
from inertial_spin.kernels import ConstantMatrixKernel
from inertial_spin.model import ModelParams, SwarmState, cone_state


@pytest.fixture(autouse=True)
def isolated_output(tmp_path, monkeypatch):
    monkeypatch.setenv("INERTIAL_SPIN_OUTPUT_DIR", str(tmp_path / "output"))
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def params():
    return ModelParams(chi=1.0, gamma=1.0, k=1.0)


@pytest.fixture
def random_state():
    return cone_state(8, 0.6, spin_scale=0.2, seed=42)


@pytest.fixture
def uniform_kernel():
    return ConstantMatrixKernel.uniform(8, 1.0)


def aligned_state(n=4, direction=(1.0, 0.0, 0.0)):
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    x = np.outer(np.arange(n, dtype=float), [0.0, 1.0, 0.0])
    return SwarmState(t=0.0, x=x, v=np.tile(d, (n, 1)), s=np.zeros((n, 3)))


def single_spin_state(spin=(0.0, 0.0, 1.0)):
    return SwarmState(t=0.0, x=[[0.0, 0.0, 0.0]], v=[[1.0, 0.0, 0.0]], s=[list(spin)])
