import numpy as np
import pytest

from nfdelab import CompartmentModel, History
from nfdelab.cli import load_config


class _Args:
    def __init__(self, preset):
        self.preset = preset
        self.config = None


def load_preset_config(name: str) -> dict:
    cfg, _ = load_config(_Args(name))
    return cfg


def load_preset(name: str) -> CompartmentModel:
    return CompartmentModel.from_config(load_preset_config(name))


@pytest.fixture(scope="session")
def linear3():
    return load_preset("linear3")


@pytest.fixture(scope="session")
def krisztin():
    return load_preset("krisztin")


@pytest.fixture(scope="session")
def canary():
    return load_preset("canary")


@pytest.fixture(scope="session")
def neutral_ring():
    return load_preset("neutral-ring")


def sin_history(step: float, horizon: float, dim: int = 1,
                amp: float = 1.0, shift: float = 0.0) -> History:
    n = int(round(horizon / step))
    s = -step * np.arange(n, -1, -1)
    cols = np.tile((amp * np.sin(s) + shift)[:, None], (1, dim))
    return History(step, cols)
