from typing import Callable, Dict

import numpy as np
import pytest

from src.model.AgentPolicy import ModelConfig
from src.model.EnvGraph import EnvGraph, make_grid
from src.model.ExperimentConfig import ExperimentConfig
from src.model.LatentMask import PriorConfig
from src.model.Tensor import ComputationTape, Tensor, backward
from src.model.Trainer import TrainConfig
from src.model.TrafficEnv import EnvConfig
from src.paths import CONFIGS_DIR

# Шаг центральных разностей
FD_STEP: float = 1e-5


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="запускать тесты с меткой slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="нужен флаг --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def finite_difference_check(func: Callable[[Dict[str, Tensor]], Tensor], params: Dict[str, Tensor],
                            atol: float = 1e-6, rtol: float = 1e-4) -> None:
    """
    Сравнивает градиенты ленты с центральными разностями по каждому элементу параметров.

    Args:
        func: Скалярная функция параметров, построенная из примитивов Tensor.
        params: Параметры (листья с requires_grad).
        atol: Абсолютный допуск.
        rtol: Относительный допуск.
    """
    with ComputationTape() as tape:
        root = func(params)
    grads = backward(tape, root, params.values())
    for name, tensor in params.items():
        numeric = np.zeros_like(tensor.data)
        for index in np.ndindex(tensor.shape):
            original = tensor.data[index]
            tensor.data[index] = original + FD_STEP
            plus = func(params).item()
            tensor.data[index] = original - FD_STEP
            minus = func(params).item()
            tensor.data[index] = original
            numeric[index] = (plus - minus) / (2 * FD_STEP)
        np.testing.assert_allclose(grads[tensor], numeric, atol=atol, rtol=rtol, err_msg=name)


@pytest.fixture
def gradient_check():
    return finite_difference_check


@pytest.fixture
def line_graph() -> EnvGraph:
    """Цепочка 0 - 1 - 2."""
    return EnvGraph(3, [(0, 1), (1, 2)])


@pytest.fixture
def grid_2x2() -> EnvGraph:
    return make_grid(2, 2)


@pytest.fixture
def small_env_config() -> EnvConfig:
    return EnvConfig(episode_length=8, arrival_rate=0.8, initial_queue_rate=2.0)


@pytest.fixture
def small_model() -> ModelConfig:
    return ModelConfig(hidden=6, embed=5)


@pytest.fixture
def small_prior() -> PriorConfig:
    return PriorConfig()


@pytest.fixture
def small_train() -> TrainConfig:
    return TrainConfig(episodes=1, rollout_length=4, workers=1)


@pytest.fixture
def smoke_config() -> ExperimentConfig:
    return ExperimentConfig.load(CONFIGS_DIR / "smoke.toml")
