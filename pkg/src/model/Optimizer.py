import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from src.model.Tensor import Tensor
from src.utils.Exceptions import NumericError, ShapeError
from src.utils.Validator import Validator

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """
    Состояние оптимизатора одной группы параметров.

    Attributes:
        step (int): Число выполненных обновлений.
        first_moment (Dict[str, np.ndarray]): Первые моменты Adam по именам параметров.
        second_moment (Dict[str, np.ndarray]): Вторые моменты Adam по именам параметров.
    """
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float | None) -> tuple[Dict[str, np.ndarray], float]:
    """
    Масштабирует градиенты так, чтобы их общая норма не превышала max_norm.

    Args:
        grads (Mapping[str, np.ndarray]): Градиенты по именам.
        max_norm (float | None): Порог; None или 0 отключают отсечение.

    Returns:
        tuple[Dict[str, np.ndarray], float]: Отсечённые градиенты и исходная глобальная норма.
    """
    total: float = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if not max_norm or total <= max_norm:
        return dict(grads), total
    logger.debug("Отсечение градиента: норма %.4f > %.4f", total, max_norm)
    scale: float = max_norm / total
    return {name: g * scale for name, g in grads.items()}, total


def gather_gradients(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """
    Приводит градиенты группы к полному набору по именам параметров.

    Args:
        params (Mapping[str, Tensor]): Параметры группы.
        grads (Mapping[str, np.ndarray]): Градиенты; отсутствующее имя означает нулевой градиент.

    Returns:
        Dict[str, np.ndarray]: Градиент для каждого параметра.

    Raises:
        NumericError: Если в градиентах есть NaN или inf.
        ShapeError: Если форма градиента не совпадает с формой параметра.
    """
    full: Dict[str, np.ndarray] = {}
    for name, param in params.items():
        grad = grads.get(name)
        grad = np.zeros_like(param.data) if grad is None else np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise ShapeError(f"optimizer: градиент {name} формы {grad.shape}, параметр формы {param.shape}.")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"Нечисловой градиент параметра {name}; обновление отменено.")
        full[name] = grad
    return full


def sgd_or_adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], learning_rate: float,
                     state: OptimizerState, kind: str = "adam", beta1: float = 0.9, beta2: float = 0.999,
                     eps: float = 1e-8, max_norm: float | None = 40.0) -> float:
    """
    Выполняет одно обновление параметров на месте.

    Args:
        params (Mapping[str, Tensor]): Параметры группы по именам.
        grads (Mapping[str, np.ndarray]): Градиенты; отсутствующее имя означает нулевой градиент.
        learning_rate (float): Шаг обучения η.
        state (OptimizerState): Состояние оптимизатора, продвигается на один шаг.
        kind (str): "adam" или "sgd".
        beta1 (float): Коэффициент первого момента Adam.
        beta2 (float): Коэффициент второго момента Adam.
        eps (float): Стабилизатор знаменателя Adam.
        max_norm (float | None): Порог отсечения по глобальной норме.

    Returns:
        float: Глобальная норма градиента до отсечения.

    Raises:
        NumericError: Если в градиентах есть NaN или inf; параметры и состояние не меняются.
        ShapeError: Если форма градиента не совпадает с формой параметра.
    """
    Validator.check_choice("optimizer", kind, Validator.KNOWN_OPTIMIZERS)
    clipped, norm = clip_grad_norm(gather_gradients(params, grads), max_norm)
    state.step += 1
    if kind == "sgd":
        for name, param in params.items():
            param.data -= learning_rate * clipped[name]
        return norm

    t: int = state.step
    for name, param in params.items():
        g = clipped[name]
        m = state.first_moment.get(name, np.zeros_like(g))
        v = state.second_moment.get(name, np.zeros_like(g))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        param.data -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return norm


class Optimizer:
    """
    Оптимизатор группы параметров (θ, ω или φ/ψ одного агента).

    Хранит ссылки на параметры и состояние; обновления выполняются на месте.
    """

    def __init__(self, params: Mapping[str, Tensor], learning_rate: float, kind: str = "adam",
                 max_norm: float | None = 40.0) -> None:
        """
        Инициализация оптимизатора.

        Args:
            params (Mapping[str, Tensor]): Параметры группы по именам.
            learning_rate (float): Шаг обучения.
            kind (str): "adam" или "sgd".
            max_norm (float | None): Порог отсечения по глобальной норме (по умолчанию 40).
        """
        Validator.check_positive("learning_rate", learning_rate)
        Validator.check_choice("optimizer", kind, Validator.KNOWN_OPTIMIZERS)
        self.params: Dict[str, Tensor] = dict(params)
        self.learning_rate: float = float(learning_rate)
        self.kind: str = kind
        self.max_norm: float | None = max_norm
        self.state: OptimizerState = OptimizerState()

    def step(self, grads: Mapping[str, np.ndarray]) -> float:
        """Применяет градиенты; возвращает норму до отсечения."""
        return sgd_or_adam_step(self.params, grads, self.learning_rate, self.state,
                                kind=self.kind, max_norm=self.max_norm)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """
        Плоское представление состояния для чекпоинта.

        Returns:
            Dict[str, np.ndarray]: "step" и моменты с префиксами "m." и "v.".
        """
        arrays: Dict[str, np.ndarray] = {"step": np.array([float(self.state.step)])}
        for name in self.params:
            if name in self.state.first_moment:
                arrays[f"m.{name}"] = self.state.first_moment[name]
                arrays[f"v.{name}"] = self.state.second_moment[name]
        return arrays

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Восстанавливает состояние из представления state_arrays."""
        self.state = OptimizerState(step=int(arrays["step"][0]) if "step" in arrays else 0)
        for name in self.params:
            if f"m.{name}" in arrays:
                self.state.first_moment[name] = np.array(arrays[f"m.{name}"], dtype=np.float64)
                self.state.second_moment[name] = np.array(arrays[f"v.{name}"], dtype=np.float64)


def step_groups(optimizers: Mapping[str, Optimizer], grads: Mapping[str, Mapping[str, np.ndarray]],
                max_norm: float | None) -> float:
    """
    Общее обновление нескольких групп одного агента.

    Градиенты всех групп проверяются и отсекаются по одной глобальной норме, после чего каждая
    группа делает шаг своим оптимизатором без собственного отсечения.

    Args:
        optimizers (Mapping[str, Optimizer]): Оптимизаторы по группам.
        grads (Mapping[str, Mapping[str, np.ndarray]]): Градиенты по группам и именам параметров.
        max_norm (float | None): Порог глобальной нормы; None или 0 отключают отсечение.

    Returns:
        float: Глобальная норма до отсечения.

    Raises:
        NumericError: Если градиент какой-либо группы не конечен; ни одна группа не меняется.
        ShapeError: Если форма градиента не совпадает с формой параметра.
    """
    full = {group: gather_gradients(optimizer.params, grads.get(group, {}))
            for group, optimizer in optimizers.items()}
    flat = {f"{group}/{name}": grad for group, named in full.items() for name, grad in named.items()}
    clipped, norm = clip_grad_norm(flat, max_norm)
    for group, optimizer in optimizers.items():
        sgd_or_adam_step(optimizer.params, {name: clipped[f"{group}/{name}"] for name in full[group]},
                         optimizer.learning_rate, optimizer.state, kind=optimizer.kind, max_norm=None)
    return norm
