"""
Блоки сетей агентов: канальные кодировщики (GCN для BayesG, CommNet, NeurComm, IA2C),
ячейка LSTM и головы актора и критика.

Все функции чистые: принимают входы и словарь параметров, возвращают тензоры.
Первая ось входов — номер шага в батче K; сбор траекторий использует K = 1.
"""
from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from src.model.Tensor import (
    Tensor, concat, exp, log_softmax, matmul, mean, parameter, power, relu, reshape, sigmoid, slice_, sum_, tanh,
)
from src.utils.Exceptions import ShapeError

# Каналы кодировщика BayesG в порядке конкатенации
CHANNELS: tuple[str, ...] = ("state", "policy", "trajectory")
# Добавка к логитам недопустимых действий
INVALID_ACTION_LOGIT: float = -1e9

Params = Mapping[str, Tensor]


@dataclass(frozen=True)
class AgentChannels:
    """
    Признаки окрестности агента.

    Attributes:
        states (Tensor): S_V, форма (K, |V_i|, d_s).
        policies (Tensor): Π_V, форма (K, |V_i|, d_π); строка 0 — собственный отпечаток π_{i,t−1}.
        trajectories (Tensor): H_V, форма (K, |V_i|, d_h); скрытые состояния LSTM предыдущего шага.
    """
    states: Tensor
    policies: Tensor
    trajectories: Tensor

    def __post_init__(self) -> None:
        shapes = [self.states.shape, self.policies.shape, self.trajectories.shape]
        if any(len(s) != 3 for s in shapes) or len({s[:2] for s in shapes}) != 1:
            raise ShapeError(f"AgentChannels: каналы должны иметь форму (K, |V_i|, d), получено {shapes}.")

    @property
    def batch(self) -> int:
        return self.states.shape[0]

    @property
    def members(self) -> int:
        return self.states.shape[1]

    def channel(self, name: str) -> Tensor:
        """Канал по имени из CHANNELS."""
        return {"state": self.states, "policy": self.policies, "trajectory": self.trajectories}[name]


@dataclass(frozen=True)
class NetworkDims:
    """
    Размеры сетей агента.

    Attributes:
        obs_dim (int): Ширина наблюдения d_s (после выравнивания).
        action_dim (int): Максимальное число действий d_π.
        hidden (int): Размер состояния LSTM d_h.
        embed (int): Ширина канального вложения.
        max_degree (int): Глобальная максимальная степень (ширина выравнивания соседей).
        gcn_layers (int): Число слоёв GCN на канал (1 или 2).
    """
    obs_dim: int
    action_dim: int
    hidden: int = 64
    embed: int = 32
    max_degree: int = 4
    gcn_layers: int = 1


def subset(params: Params, prefix: str) -> Dict[str, Tensor]:
    """Параметры с заданным префиксом; префикс отбрасывается."""
    head: str = prefix + "."
    return {name[len(head):]: p for name, p in params.items() if name.startswith(head)}


def dense_params(rng: np.random.Generator, fan_in: int, fan_out: int, prefix: str) -> Dict[str, Tensor]:
    """
    Инициализирует полносвязный слой равномерно в ±1/√fan_in, смещение нулевое.

    Returns:
        Dict[str, Tensor]: "<prefix>.weight" формы (fan_in, fan_out) и "<prefix>.bias" формы (fan_out,).
    """
    bound: float = 1.0 / np.sqrt(fan_in) if fan_in > 0 else 0.0
    return {
        f"{prefix}.weight": parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), f"{prefix}.weight"),
        f"{prefix}.bias": parameter(np.zeros(fan_out), f"{prefix}.bias"),
    }


def dense(x: Tensor, params: Params, prefix: str, activation: bool = True) -> Tensor:
    """Слой x·W + b с relu (или без активации)."""
    out = matmul(x, params[f"{prefix}.weight"]) + params[f"{prefix}.bias"]
    return relu(out) if activation else out


def normalized_adjacency(a_eff: Tensor) -> Tensor:
    """
    D̃^{−1/2}(A + I)D̃^{−1/2} с дробными степенями для ослабленной маски.

    Args:
        a_eff (Tensor): Эффективная смежность формы (K, M, M).

    Returns:
        Tensor: Нормированная матрица той же формы.
    """
    if a_eff.ndim != 3 or a_eff.shape[1] != a_eff.shape[2]:
        raise ShapeError(f"gcn_layer: смежность должна иметь форму (K, M, M), получено {a_eff.shape}.")
    k, m, _ = a_eff.shape
    a_tilde = a_eff + np.eye(m)
    d_inv_sqrt = power(sum_(a_tilde, axis=-1), -0.5)
    return a_tilde * reshape(d_inv_sqrt, (k, m, 1)) * reshape(d_inv_sqrt, (k, 1, m))


def gcn_layer(x: Tensor, a_eff: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """
    Слой графовой свёртки relu(D̃^{−1/2}(A_eff + I)D̃^{−1/2} · X · W + b).

    Args:
        x (Tensor): Признаки участников (K, M, d_in).
        a_eff (Tensor): Эффективная смежность (K, M, M) со значениями в [0, 1].
        weight (Tensor): Веса (d_in, d_out).
        bias (Tensor | None): Смещение (d_out,).

    Returns:
        Tensor: Признаки участников (K, M, d_out).
    """
    if x.ndim != 3 or x.shape[:2] != a_eff.shape[:2]:
        raise ShapeError(f"gcn_layer: признаки {x.shape} не согласованы со смежностью {a_eff.shape}.")
    out = matmul(matmul(normalized_adjacency(a_eff), x), weight)
    if bias is not None:
        out = out + bias
    return relu(out)


def _center_row(x: Tensor) -> Tensor:
    return slice_(x, (slice(None), 0, slice(None)))


def _padded_neighbors(x: Tensor, max_degree: int) -> Tensor | None:
    """Строки соседей, развёрнутые в (K, max_degree·d) с нулевым дополнением; None при нулевой ширине."""
    k, m, d = x.shape
    count: int = m - 1
    if count > max_degree:
        raise ShapeError(f"Соседей {count} больше максимальной степени {max_degree}.")
    parts: list[Tensor] = []
    if count > 0:
        parts.append(reshape(slice_(x, (slice(None), slice(1, None), slice(None))), (k, count * d)))
    if max_degree > count:
        parts.append(Tensor(np.zeros((k, (max_degree - count) * d))))
    if not parts:
        return None
    return parts[0] if len(parts) == 1 else concat(parts, axis=-1)


def _with_neighbors(own: Tensor, neighbors: Tensor | None) -> Tensor:
    return own if neighbors is None else concat([own, neighbors], axis=-1)


def bayesg_encode(ch: AgentChannels, a_eff: Tensor, params: Params, layers: int = 1) -> Tensor:
    """
    Кодировщик BayesG: центральная строка трёх независимых GCN-каналов (S, Π, H), сцепленная.

    Args:
        ch (AgentChannels): Признаки окрестности.
        a_eff (Tensor): Эффективная смежность (K, |V_i|, |V_i|).
        params (Params): Параметры "gcn.<канал>.<слой>.weight|bias".
        layers (int): Число слоёв GCN на канал.

    Returns:
        Tensor: s̃_i формы (K, 3·embed).
    """
    encoded: list[Tensor] = []
    for channel in CHANNELS:
        x = ch.channel(channel)
        for layer in range(layers):
            prefix = f"gcn.{channel}.{layer}"
            x = gcn_layer(x, a_eff, params[f"{prefix}.weight"], params[f"{prefix}.bias"])
        encoded.append(_center_row(x))
    return concat(encoded, axis=-1)


def commnet_encode(ch: AgentChannels, params: Params, max_degree: int) -> Tensor:
    """
    Кодировщик CommNet: MLP_state([s_i, s_N]) + MLP_traj(mean(h_N)).

    Агент без соседей получает нулевой средний вектор.
    """
    own = _center_row(ch.states)
    state_in = _with_neighbors(own, _padded_neighbors(ch.states, max_degree))
    k, m, d_h = ch.trajectories.shape
    if m > 1:
        pooled = mean(slice_(ch.trajectories, (slice(None), slice(1, None), slice(None))), axis=1)
    else:
        pooled = Tensor(np.zeros((k, d_h)))
    return dense(state_in, params, "state") + dense(pooled, params, "trajectory")


def neurcomm_encode(ch: AgentChannels, params: Params, max_degree: int) -> Tensor:
    """
    Кодировщик NeurComm: MLP_state([s_i, s_N]) ∥ MLP_policy(π_N) ∥ MLP_traj(h_N).

    Соседи дополняются нулями до max_degree, поэтому ширина входа одна для всех агентов.
    """
    k = ch.batch
    own = _center_row(ch.states)
    state_in = _with_neighbors(own, _padded_neighbors(ch.states, max_degree))
    parts: list[Tensor] = [dense(state_in, params, "state")]
    for channel in ("policy", "trajectory"):
        neighbors = _padded_neighbors(ch.channel(channel), max_degree)
        if neighbors is None:
            neighbors = Tensor(np.zeros((k, 0)))
        parts.append(dense(neighbors, params, channel))
    return concat(parts, axis=-1)


def ia2c_encode(ch: AgentChannels, params: Params, layers: int = 1) -> Tensor:
    """
    Кодировщик IA2C: кодировщик BayesG, у которого отброшены все рёбра эго-графа.

    Строка центра зависит только от собственных s_i, π_i и h_i, поэтому признаки соседей на неё
    не влияют и сообщения не нужны.
    """
    return bayesg_encode(ch, Tensor(np.zeros((ch.batch, ch.members, ch.members))), params, layers)


def lstm_step(h_prev: Tensor, c_prev: Tensor, x: Tensor, params: Params) -> tuple[Tensor, Tensor]:
    """
    Шаг ячейки LSTM с вентилями (i, f, o, g).

    Args:
        h_prev (Tensor): Скрытое состояние (K, H).
        c_prev (Tensor): Состояние ячейки (K, H).
        x (Tensor): Вход s̃ (K, X).
        params (Params): "input" (X, 4H), "hidden" (H, 4H), "bias" (4H,).

    Returns:
        tuple[Tensor, Tensor]: Новые (h, c).
    """
    hidden: int = h_prev.shape[-1]
    gates = matmul(x, params["input"]) + matmul(h_prev, params["hidden"]) + params["bias"]

    def gate(index: int) -> Tensor:
        return slice_(gates, (slice(None), slice(index * hidden, (index + 1) * hidden)))

    input_gate = sigmoid(gate(0))
    forget_gate = sigmoid(gate(1))
    output_gate = sigmoid(gate(2))
    candidate = tanh(gate(3))
    c = forget_gate * c_prev + input_gate * candidate
    h = output_gate * tanh(c)
    return h, c


def actor_head(h: Tensor, params: Params, action_mask: np.ndarray | None = None) -> Tensor:
    """
    Голова актора: логарифмы вероятностей действий.

    Args:
        h (Tensor): Скрытое состояние (K, H).
        params (Params): "weight" (H, A), "bias" (A,).
        action_mask (np.ndarray | None): Булев массив (A,) допустимых действий.

    Returns:
        Tensor: log π̃ формы (K, A); недопустимые действия имеют вероятность 0.
    """
    logits = matmul(h, params["weight"]) + params["bias"]
    if action_mask is not None:
        logits = logits + np.where(np.asarray(action_mask, dtype=bool), 0.0, INVALID_ACTION_LOGIT)
    return log_softmax(logits, axis=-1)


def policy_entropy(log_probs: Tensor) -> Tensor:
    """Энтропия −Σ π log π по последней оси, форма (K,)."""
    return -sum_(exp(log_probs) * log_probs, axis=-1)


def critic_head(h: Tensor, neighbor_actions: Tensor, params: Params) -> Tensor:
    """
    Голова критика V(h, u_N).

    Args:
        h (Tensor): Скрытое состояние (K, H); вызывающий передаёт копию без градиента.
        neighbor_actions (Tensor): One-hot действия соседей, выровненные до (K, max_degree·A).
        params (Params): "weight" (H + max_degree·A, 1), "bias" (1,).

    Returns:
        Tensor: Значения формы (K,).
    """
    features = _with_neighbors(h, neighbor_actions if neighbor_actions.shape[-1] > 0 else None)
    value = matmul(features, params["weight"]) + params["bias"]
    return reshape(value, (value.shape[0],))


def encoded_width(method: str, dims: NetworkDims) -> int:
    """Ширина s̃ для метода."""
    return 3 * dims.embed if method in ("bayesg", "ia2c", "neurcomm") else dims.embed


def init_encoder_params(method: str, dims: NetworkDims, rng: np.random.Generator) -> Dict[str, Tensor]:
    """
    Создаёт параметры кодировщика метода.

    Args:
        method (str): "bayesg", "commnet", "neurcomm" или "ia2c".
        dims (NetworkDims): Размеры сетей.
        rng (np.random.Generator): Генератор инициализации агента.

    Returns:
        Dict[str, Tensor]: Параметры без префикса группы.
    """
    params: Dict[str, Tensor] = {}
    e, d = dims.embed, dims.max_degree
    if method in ("bayesg", "ia2c"):
        widths = {"state": dims.obs_dim, "policy": dims.action_dim, "trajectory": dims.hidden}
        for channel in CHANNELS:
            fan_in = widths[channel]
            for layer in range(dims.gcn_layers):
                params.update(dense_params(rng, fan_in, e, f"gcn.{channel}.{layer}"))
                fan_in = e
    elif method == "commnet":
        params.update(dense_params(rng, dims.obs_dim * (1 + d), e, "state"))
        params.update(dense_params(rng, dims.hidden, e, "trajectory"))
    elif method == "neurcomm":
        params.update(dense_params(rng, dims.obs_dim * (1 + d), e, "state"))
        params.update(dense_params(rng, dims.action_dim * d, e, "policy"))
        params.update(dense_params(rng, dims.hidden * d, e, "trajectory"))
    else:
        raise ValueError(f"Неизвестный метод {method!r}.")
    return params


def init_lstm_params(input_dim: int, hidden: int, rng: np.random.Generator) -> Dict[str, Tensor]:
    """Параметры ячейки LSTM: "input", "hidden", "bias"."""
    bound: float = 1.0 / np.sqrt(hidden)
    return {
        "input": parameter(rng.uniform(-bound, bound, size=(input_dim, 4 * hidden)), "input"),
        "hidden": parameter(rng.uniform(-bound, bound, size=(hidden, 4 * hidden)), "hidden"),
        "bias": parameter(np.zeros(4 * hidden), "bias"),
    }


def encode(method: str, ch: AgentChannels, a_eff: Tensor | None, params: Params, dims: NetworkDims) -> Tensor:
    """Вызывает кодировщик метода."""
    if method == "bayesg":
        if a_eff is None:
            raise ShapeError("bayesg_encode: не передана эффективная смежность.")
        return bayesg_encode(ch, a_eff, params, dims.gcn_layers)
    if method == "commnet":
        return commnet_encode(ch, params, dims.max_degree)
    if method == "neurcomm":
        return neurcomm_encode(ch, params, dims.max_degree)
    return ia2c_encode(ch, params, dims.gcn_layers)
