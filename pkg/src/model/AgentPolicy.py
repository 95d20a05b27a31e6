import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np

from src.model.EnvGraph import EgoGraph
from src.model.LatentMask import (
    MaskSample, edge_logit_network, effective_subgraph, free_edge_logits, init_edge_network_params, logistic_noise,
    init_free_logits, mean_mask, sample_mask,
)
from src.model.NeuralBlocks import (
    AgentChannels, NetworkDims, actor_head, critic_head, dense_params, encode, encoded_width,
    init_encoder_params, init_lstm_params, lstm_step, subset,
)
from src.model.Tensor import Tensor
from src.utils.Exceptions import ConfigError
from src.utils.Validator import Validator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    """
    Архитектура сетей агента.

    Attributes:
        hidden (int): Размер состояния LSTM.
        embed (int): Ширина канального вложения.
        gcn_layers (int): Слоёв GCN на канал (1 или 2).
        neighbor_edges (bool): Пропускать сообщения по рёбрам между соседями (с весом z_j·z_k).
        logit_mode (str): "network" — логиты из сети по признакам рёбер, "free" — свободные параметры.
        init_logit (float): Начальный логит рёбер.
        straight_through (bool): Жёсткая маска при обучении с градиентом ослабленной.
    """
    hidden: int = 64
    embed: int = 32
    gcn_layers: int = 1
    neighbor_edges: bool = True
    logit_mode: str = "network"
    init_logit: float = 0.0
    straight_through: bool = False

    def __post_init__(self) -> None:
        Validator.check_positive("hidden", self.hidden)
        Validator.check_positive("embed", self.embed)
        if self.gcn_layers not in (1, 2):
            raise ConfigError(f"Параметр gcn_layers должен быть 1 или 2, получено {self.gcn_layers!r}.")
        Validator.check_choice("logit_mode", self.logit_mode, Validator.KNOWN_LOGIT_MODES)


@dataclass(frozen=True)
class PolicyOutput:
    """
    Результат прямого прохода агента.

    Attributes:
        log_probs (Tensor): log π̃ формы (K, A).
        h (Tensor): Новое скрытое состояние (K, H).
        c (Tensor): Новое состояние ячейки (K, H).
        a_eff (Tensor | None): Эффективная смежность (только BayesG).
    """
    log_probs: Tensor
    h: Tensor
    c: Tensor
    a_eff: Tensor | None


def one_hot(actions: np.ndarray, width: int) -> np.ndarray:
    """One-hot по последней оси."""
    actions = np.asarray(actions, dtype=np.int64)
    out = np.zeros(actions.shape + (width,))
    np.put_along_axis(out, actions[..., None], 1.0, axis=-1)
    return out


def neighbor_action_features(actions: np.ndarray, neighbors: Tuple[int, ...], action_dim: int,
                             max_degree: int) -> np.ndarray:
    """
    One-hot действий соседей, выровненные до max_degree.

    Args:
        actions (np.ndarray): Действия всех агентов, форма (K, N).
        neighbors (Tuple[int, ...]): Соседи агента.
        action_dim (int): Ширина one-hot.
        max_degree (int): Число слотов соседей.

    Returns:
        np.ndarray: Признаки формы (K, max_degree·action_dim).
    """
    actions = np.atleast_2d(actions)
    k = actions.shape[0]
    features = np.zeros((k, max_degree, action_dim))
    if neighbors:
        features[:, :len(neighbors), :] = one_hot(actions[:, list(neighbors)], action_dim)
    return features.reshape(k, max_degree * action_dim)


def build_channels(observations: np.ndarray, fingerprints: np.ndarray, hidden: np.ndarray,
                   members: Tuple[int, ...]) -> AgentChannels:
    """
    Собирает признаки окрестности из глобальных массивов.

    Args:
        observations (np.ndarray): Наблюдения (K, N, d_s).
        fingerprints (np.ndarray): Отпечатки политик предыдущего шага (K, N, d_π).
        hidden (np.ndarray): Скрытые состояния LSTM предыдущего шага (K, N, d_h).
        members (Tuple[int, ...]): Участники эго-графа (центр первым).

    Returns:
        AgentChannels: Константные каналы формы (K, |V_i|, d).
    """
    index = list(members)
    return AgentChannels(
        states=Tensor(observations[:, index, :]),
        policies=Tensor(fingerprints[:, index, :]),
        trajectories=Tensor(hidden[:, index, :]),
    )


def sample_action(probs: np.ndarray, uniform: float) -> int:
    """Действие по обратной функции распределения."""
    cumulative = np.cumsum(probs)
    return int(min(np.searchsorted(cumulative, uniform * cumulative[-1], side="right"), len(probs) - 1))


def _prefixed(prefix: str, params: Mapping[str, Tensor]) -> Dict[str, Tensor]:
    renamed: Dict[str, Tensor] = {}
    for name, tensor in params.items():
        tensor.name = f"{prefix}.{name}"
        renamed[tensor.name] = tensor
    return renamed


class AgentPolicy:
    """
    Сети одного агента: кодировщик, LSTM, актор (θ), критик (ω) и источник логитов маски (φ/ψ).

    Параметры не разделяются между агентами.
    """

    def __init__(self, agent: int, ego: EgoGraph, method: str, dims: NetworkDims, model: ModelConfig,
                 mask_mode: str, mask_features: Tuple[str, ...], action_count: int,
                 rng: np.random.Generator) -> None:
        """
        Инициализация агента.

        Args:
            agent (int): Идентификатор агента.
            ego (EgoGraph): Эго-граф агента.
            method (str): "bayesg", "ia2c", "commnet" или "neurcomm".
            dims (NetworkDims): Размеры сетей.
            model (ModelConfig): Архитектура.
            mask_mode (str): "learned", "none" или "random".
            mask_features (Tuple[str, ...]): Признаки сети логитов.
            action_count (int): Число допустимых действий агента (≤ dims.action_dim).
            rng (np.random.Generator): Генератор инициализации.
        """
        Validator.check_choice("method", method, Validator.KNOWN_METHODS)
        Validator.check_choice("mask_mode", mask_mode, Validator.KNOWN_MASK_MODES)
        self.agent: int = agent
        self.ego: EgoGraph = ego
        self.method: str = method
        self.dims: NetworkDims = dims
        self.model: ModelConfig = model
        self.mask_mode: str = mask_mode
        self.mask_features: Tuple[str, ...] = tuple(mask_features)
        self.action_count: int = action_count
        self.action_mask: np.ndarray = np.arange(dims.action_dim) < action_count

        self.theta: Dict[str, Tensor] = {}
        self.theta.update(_prefixed("encoder", init_encoder_params(method, dims, rng)))
        self.theta.update(_prefixed("lstm", init_lstm_params(encoded_width(method, dims), dims.hidden, rng)))
        self.theta.update(dense_params(rng, dims.hidden, dims.action_dim, "actor"))
        self.omega: Dict[str, Tensor] = dense_params(
            rng, dims.hidden + dims.max_degree * dims.action_dim, 1, "critic")
        self.phi: Dict[str, Tensor] = {}
        if self.learns_mask:
            if model.logit_mode == "free":
                self.phi = _prefixed("edge", init_free_logits(self.edge_count, model.init_logit))
            else:
                self.phi = _prefixed("edge", init_edge_network_params(
                    dims, self.mask_features, rng, model.init_logit))

    @property
    def uses_mask(self) -> bool:
        return self.method == "bayesg"

    @property
    def learns_mask(self) -> bool:
        return self.uses_mask and self.mask_mode == "learned"

    @property
    def edge_count(self) -> int:
        return self.ego.size - 1

    def parameters(self) -> Dict[str, Tensor]:
        """Все параметры агента по именам."""
        return {**self.theta, **self.omega, **self.phi}

    def groups(self) -> Dict[str, Dict[str, Tensor]]:
        """Группы параметров с собственными шагами обучения."""
        return {"theta": self.theta, "omega": self.omega, "phi": self.phi}

    def edge_logits(self, channels: AgentChannels) -> Tensor:
        """Логиты φ формы (K, |N_i|)."""
        if self.model.logit_mode == "free":
            return free_edge_logits(subset(self.phi, "edge"), channels.batch)
        return edge_logit_network(channels, subset(self.phi, "edge"), self.mask_features)

    def presample_mask(self, batch: int, rng: np.random.Generator | None,
                       strategy: str = "sample") -> Tuple[np.ndarray | None, np.ndarray | None]:
        """
        Случайные величины маски, которые draw_mask взял бы из потока агента.

        Позволяет вытянуть шум до обмена сообщениями, не меняя порядок обращений к генератору.

        Returns:
            Tuple[np.ndarray | None, np.ndarray | None]: (логистический шум, значения случайной маски).
        """
        if not self.uses_mask or self.mask_mode == "none":
            return None, None
        shape = (batch, self.edge_count)
        if self.mask_mode == "random":
            return None, (rng.random(shape) < 0.5).astype(np.float64)
        if strategy == "mean":
            return None, None
        return logistic_noise(rng, shape), None

    def draw_mask(self, channels: AgentChannels, tau, rng: np.random.Generator | None, *, training: bool = True,
                  noise: np.ndarray | None = None, values: np.ndarray | None = None,
                  strategy: str = "sample") -> Tuple[Tensor | None, MaskSample | None]:
        """
        Логиты и маска для шага (или батча шагов).

        Args:
            channels (AgentChannels): Признаки окрестности.
            tau: Температура (число или массив (K, 1)).
            rng (np.random.Generator | None): Поток маски агента.
            training (bool): Ослабленная маска (или жёсткая со сквозным градиентом); иначе жёсткая.
            noise (np.ndarray | None): Записанный шум для повторного вычисления.
            values (np.ndarray | None): Записанные значения маски для режима "random".
            strategy (str): "sample" или "mean" (детерминированная маска σ(φ) > 0.5 при исполнении).

        Returns:
            Tuple[Tensor | None, MaskSample | None]: (φ или None, маска или None для методов без маски).
        """
        if not self.uses_mask:
            return None, None
        k, edges = channels.batch, self.edge_count
        if self.mask_mode == "none":
            return None, MaskSample(Tensor(np.ones((k, edges))), np.zeros((k, edges)), 1.0, True)
        if self.mask_mode == "random":
            if values is None:
                _, values = self.presample_mask(k, rng)
            return None, MaskSample(Tensor(values), np.zeros((k, edges)), 1.0, True)
        phi = self.edge_logits(channels)
        if strategy == "mean":
            return phi, mean_mask(phi)
        if training:
            hard = self.model.straight_through
            return phi, sample_mask(phi, tau, rng, hard=hard, straight_through=hard, noise=noise)
        return phi, sample_mask(phi, tau, rng, hard=True, noise=noise)

    def forward(self, channels: AgentChannels, h_prev: Tensor, c_prev: Tensor,
                mask: MaskSample | None) -> PolicyOutput:
        """
        Кодирование окрестности, шаг LSTM и голова актора.

        Args:
            channels (AgentChannels): Признаки окрестности.
            h_prev (Tensor): h_{i,t−1} формы (K, H).
            c_prev (Tensor): c_{i,t−1} формы (K, H).
            mask (MaskSample | None): Маска рёбер (только BayesG).

        Returns:
            PolicyOutput: log π̃, новые (h, c) и A_eff.
        """
        a_eff = None
        if self.uses_mask:
            a_eff = effective_subgraph(mask, self.ego, self.model.neighbor_edges)
        encoded = encode(self.method, channels, a_eff, subset(self.theta, "encoder"), self.dims)
        h, c = lstm_step(h_prev, c_prev, encoded, subset(self.theta, "lstm"))
        log_probs = actor_head(h, subset(self.theta, "actor"), self.action_mask)
        return PolicyOutput(log_probs, h, c, a_eff)

    def value(self, h: Tensor, neighbor_actions: np.ndarray) -> Tensor:
        """V(h, u_N) по копии h без градиента; форма (K,)."""
        return critic_head(h.detach(), Tensor(neighbor_actions), subset(self.omega, "critic"))

    def neighbor_features(self, actions: np.ndarray) -> np.ndarray:
        """One-hot действий соседей агента для критика."""
        return neighbor_action_features(actions, self.ego.neighbors, self.dims.action_dim, self.dims.max_degree)

    def act(self, channels: AgentChannels, h_prev: np.ndarray, c_prev: np.ndarray, tau: float,
            mask_rng: np.random.Generator | None, action_rng: np.random.Generator | None, *,
            training: bool = True, strategy: str = "sample", noise: np.ndarray | None = None,
            mask_values: np.ndarray | None = None, uniform: float | None = None) -> 'AgentDecision':
        """
        Решение агента на одном шаге (K = 1) без записи на ленту.

        Порядок обращений к генераторам: сначала шум маски, затем равномерное число действия.

        Args:
            channels (AgentChannels): Признаки окрестности с K = 1.
            h_prev (np.ndarray): h_{i,t−1} формы (H,).
            c_prev (np.ndarray): c_{i,t−1} формы (H,).
            tau (float): Температура маски.
            mask_rng (np.random.Generator | None): Поток маски.
            action_rng (np.random.Generator | None): Поток действий.
            training (bool): Ослабленная маска обучения или жёсткая маска исполнения.
            strategy (str): "sample" или "mean".
            noise (np.ndarray | None): Повтор записанного шума маски.
            mask_values (np.ndarray | None): Повтор записанной случайной маски.
            uniform (float | None): Повтор записанного равномерного числа.

        Returns:
            AgentDecision: Действие, вероятности, новое состояние LSTM и использованная маска.
        """
        edges = self.edge_count
        _, mask = self.draw_mask(channels, tau, mask_rng, training=training,
                                 noise=None if noise is None else noise.reshape(1, edges),
                                 values=None if mask_values is None else mask_values.reshape(1, edges),
                                 strategy=strategy)
        out = self.forward(channels, Tensor(h_prev.reshape(1, -1)), Tensor(c_prev.reshape(1, -1)), mask)
        log_probs = out.log_probs.data[0]
        probs = np.exp(log_probs)
        if uniform is None:
            uniform = float(action_rng.random())
        action = sample_action(probs, uniform)
        return AgentDecision(
            action=action,
            uniform=uniform,
            log_prob=float(log_probs[action]),
            probs=probs,
            h=out.h.data[0].copy(),
            c=out.c.data[0].copy(),
            mask_noise=np.zeros(edges) if mask is None else np.asarray(mask.noise).reshape(edges),
            mask_values=np.ones(edges) if mask is None else mask.values.data.reshape(edges).copy(),
        )


@dataclass(frozen=True)
class AgentDecision:
    """
    Решение агента на шаге.

    Attributes:
        action (int): Выбранная фаза.
        uniform (float): Равномерное число, по которому выбрано действие.
        log_prob (float): log π̃(action).
        probs (np.ndarray): π̃ (отпечаток политики для следующего шага).
        h (np.ndarray): Новое скрытое состояние.
        c (np.ndarray): Новое состояние ячейки.
        mask_noise (np.ndarray): Шум маски (нули без сэмплирования).
        mask_values (np.ndarray): Значения маски по рёбрам центра.
    """
    action: int
    uniform: float
    log_prob: float
    probs: np.ndarray
    h: np.ndarray
    c: np.ndarray
    mask_noise: np.ndarray
    mask_values: np.ndarray
