"""
Вариационная маска рёбер эго-графа.

Маска Z_i задаётся независимыми Бернулли с параметрами σ(φ_ij) по рёбрам (i, j).
Обучение использует ослабленные сэмплы Gumbel-sigmoid, исполнение — жёсткие.
Здесь же все слагаемые регуляризатора ELBO в замкнутой форме.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np
import pandas as pd

from src.model.EnvGraph import Edge, EgoGraph
from src.model.NeuralBlocks import AgentChannels, NetworkDims, Params, dense_params
from src.model.Tensor import (
    Tensor, add, as_tensor, concat, log_sigmoid, matmul, neg, parameter, relu, reshape, sigmoid, slice_, sum_,
)
from src.utils.Exceptions import ConfigError, MaskError
from src.utils.Validator import Validator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriorConfig:
    """
    Априорное распределение маски и расписание температуры.

    Attributes:
        retention_bias (float): λ ∈ (0, 1), априорная вероятность удержать ребро.
        tau_start (float): Начальная температура.
        tau_end (float): Конечная температура.
        anneal_fraction (float): Доля шагов обучения, за которую τ геометрически падает до tau_end.
    """
    retention_bias: float = 0.5
    tau_start: float = 1.0
    tau_end: float = 0.1
    anneal_fraction: float = 0.5

    def __post_init__(self) -> None:
        Validator.check_retention_bias(self.retention_bias)
        Validator.check_positive("tau_start", self.tau_start)
        Validator.check_positive("tau_end", self.tau_end)
        Validator.check_unit_interval("anneal_fraction", self.anneal_fraction, closed_low=True)

    def temperature(self, step: int, total_steps: int) -> float:
        """
        Температура на шаге обучения.

        Args:
            step (int): Номер шага среды с начала обучения.
            total_steps (int): Общее число шагов обучения.

        Returns:
            float: τ, падающая геометрически от tau_start до tau_end и затем постоянная.
        """
        horizon: float = self.anneal_fraction * total_steps
        if horizon <= 0 or step >= horizon:
            return self.tau_end
        return self.tau_start * (self.tau_end / self.tau_start) ** (step / horizon)


@dataclass(frozen=True)
class MaskSample:
    """
    Сэмпл маски по рёбрам (i, j), j ∈ N_i.

    Attributes:
        values (Tensor): z формы (K, |N_i|); ослабленные значения или 0/1.
        noise (np.ndarray): Логистический шум L, использованный при сэмплировании.
        temperature (float | np.ndarray): Температура τ (число или по шагам).
        hard (bool): True для жёсткой маски.
    """
    values: Tensor
    noise: np.ndarray
    temperature: float | np.ndarray
    hard: bool

    @property
    def edge_count(self) -> int:
        return self.values.shape[-1]


def logistic_noise(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    """Шум L = log u − log(1 − u), u ~ U(0, 1)."""
    return rng.logistic(loc=0.0, scale=1.0, size=shape)


def sample_mask(phi: Tensor, tau: float, rng: np.random.Generator | None = None, hard: bool = False,
                straight_through: bool = False, noise: np.ndarray | None = None) -> MaskSample:
    """
    Сэмплирует маску через ослабление Gumbel-sigmoid.

    Args:
        phi (Tensor): Логиты рёбер формы (K, E) или (E,).
        tau (float | np.ndarray): Температура τ > 0 (или по шагу, форма (K, 1)).
        rng (np.random.Generator | None): Поток агента; не нужен, если передан noise.
        hard (bool): Вернуть 1[φ + L > 0] вместо σ((φ + L)/τ).
        straight_through (bool): Для жёсткой маски пропускать градиент ослабленного сэмпла.
        noise (np.ndarray | None): Заранее записанный шум (повторное вычисление при обновлении).

    Returns:
        MaskSample: Значения, шум и температура.

    Raises:
        ConfigError: Если τ не положительна.
    """
    tau_arr = np.asarray(tau, dtype=np.float64)
    if tau_arr.size == 0 or not np.all(np.isfinite(tau_arr)) or np.any(tau_arr <= 0):
        raise ConfigError(f"Температура должна быть положительной, получено {tau!r}.")
    phi = as_tensor(phi)
    if noise is None:
        noise = logistic_noise(rng, phi.shape)
    noise = np.asarray(noise, dtype=np.float64)
    relaxed = sigmoid((phi + noise) * (1.0 / tau_arr))
    if not hard:
        return MaskSample(relaxed, noise, tau, False)
    hard_values = (phi.data + noise > 0).astype(np.float64)
    if straight_through:
        values = relaxed + (hard_values - relaxed.data)
    else:
        values = Tensor(hard_values)
    return MaskSample(values, noise, tau, True)


def mean_mask(phi: Tensor) -> MaskSample:
    """Детерминированная маска 1[σ(φ) > 0.5] для исполнения без сэмплирования."""
    phi = as_tensor(phi)
    return MaskSample(Tensor((phi.data > 0).astype(np.float64)), np.zeros(phi.shape), 1.0, True)


def mask_from_edges(edge_values: Mapping[Edge, float], ego: EgoGraph) -> Tensor:
    """
    Собирает вектор маски (1, |N_i|) из значений по рёбрам.

    Raises:
        MaskError: Если ребро не инцидентно центру эго-графа или не существует.
    """
    allowed: Dict[Edge, int] = {edge: k for k, edge in enumerate(ego.center_edges)}
    values: np.ndarray = np.zeros((1, len(allowed)))
    for (u, v), value in edge_values.items():
        key = (u, v) if (u, v) in allowed else (v, u)
        if key not in allowed:
            raise MaskError(f"Ребро ({u}, {v}) не входит в эго-граф агента {ego.center}.")
        values[0, allowed[key]] = value
    return Tensor(values)


def effective_subgraph(z: MaskSample | Tensor, ego: EgoGraph, neighbor_edges: bool = True) -> Tensor:
    """
    Эффективная смежность A_eff = (z̄ z̄ᵀ) ⊙ A_ego, где z̄ = [1, z].

    Ребро центра (i, j) получает вес z_j; ребро между соседями (j, k) — z_j·z_k
    (или 0 при neighbor_edges=False).

    Args:
        z (MaskSample | Tensor): Маска формы (K, |N_i|).
        ego (EgoGraph): Эго-граф.
        neighbor_edges (bool): Пропускать ли сообщения по рёбрам между соседями.

    Returns:
        Tensor: A_eff формы (K, |V_i|, |V_i|), поэлементно не больше смежности эго-графа.

    Raises:
        MaskError: Если число значений маски не совпадает с числом рёбер центра.
    """
    values = z.values if isinstance(z, MaskSample) else as_tensor(z)
    if values.ndim == 1:
        values = reshape(values, (1, values.shape[0]))
    k, edges = values.shape
    if edges != ego.size - 1:
        raise MaskError(f"Маска из {edges} значений не соответствует {ego.size - 1} рёбрам агента {ego.center}.")
    full = concat([Tensor(np.ones((k, 1))), values], axis=-1)
    m: int = ego.size
    outer = reshape(full, (k, m, 1)) * reshape(full, (k, 1, m))
    support = ego.adjacency if neighbor_edges else ego.center_adjacency()
    return outer * support


def _check_lambda(lam) -> np.ndarray:
    lam_arr = np.asarray(lam, dtype=np.float64)
    for value in np.atleast_1d(lam_arr).ravel():
        Validator.check_retention_bias(float(value))
    return lam_arr


def prior_log_prob_expectation(phi, lam) -> Tensor:
    """
    E_q[log p(Z)] = Σ σ(φ)·log λ + (1 − σ(φ))·log(1 − λ) по последней оси.

    Raises:
        ConfigError: Если λ вне (0, 1).
    """
    lam_arr = _check_lambda(lam)
    sigma = sigmoid(phi)
    terms = sigma * np.log(lam_arr) + (1.0 - sigma) * np.log1p(-lam_arr)
    return sum_(terms, axis=-1)


def prior_cross_term(phi, lam) -> Tensor:
    """Априорное слагаемое в итоговой группировке: Σ λ·log σ(φ) + (1 − λ)·log(1 − σ(φ))."""
    lam_arr = _check_lambda(lam)
    phi = as_tensor(phi)
    terms = log_sigmoid(phi) * lam_arr + log_sigmoid(neg(phi)) * (1.0 - lam_arr)
    return sum_(terms, axis=-1)


def mask_entropy(phi) -> Tensor:
    """Сумма энтропий Бернулли −σ log σ − (1 − σ) log(1 − σ) по рёбрам."""
    phi = as_tensor(phi)
    sigma = sigmoid(phi)
    terms = sigma * log_sigmoid(phi) + (1.0 - sigma) * log_sigmoid(neg(phi))
    return -sum_(terms, axis=-1)


def elbo_regularizer(phi, lam) -> Tensor:
    """
    Регуляризатор ELBO: Σ (λ + σ)·log σ(φ) + (2 − λ − σ)·log(1 − σ(φ)).

    Совпадает с prior_cross_term − mask_entropy.

    Raises:
        ConfigError: Если λ вне (0, 1).
    """
    lam_arr = _check_lambda(lam)
    phi = as_tensor(phi)
    sigma = sigmoid(phi)
    terms = (sigma + lam_arr) * log_sigmoid(phi) + (2.0 - lam_arr - sigma) * log_sigmoid(neg(phi))
    return sum_(terms, axis=-1)


def elbo_identity_report(phi: np.ndarray, lam: np.ndarray) -> pd.DataFrame:
    """
    Сверка форм регуляризатора на сетке (φ, λ), по одному ребру на строку.

    Args:
        phi (np.ndarray): Логиты.
        lam (np.ndarray): Значения λ той же формы.

    Returns:
        pd.DataFrame: Колонки phi, lam, regularizer, regrouping_error
        (регуляризатор минус prior_cross_term − mask_entropy) и prior_forms_residual
        (разность [σ log λ + (1−σ) log(1−λ)] − [λ log σ + (1−λ) log(1−σ)]).
    """
    phi_col = np.asarray(phi, dtype=np.float64).reshape(-1, 1)
    lam_col = np.asarray(lam, dtype=np.float64).reshape(-1, 1)
    reg = elbo_regularizer(phi_col, lam_col).data
    grouped = prior_cross_term(phi_col, lam_col).data - mask_entropy(phi_col).data
    residual = prior_log_prob_expectation(phi_col, lam_col).data - prior_cross_term(phi_col, lam_col).data
    report = pd.DataFrame({
        "phi": phi_col[:, 0],
        "lam": lam_col[:, 0],
        "regularizer": reg,
        "regrouping_error": reg - grouped,
        "prior_forms_residual": residual,
    })
    logger.info(
        "Сверка ELBO: max|ошибка перегруппировки| = %.3e, max|расхождение форм априори| = %.3e",
        float(np.abs(report["regrouping_error"].to_numpy()).max(initial=0.0)),
        float(np.abs(report["prior_forms_residual"].to_numpy()).max(initial=0.0)),
    )
    return report


def retention_probabilities(phi) -> np.ndarray:
    """σ(φ) как массив."""
    return sigmoid(as_tensor(phi).detach()).data


def init_edge_network_params(dims: NetworkDims, features: Tuple[str, ...], rng: np.random.Generator,
                             init_logit: float = 0.0) -> Dict[str, Tensor]:
    """
    Параметры сети логитов рёбер ψ_i.

    Args:
        dims (NetworkDims): Размеры сетей.
        features (Tuple[str, ...]): Используемые признаки ("state", "policy", "trajectory").
        rng (np.random.Generator): Генератор инициализации.
        init_logit (float): Начальное смещение выхода (стартовая вероятность удержания σ(init_logit)).

    Returns:
        Dict[str, Tensor]: "hidden.weight|bias" и "out.weight|bias".
    """
    widths = {"state": dims.obs_dim, "policy": dims.action_dim, "trajectory": dims.hidden}
    fan_in: int = 2 * sum(widths[f] for f in features)
    params = dense_params(rng, fan_in, dims.embed, "hidden")
    params.update(dense_params(rng, dims.embed, 1, "out"))
    params["out.bias"].data[:] = init_logit
    return params


def edge_logit_network(ch: AgentChannels, params: Params, features: Tuple[str, ...]) -> Tensor:
    """
    Логиты φ_ij по признакам ребра [x_i, x_j] выбранных каналов.

    Args:
        ch (AgentChannels): Признаки окрестности.
        params (Params): Параметры ψ_i.
        features (Tuple[str, ...]): Каналы, подаваемые в сеть; прочие не влияют на выход.

    Returns:
        Tensor: φ формы (K, |N_i|).
    """
    k, m = ch.batch, ch.members
    edges: int = m - 1
    if edges == 0:
        return Tensor(np.zeros((k, 0)))
    spread = np.ones((1, edges, 1))
    parts: list[Tensor] = []
    for name in features:
        x = ch.channel(name)
        parts.append(slice_(x, (slice(None), slice(0, 1), slice(None))) * spread)
        parts.append(slice_(x, (slice(None), slice(1, None), slice(None))))
    edge_features = concat(parts, axis=-1)
    hidden = relu(matmul(edge_features, params["hidden.weight"]) + params["hidden.bias"])
    logits = matmul(hidden, params["out.weight"]) + params["out.bias"]
    return reshape(logits, (k, edges))


def init_free_logits(edge_count: int, init_logit: float = 0.0) -> Dict[str, Tensor]:
    """Свободные логиты φ_i (по одному на ребро центра)."""
    return {"phi": parameter(np.full(edge_count, float(init_logit)), "phi")}


def free_edge_logits(params: Params, batch: int) -> Tensor:
    """Свободные логиты, размноженные на K шагов: форма (K, |N_i|)."""
    phi = params["phi"]
    return add(reshape(phi, (1, phi.shape[0])), np.zeros((batch, phi.shape[0])))
