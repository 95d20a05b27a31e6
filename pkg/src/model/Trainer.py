import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from src.model.AgentPolicy import AgentDecision, AgentPolicy, ModelConfig, PolicyOutput, build_channels, one_hot
from src.model.EnvGraph import EgoGraph, EnvGraph, ego_graph
from src.model.LatentMask import PriorConfig, elbo_regularizer, logistic_noise, mask_entropy, prior_cross_term
from src.model.NeuralBlocks import NetworkDims, policy_entropy
from src.model.Optimizer import Optimizer, step_groups
from src.model.RolloutBuffer import RolloutBatch, RolloutBuffer, StepRecord, spatially_discounted_returns
from src.model.Tensor import ComputationTape, Tensor, backward, clip, mean, sum_
from src.model.TrafficEnv import EnvConfig, TrafficEnv
from src.paths import output_dir
from src.utils.Exceptions import ConfigError, NonFiniteError, NumericError
from src.utils.Utilities import Utilities
from src.utils.Validator import Validator
from src.view.ui_notifications import close_progress, show_progress

logger = logging.getLogger(__name__)

# Нижняя граница log π̃ записанного действия
LOG_PROB_FLOOR: float = -30.0

# Заголовок CSV метрик обновлений
METRICS_COLUMNS: Tuple[str, ...] = (
    "step", "episode", "mean_return", "policy_loss", "value_loss", "elbo_loss",
    "prior_loss", "mask_entropy", "total_loss", "wall_clock",
)


@dataclass(frozen=True)
class TrainConfig:
    """
    Параметры обучения A2C.

    Длина эпизода T задаётся в EnvConfig, λ и температура маски в PriorConfig.

    Attributes:
        gamma (float): Временной дисконт γ ∈ (0, 1].
        alpha (float): Пространственный дисконт α ∈ (0, 1].
        beta (float): Вес энтропийного слагаемого β ≥ 0.
        rollout_length (int): |ℬ|, шагов между обновлениями.
        episodes (int): Число эпизодов обучения.
        lr_theta (float): η_θ (кодировщик, LSTM, актор).
        lr_omega (float): η_ω (критик).
        lr_phi (float): η_φ (логиты рёбер).
        optimizer (str): "adam" или "sgd".
        max_grad_norm (float): Порог отсечения по общей норме градиента агента (θ, ω и φ вместе).
        method (str): "bayesg", "ia2c", "commnet" или "neurcomm".
        mask_mode (str): "learned", "none" или "random".
        mask_features (Tuple[str, ...]): Признаки сети логитов.
        entropy_sign (int): +1 — слагаемое +β·ℋ, −1 — слагаемое +β·Σπ log π.
        elbo_weight (float): Вес регуляризатора ELBO.
        value_coef (float): Вес потерь критика в общей сумме.
        mask_samples (int): Число сэмплов маски в оценке потерь актора.
        workers (int): Потоков для обновлений агентов.
        checkpoint_every (int): Период чекпоинтов в обновлениях (0 — только в конце).
    """
    gamma: float = 0.99
    alpha: float = 0.9
    beta: float = 0.01
    rollout_length: int = 40
    episodes: int = 300
    lr_theta: float = 5e-4
    lr_omega: float = 2.5e-4
    lr_phi: float = 5e-4
    optimizer: str = "adam"
    max_grad_norm: float = 40.0
    method: str = "bayesg"
    mask_mode: str = "learned"
    mask_features: Tuple[str, ...] = ("state", "trajectory", "policy")
    entropy_sign: int = 1
    elbo_weight: float = 1.0
    value_coef: float = 0.5
    mask_samples: int = 1
    workers: int = 4
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        Validator.check_unit_interval("gamma", self.gamma)
        Validator.check_unit_interval("alpha", self.alpha)
        Validator.check_non_negative("beta", self.beta)
        for name in ("rollout_length", "episodes", "lr_theta", "lr_omega", "lr_phi",
                     "max_grad_norm", "mask_samples", "workers"):
            Validator.check_positive(name, getattr(self, name))
        Validator.check_non_negative("elbo_weight", self.elbo_weight)
        Validator.check_non_negative("value_coef", self.value_coef)
        Validator.check_non_negative("checkpoint_every", self.checkpoint_every)
        Validator.check_choice("optimizer", self.optimizer, Validator.KNOWN_OPTIMIZERS)
        Validator.check_choice("method", self.method, Validator.KNOWN_METHODS)
        Validator.check_choice("mask_mode", self.mask_mode, Validator.KNOWN_MASK_MODES)
        Validator.check_choice("entropy_sign", str(self.entropy_sign), ("1", "-1"))
        object.__setattr__(self, "mask_features", Validator.check_mask_features(self.mask_features))

    @property
    def entropy_convention(self) -> str:
        return "+β·ℋ, ℋ = −Σπ log π" if self.entropy_sign > 0 else "+β·Σπ log π"


@dataclass(frozen=True)
class LossBreakdown:
    """
    Компоненты потерь одного обновления агента.

    total_loss = elbo_loss + value_coef·value_loss; elbo_loss = policy_loss − elbo_weight·регуляризатор.

    Attributes:
        policy_loss (float): Потери актора.
        value_loss (float): Потери критика.
        elbo_loss (float): Потери актора с регуляризатором маски.
        prior_loss (float): −E_q[log p(Z)] в форме перекрёстного слагаемого.
        mask_entropy (float): Энтропия q(Z).
        total_loss (float): Оптимизируемая сумма.
        clamped (int): Сколько log π̃ записанных действий ограничено снизу.
    """
    policy_loss: float
    value_loss: float
    elbo_loss: float
    prior_loss: float
    mask_entropy: float
    total_loss: float
    clamped: int = 0

    @classmethod
    def from_terms(cls, terms: Dict[str, Tensor], clamped: int) -> 'LossBreakdown':
        return cls(
            policy_loss=terms["policy"].item(),
            value_loss=terms["value"].item(),
            elbo_loss=terms["elbo"].item(),
            prior_loss=terms["prior"].item(),
            mask_entropy=terms["mask_entropy"].item(),
            total_loss=terms["total"].item(),
            clamped=clamped,
        )


@dataclass(frozen=True)
class JointDecision:
    """Решения всех агентов на шаге; values заполняются вторым проходом."""
    actions: np.ndarray
    uniforms: np.ndarray
    log_probs: np.ndarray
    probs: np.ndarray
    h: np.ndarray
    c: np.ndarray
    mask_noise: Tuple[np.ndarray, ...]
    mask_values: Tuple[np.ndarray, ...]
    values: np.ndarray | None = None

    @classmethod
    def from_decisions(cls, decisions: Sequence[AgentDecision]) -> 'JointDecision':
        return cls(
            actions=np.array([d.action for d in decisions], dtype=np.int64),
            uniforms=np.array([d.uniform for d in decisions]),
            log_probs=np.array([d.log_prob for d in decisions]),
            probs=np.stack([d.probs for d in decisions]),
            h=np.stack([d.h for d in decisions]),
            c=np.stack([d.c for d in decisions]),
            mask_noise=tuple(d.mask_noise for d in decisions),
            mask_values=tuple(d.mask_values for d in decisions),
        )


@dataclass
class TrainResult:
    """
    Итог обучения одного сида.

    Attributes:
        policies (List[AgentPolicy]): Обученные агенты.
        metrics (List[dict]): Строки метрик по обновлениям (столбцы METRICS_COLUMNS).
        episodes (List[dict]): Итоги эпизодов: episode, return, steps.
        steps (int): Шагов среды.
        updates (int): Обновлений.
        clamped (int): Всего ограниченных log π̃.
    """
    policies: List[AgentPolicy]
    metrics: List[dict] = field(default_factory=list)
    episodes: List[dict] = field(default_factory=list)
    steps: int = 0
    updates: int = 0
    clamped: int = 0

    @property
    def episode_returns(self) -> List[float]:
        return [row["return"] for row in self.episodes]


@dataclass(frozen=True)
class EvaluationResult:
    """
    Итог оценочных прогонов с жёсткими масками.

    Attributes:
        returns (List[float]): Возврат каждого эпизода.
        actions (List[np.ndarray]): Действия по эпизодам, формы (T, N).
        masks (List[Tuple[np.ndarray, ...]]): Маски по эпизодам и агентам, формы (T, |N_i|).
        snapshot (Tuple | None): (s, π, h) всех агентов перед решением на шаге snapshot_step первого эпизода.
        trajectory (pd.DataFrame | None): Построчная траектория первого эпизода, если она записывалась.
    """
    returns: List[float]
    actions: List[np.ndarray]
    masks: List[Tuple[np.ndarray, ...]]
    snapshot: Tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    trajectory: pd.DataFrame | None = None


def make_dims(env: TrafficEnv, model: ModelConfig) -> NetworkDims:
    """Размеры сетей для среды."""
    return NetworkDims(obs_dim=env.obs_dim, action_dim=env.max_phases, hidden=model.hidden, embed=model.embed,
                       max_degree=max(env.graph.max_degree, 1), gcn_layers=model.gcn_layers)


def build_policies(env: TrafficEnv, model: ModelConfig, config: TrainConfig, seed: int) -> List[AgentPolicy]:
    """
    Создаёт агентов для всех узлов среды.

    Args:
        env (TrafficEnv): Среда.
        model (ModelConfig): Архитектура.
        config (TrainConfig): Метод и режим маски.
        seed (int): Сид потока инициализации.

    Returns:
        List[AgentPolicy]: Агенты в порядке узлов.
    """
    dims = make_dims(env, model)
    rngs = Utilities.make_generators(seed, env.node_count, "init")
    return [
        AgentPolicy(i, ego_graph(env.graph, i), config.method, dims, model, config.mask_mode,
                    config.mask_features, env.action_counts[i], rngs[i])
        for i in range(env.node_count)
    ]


def decide_joint(policies: Sequence[AgentPolicy], observations: np.ndarray, fingerprints: np.ndarray,
                 hidden: np.ndarray, cells: np.ndarray, tau: float,
                 mask_rngs: Sequence[np.random.Generator], action_rngs: Sequence[np.random.Generator], *,
                 training: bool = True, strategy: str = "sample",
                 replay: JointDecision | None = None) -> JointDecision:
    """
    Решения всех агентов по глобальным массивам шага.

    Args:
        policies (Sequence[AgentPolicy]): Агенты.
        observations (np.ndarray): s_t формы (N, d_s).
        fingerprints (np.ndarray): π_{t−1} формы (N, d_π).
        hidden (np.ndarray): h_{t−1} формы (N, d_h).
        cells (np.ndarray): c_{t−1} формы (N, d_h).
        tau (float): Температура маски.
        mask_rngs (Sequence[np.random.Generator]): Потоки масок по агентам.
        action_rngs (Sequence[np.random.Generator]): Потоки действий по агентам.
        training (bool): Ослабленные маски обучения или жёсткие маски исполнения.
        strategy (str): "sample" или "mean".
        replay (JointDecision | None): Решение, шум и равномерные числа которого повторяются.

    Returns:
        JointDecision: Решения без значений критика.
    """
    obs, fps, hid = observations[None], fingerprints[None], hidden[None]
    decisions: List[AgentDecision] = []
    for i, policy in enumerate(policies):
        channels = build_channels(obs, fps, hid, policy.ego.members)
        decisions.append(policy.act(
            channels, hidden[i], cells[i], tau, mask_rngs[i], action_rngs[i],
            training=training, strategy=strategy,
            noise=None if replay is None else replay.mask_noise[i],
            mask_values=None if replay is None else replay.mask_values[i],
            uniform=None if replay is None else float(replay.uniforms[i]),
        ))
    return JointDecision.from_decisions(decisions)


def joint_values(policies: Sequence[AgentPolicy], decision: JointDecision) -> np.ndarray:
    """Второй проход: v_i по новому h_i и one-hot действиям соседей этого шага."""
    actions = decision.actions[None]
    return np.array([
        float(policy.value(Tensor(decision.h[i][None]), policy.neighbor_features(actions)).data[0])
        for i, policy in enumerate(policies)
    ])


def replay_forward(policy: AgentPolicy, batch: RolloutBatch,
                   noise: np.ndarray | None = None) -> Tuple[PolicyOutput, Tensor | None]:
    """
    Повторный прямой проход агента по всему батчу (K = |ℬ|) при текущих параметрах.

    Args:
        policy (AgentPolicy): Агент.
        batch (RolloutBatch): Батч.
        noise (np.ndarray | None): Шум маски формы (L, |N_i|); по умолчанию записанный.

    Returns:
        Tuple[PolicyOutput, Tensor | None]: Выход сетей и логиты φ (только для обучаемой маски).
    """
    i = policy.agent
    channels = build_channels(batch.observations, batch.fingerprints, batch.hidden, policy.ego.members)
    phi, mask = policy.draw_mask(channels, batch.temperatures.reshape(-1, 1), None, training=True,
                                 noise=batch.mask_noise[i] if noise is None else noise,
                                 values=batch.mask_values[i])
    out = policy.forward(channels, Tensor(batch.hidden[:, i]), Tensor(batch.cells[:, i]), mask)
    return out, phi


def actor_loss(policy: AgentPolicy, batch: RolloutBatch, advantages: np.ndarray, beta: float,
               entropy_sign: int = 1, outputs: Sequence[PolicyOutput] | None = None) -> Tuple[Tensor, int]:
    """
    Потери актора: среднее по ℬ от −log π̃(u)·Â плюс энтропийное слагаемое.

    Args:
        policy (AgentPolicy): Агент.
        batch (RolloutBatch): Батч.
        advantages (np.ndarray): Â формы (L,), константа.
        beta (float): β.
        entropy_sign (int): +1 — +β·ℋ, −1 — +β·Σπ log π.
        outputs (Sequence[PolicyOutput] | None): Прямые проходы по сэмплам маски; по умолчанию один
            проход с записанным шумом.

    Returns:
        Tuple[Tensor, int]: Скалярные потери и число ограниченных снизу log π̃.
    """
    if outputs is None:
        outputs = [replay_forward(policy, batch)[0]]
    taken = one_hot(batch.actions[:, policy.agent], policy.dims.action_dim)
    losses: List[Tensor] = []
    clamped: int = 0
    for out in outputs:
        log_prob = sum_(out.log_probs * taken, axis=-1)
        clamped += int(np.sum(log_prob.data < LOG_PROB_FLOOR))
        log_prob = clip(log_prob, low=LOG_PROB_FLOOR)
        gradient_term = mean(-(log_prob * advantages))
        losses.append(gradient_term + (entropy_sign * beta) * mean(policy_entropy(out.log_probs)))
    loss = losses[0]
    for extra in losses[1:]:
        loss = loss + extra
    if len(losses) > 1:
        loss = loss * (1.0 / len(losses))
    return loss, clamped


def elbo_loss(actor: Tensor, phi: Tensor | None, lam: float, weight: float = 1.0) -> Tensor:
    """Минимизируемая цель actor − weight·mean(регуляризатор); без обучаемой маски равна actor."""
    if phi is None:
        return actor
    return actor - weight * mean(elbo_regularizer(phi, lam))


def critic_loss(policy: AgentPolicy, batch: RolloutBatch, returns: np.ndarray,
                output: PolicyOutput | None = None) -> Tensor:
    """(1/|ℬ|)·Σ (V − R̂)²; градиент идёт только в ω."""
    if output is None:
        output = replay_forward(policy, batch)[0]
    values = policy.value(output.h, policy.neighbor_features(batch.actions))
    diff = values - returns
    return mean(diff * diff)


def agent_losses(policy: AgentPolicy, batch: RolloutBatch, returns: np.ndarray, config: TrainConfig,
                 lam: float, rng: np.random.Generator | None = None) -> Tuple[Dict[str, Tensor], int]:
    """
    Все компоненты потерь агента на одном батче (вызывать под активной лентой).

    Args:
        policy (AgentPolicy): Агент.
        batch (RolloutBatch): Батч.
        returns (np.ndarray): R̂ агента формы (L,).
        config (TrainConfig): Веса потерь.
        lam (float): Априорная вероятность ребра λ.
        rng (np.random.Generator | None): Поток дополнительных сэмплов маски (mask_samples > 1).

    Returns:
        Tuple[Dict[str, Tensor], int]: Компоненты policy, value, elbo, prior, mask_entropy, total и
        число ограниченных log π̃.
    """
    advantage_values = returns - batch.values[:, policy.agent]
    out, phi = replay_forward(policy, batch)
    outputs = [out]
    if policy.learns_mask and config.mask_samples > 1:
        shape = batch.mask_noise[policy.agent].shape
        for _ in range(config.mask_samples - 1):
            outputs.append(replay_forward(policy, batch, noise=logistic_noise(rng, shape))[0])
    policy_loss, clamped = actor_loss(policy, batch, advantage_values, config.beta, config.entropy_sign, outputs)
    value_loss = critic_loss(policy, batch, returns, out)
    elbo = elbo_loss(policy_loss, phi, lam, config.elbo_weight)
    if phi is None:
        prior, entropy = Tensor(0.0), Tensor(0.0)
    else:
        prior = -mean(prior_cross_term(phi, lam))
        entropy = mean(mask_entropy(phi))
    total = elbo + config.value_coef * value_loss
    terms = {"policy": policy_loss, "value": value_loss, "elbo": elbo, "prior": prior,
             "mask_entropy": entropy, "total": total}
    return terms, clamped


class Trainer:
    """
    Цикл обучения: сбор траектории, обновления агентов каждые |ℬ| шагов и в конце эпизода.

    Обновления агентов независимы и выполняются в пуле потоков; результаты собираются
    в порядке агентов, поэтому итог не зависит от числа потоков.
    """

    def __init__(self, graph: EnvGraph, env_config: EnvConfig | None = None, model: ModelConfig | None = None,
                 prior: PriorConfig | None = None, config: TrainConfig | None = None, seed: int = 0,
                 progress: bool = False, diagnostics_dir: Path | None = None,
                 on_update: Callable[['Trainer', dict], None] | None = None) -> None:
        """
        Инициализация обучения.

        Args:
            graph (EnvGraph): Граф среды.
            env_config (EnvConfig | None): Параметры среды.
            model (ModelConfig | None): Архитектура агентов.
            prior (PriorConfig | None): Априорное распределение и температура маски.
            config (TrainConfig | None): Параметры обучения.
            seed (int): Сид прогона.
            progress (bool): Показывать индикатор выполнения.
            diagnostics_dir (Path | None): Куда сохранять батч при нечисловых потерях.
            on_update (Callable | None): Вызывается после каждого обновления со строкой метрик.
        """
        self.graph: EnvGraph = graph
        self.env_config: EnvConfig = env_config or EnvConfig()
        self.model: ModelConfig = model or ModelConfig()
        self.prior: PriorConfig = prior or PriorConfig()
        self.config: TrainConfig = config or TrainConfig()
        self.seed: int = int(seed)
        self.progress: bool = progress
        self.diagnostics_dir: Path = Path(diagnostics_dir) if diagnostics_dir else output_dir() / "diagnostics"
        self.on_update = on_update

        self.env: TrafficEnv = TrafficEnv(graph, self.env_config, self.seed)
        self.policies: List[AgentPolicy] = build_policies(self.env, self.model, self.config, self.seed)
        self.egos: List[EgoGraph] = [p.ego for p in self.policies]
        n: int = self.env.node_count
        self.mask_rngs = Utilities.make_generators(self.seed, n, "mask")
        self.action_rngs = Utilities.make_generators(self.seed, n, "action")
        self.extra_mask_rngs = Utilities.make_generators(self.seed, n, "mask-extra")
        learning_rates = {"theta": self.config.lr_theta, "omega": self.config.lr_omega, "phi": self.config.lr_phi}
        self.optimizers: List[Dict[str, Optimizer]] = [
            {group: Optimizer(params, learning_rates[group], self.config.optimizer, max_norm=None)
             for group, params in policy.groups().items() if params}
            for policy in self.policies
        ]
        self.total_steps: int = self.config.episodes * self.env_config.episode_length
        self.global_step: int = 0
        self.episode: int = 0
        self.updates: int = 0
        self.result: TrainResult = TrainResult(policies=self.policies)
        self._started: float = 0.0

    def temperature(self) -> float:
        return self.prior.temperature(self.global_step, self.total_steps)

    def decide(self, observations: np.ndarray, fingerprints: np.ndarray, hidden: np.ndarray, cells: np.ndarray,
               replay: JointDecision | None = None) -> JointDecision:
        """Решения агентов и значения критика для текущего шага обучения."""
        decision = decide_joint(self.policies, observations, fingerprints, hidden, cells, self.temperature(),
                                self.mask_rngs, self.action_rngs, training=True, replay=replay)
        return replace(decision, values=joint_values(self.policies, decision))

    def train(self) -> TrainResult:
        """
        Полный цикл обучения.

        Returns:
            TrainResult: Агенты, метрики обновлений и итоги эпизодов.

        Raises:
            NumericError: Если потери или градиенты стали нечисловыми.
        """
        logger.info("Обучение %s (маска %s, сид %d): энтропийное слагаемое %s",
                    self.config.method, self.config.mask_mode, self.seed, self.config.entropy_convention)
        n, width, hidden_size = self.env.node_count, self.env.max_phases, self.model.hidden
        buffer = RolloutBuffer(self.config.rollout_length)
        self._started = time.perf_counter()
        progress = show_progress(self.config.episodes, f"Обучение, сид {self.seed}", enabled=self.progress)

        observations = self.env.observations()
        fingerprints, hidden, cells = np.zeros((n, width)), np.zeros((n, hidden_size)), np.zeros((n, hidden_size))
        episode_return, episode_steps = 0.0, 0
        decision = self.decide(observations, fingerprints, hidden, cells)
        try:
            while self.episode < self.config.episodes:
                tau = self.temperature()
                outcome = self.env.step(decision.actions)
                buffer.append(StepRecord(
                    observations=observations, fingerprints=fingerprints, hidden=hidden, cells=cells,
                    actions=decision.actions, uniforms=decision.uniforms, log_probs=decision.log_probs,
                    values=decision.values, rewards=outcome.rewards, done=outcome.done, temperature=tau,
                    mask_noise=decision.mask_noise, mask_values=decision.mask_values,
                ), self.global_step)
                self.global_step += 1
                episode_steps += 1
                episode_return += float(outcome.rewards.sum())

                if outcome.done:
                    self._update(buffer, np.zeros(n))
                    self.result.episodes.append({"episode": self.episode, "return": episode_return,
                                                 "steps": episode_steps})
                    logger.debug("Эпизод %d: возврат %.3f", self.episode, episode_return)
                    self.episode += 1
                    progress.update(1)
                    if self.episode >= self.config.episodes:
                        break
                    observations = self.env.reset()
                    fingerprints, hidden, cells = np.zeros_like(fingerprints), np.zeros_like(hidden), np.zeros_like(cells)
                    episode_return, episode_steps = 0.0, 0
                    decision = self.decide(observations, fingerprints, hidden, cells)
                    continue

                observations = outcome.observations
                fingerprints, hidden, cells = decision.probs, decision.h, decision.c
                decision = self.decide(observations, fingerprints, hidden, cells)
                if buffer.is_full:
                    self._update(buffer, decision.values)
                    decision = self.decide(observations, fingerprints, hidden, cells, replay=decision)
        finally:
            close_progress(progress)
        self.result.steps = self.global_step
        self.result.updates = self.updates
        return self.result

    def _update(self, buffer: RolloutBuffer, bootstrap: np.ndarray) -> None:
        batch = buffer.to_batch(bootstrap)
        buffer.clear()
        try:
            outcomes = self._update_agents(batch)
        except NumericError as e:
            dump = self._dump_batch(batch)
            logger.error("Нечисловые потери на шаге %d, батч сохранён в %s: %s", batch.start_step, dump, e)
            raise NonFiniteError(f"{e} Батч сохранён в '{dump}'.") from e

        breakdowns = [b for b, _ in outcomes]
        clamped = sum(b.clamped for b in breakdowns)
        if clamped:
            logger.warning("Обновление %d: %d значений log π ограничены снизу %.0f",
                           self.updates, clamped, LOG_PROB_FLOOR)
        self.result.clamped += clamped
        row = {
            "step": self.global_step,
            "episode": self.episode,
            "mean_return": float(np.mean([r for _, r in outcomes])),
            "policy_loss": float(np.mean([b.policy_loss for b in breakdowns])),
            "value_loss": float(np.mean([b.value_loss for b in breakdowns])),
            "elbo_loss": float(np.mean([b.elbo_loss for b in breakdowns])),
            "prior_loss": float(np.mean([b.prior_loss for b in breakdowns])),
            "mask_entropy": float(np.mean([b.mask_entropy for b in breakdowns])),
            "total_loss": float(np.mean([b.total_loss for b in breakdowns])),
            "wall_clock": time.perf_counter() - self._started,
        }
        self.updates += 1
        self.result.metrics.append(row)
        if self.on_update is not None:
            self.on_update(self, row)

    def _update_agents(self, batch: RolloutBatch) -> List[Tuple[LossBreakdown, float]]:
        results: Dict[int, Tuple[LossBreakdown, float]] = {}
        with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
            futures = {executor.submit(self.update_agent, i, batch): i for i in range(len(self.policies))}
            for future in as_completed(futures):
                results[futures[future]] = future.result()
        return [results[i] for i in range(len(self.policies))]

    def update_agent(self, i: int, batch: RolloutBatch) -> Tuple[LossBreakdown, float]:
        """
        Обновление одного агента по батчу.

        Args:
            i (int): Агент.
            batch (RolloutBatch): Батч.

        Returns:
            Tuple[LossBreakdown, float]: Компоненты потерь и средний R̂ агента.

        Raises:
            NonFiniteError: Если потери не конечны (параметры не меняются).
            NumericError: Если не конечен градиент любой группы (не меняется ни одна группа).
        """
        policy = self.policies[i]
        returns = spatially_discounted_returns(batch, self.egos[i], self.config.gamma, self.config.alpha)
        with ComputationTape() as tape:
            terms, clamped = agent_losses(policy, batch, returns, self.config, self.prior.retention_bias,
                                          self.extra_mask_rngs[i])
        total = terms["total"]
        if not math.isfinite(total.item()):
            raise NonFiniteError(f"Потери агента {i} не конечны: {total.item()!r}.")
        grads = backward(tape, total, policy.parameters().values())
        step_groups(self.optimizers[i],
                    {group: {name: grads[tensor] for name, tensor in optimizer.params.items()}
                     for group, optimizer in self.optimizers[i].items()},
                    self.config.max_grad_norm)
        return LossBreakdown.from_terms(terms, clamped), float(np.mean(returns))

    def _dump_batch(self, batch: RolloutBatch) -> Path:
        Utilities.create_directory(self.diagnostics_dir)
        path = self.diagnostics_dir / f"nonfinite_seed{self.seed}_step{batch.start_step}.npz"
        np.savez(path, **batch.arrays())
        return path

    def state_tensors(self) -> Dict[str, np.ndarray]:
        """
        Параметры и состояние оптимизаторов всех агентов по именам.

        Returns:
            Dict[str, np.ndarray]: "agent<i>.<параметр>" и "agent<i>.opt.<группа>.<ключ>".
        """
        tensors: Dict[str, np.ndarray] = {}
        for i, policy in enumerate(self.policies):
            for name, tensor in policy.parameters().items():
                tensors[f"agent{i}.{name}"] = tensor.data
            for group, optimizer in self.optimizers[i].items():
                for key, value in optimizer.state_arrays().items():
                    tensors[f"agent{i}.opt.{group}.{key}"] = value
        return tensors

    def load_state_tensors(self, tensors: Dict[str, np.ndarray]) -> None:
        """Загружает представление state_tensors (недостающие состояния оптимизатора сбрасываются)."""
        load_parameters(self.policies, tensors)
        for i, optimizers in enumerate(self.optimizers):
            for group, optimizer in optimizers.items():
                prefix = f"agent{i}.opt.{group}."
                optimizer.load_state_arrays({k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})


def load_parameters(policies: Sequence[AgentPolicy], tensors: Dict[str, np.ndarray]) -> None:
    """
    Записывает параметры агентов из словаря "agent<i>.<параметр>".

    Raises:
        KeyError: Если параметра нет в словаре.
        ValueError: Если форма не совпадает.
    """
    for i, policy in enumerate(policies):
        for name, tensor in policy.parameters().items():
            value = np.asarray(tensors[f"agent{i}.{name}"], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ValueError(f"Параметр agent{i}.{name}: форма {value.shape} вместо {tensor.shape}.")
            tensor.data = value.copy()


def train(graph: EnvGraph, env_config: EnvConfig | None = None, model: ModelConfig | None = None,
          prior: PriorConfig | None = None, config: TrainConfig | None = None, seed: int = 0,
          **kwargs) -> TrainResult:
    """Обучение одного сида; аргументы как у Trainer."""
    return Trainer(graph, env_config, model, prior, config, seed, **kwargs).train()


def baseline_variants(graph: EnvGraph, env_config: EnvConfig | None = None, model: ModelConfig | None = None,
                      prior: PriorConfig | None = None, config: TrainConfig | None = None, seed: int = 0,
                      methods: Sequence[str] = Validator.KNOWN_METHODS, **kwargs) -> Dict[str, TrainResult]:
    """
    Один и тот же цикл A2C с разными кодировщиками.

    Returns:
        Dict[str, TrainResult]: Результат по каждому методу.
    """
    config = config or TrainConfig()
    return {method: train(graph, env_config, model, prior, replace(config, method=method), seed, **kwargs)
            for method in methods}


def evaluate(policies: Sequence[AgentPolicy], graph: EnvGraph, env_config: EnvConfig | None = None, seed: int = 0,
             episodes: int = 1, mask_strategy: str = "sample", tau: float = 1.0,
             snapshot_step: int | None = None, record_trajectory: bool = False) -> EvaluationResult:
    """
    Оценочные эпизоды с жёсткими масками без обучения.

    Потоки "exec-mask" и "exec-action" и порядок обращений к ним те же, что в исполнении
    с обменом сообщениями.

    Args:
        policies (Sequence[AgentPolicy]): Агенты.
        graph (EnvGraph): Граф среды.
        env_config (EnvConfig | None): Параметры среды.
        seed (int): Сид среды и потоков исполнения.
        episodes (int): Число эпизодов.
        mask_strategy (str): "sample" или "mean".
        tau (float): Температура (на жёсткие маски не влияет).
        snapshot_step (int | None): Шаг первого эпизода, на котором сохранить входы агентов.
        record_trajectory (bool): Записать траекторию первого эпизода (step, node, queue_sum, action, reward).

    Returns:
        EvaluationResult: Возвраты, действия и маски по эпизодам.

    Raises:
        ConfigError: Если snapshot_step вне первого эпизода.
    """
    Validator.check_choice("mask_strategy", mask_strategy, Validator.KNOWN_MASK_STRATEGIES)
    episode_length = (env_config or EnvConfig()).episode_length
    if snapshot_step is not None and not 0 <= snapshot_step < episode_length:
        raise ConfigError(f"Шаг снимка {snapshot_step} вне эпизода длины {episode_length}.")
    env = TrafficEnv(graph, env_config, seed, record_trajectory=record_trajectory)
    n = env.node_count
    mask_rngs = Utilities.make_generators(seed, n, "exec-mask")
    action_rngs = Utilities.make_generators(seed, n, "exec-action")
    width, hidden_size = policies[0].dims.action_dim, policies[0].dims.hidden
    returns: List[float] = []
    actions: List[np.ndarray] = []
    masks: List[Tuple[np.ndarray, ...]] = []
    snapshot, trajectory = None, None
    for episode in range(episodes):
        observations = env.reset(seed if episode == 0 else None)
        fingerprints, hidden, cells = np.zeros((n, width)), np.zeros((n, hidden_size)), np.zeros((n, hidden_size))
        total, episode_actions, episode_masks = 0.0, [], []
        while True:
            if episode == 0 and len(episode_actions) == snapshot_step:
                snapshot = (observations.copy(), fingerprints.copy(), hidden.copy())
            decision = decide_joint(policies, observations, fingerprints, hidden, cells, tau, mask_rngs,
                                    action_rngs, training=False, strategy=mask_strategy)
            outcome = env.step(decision.actions)
            episode_actions.append(decision.actions)
            episode_masks.append(decision.mask_values)
            total += float(outcome.rewards.sum())
            if outcome.done:
                break
            observations = outcome.observations
            fingerprints, hidden, cells = decision.probs, decision.h, decision.c
        if episode == 0 and record_trajectory:
            trajectory = env.trajectory_frame()
        returns.append(total)
        actions.append(np.stack(episode_actions))
        masks.append(tuple(np.stack([m[i] for m in episode_masks]) for i in range(n)))
        logger.debug("Оценочный эпизод %d: возврат %.3f", episode, total)
    return EvaluationResult(returns, actions, masks, snapshot, trajectory)
