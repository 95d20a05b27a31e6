import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
import simpy

from src.model.AgentPolicy import AgentDecision, AgentPolicy, build_channels
from src.model.EnvGraph import Edge, EnvGraph
from src.model.TrafficEnv import EnvConfig, TrafficEnv
from src.utils.Exceptions import SchedulingError
from src.utils.Utilities import Utilities
from src.utils.Validator import Validator

logger = logging.getLogger(__name__)

# Микротиков в одном тике расписания
MICROTICKS_PER_TICK: int = 4

ACCOUNTING_COLUMNS: Tuple[str, ...] = ("agent", "neighbor", "sent", "delivered", "dropped", "retained_fraction")


@dataclass(frozen=True)
class Schedule:
    """
    Расписание исполнения в тиках.

    Attributes:
        comm_ticks (int): Окно приёма сообщений Δt_comm.
        control_ticks (int): Пауза после действия Δt_control.
        horizon (int | None): Предел модельного времени в тиках (None — до конца эпизодов).
    """
    comm_ticks: int = 1
    control_ticks: int = 5
    horizon: int | None = None

    def __post_init__(self) -> None:
        Validator.check_schedule(self.comm_ticks, self.control_ticks)
        if self.horizon is not None:
            Validator.check_positive("horizon", self.horizon)

    @property
    def cycle(self) -> int:
        """Длина цикла агента в микротиках: окно связи, решение, пауза."""
        return self.comm_ticks * MICROTICKS_PER_TICK + 1 + self.control_ticks * MICROTICKS_PER_TICK


@dataclass(frozen=True)
class ChannelPolicy:
    """
    Поведение канала.

    Attributes:
        drop_probability (float): Вероятность потери сообщения.
        delay_ticks (int): Максимальная задержка; задержка равномерна на 0..delay_ticks,
            сообщения позже окна Δt_comm теряются.
    """
    drop_probability: float = 0.0
    delay_ticks: int = 0

    def __post_init__(self) -> None:
        Validator.check_unit_interval("drop_probability", self.drop_probability, closed_low=True)
        Validator.check_non_negative("delay_ticks", self.delay_ticks)

    @property
    def ideal(self) -> bool:
        return self.drop_probability == 0 and self.delay_ticks == 0


@dataclass(frozen=True)
class ExecConfig:
    """
    Параметры исполнения.

    Attributes:
        schedule (Schedule): Расписание.
        channel (ChannelPolicy): Канал.
        episodes (int): Число эпизодов.
        mask_strategy (str): "sample" — новая жёсткая маска на каждом шаге, "mean" — 1[σ(φ) > 0.5].
    """
    schedule: Schedule = field(default_factory=Schedule)
    channel: ChannelPolicy = field(default_factory=ChannelPolicy)
    episodes: int = 1
    mask_strategy: str = "sample"

    def __post_init__(self) -> None:
        Validator.check_positive("episodes", self.episodes)
        Validator.check_choice("mask_strategy", self.mask_strategy, Validator.KNOWN_MASK_STRATEGIES)


@dataclass(frozen=True)
class Payload:
    """Сообщение соседу: (s_j, π_j, h_j) и момент отправки."""
    sender: int
    sent_at: int
    state: np.ndarray
    fingerprint: np.ndarray
    hidden: np.ndarray


class AgentRuntime:
    """
    Агент при исполнении: локальное состояние LSTM, последний отпечаток и кэши соседей.

    Кэш соседа хранит последнее полученное сообщение; до первого получения он нулевой.
    """

    def __init__(self, policy: AgentPolicy, mask_rng: np.random.Generator, action_rng: np.random.Generator,
                 tau: float = 1.0, strategy: str = "sample") -> None:
        self.policy: AgentPolicy = policy
        self.node: int = policy.agent
        self.neighbors: Tuple[int, ...] = policy.ego.neighbors
        self.mask_rng: np.random.Generator = mask_rng
        self.action_rng: np.random.Generator = action_rng
        self.tau: float = tau
        self.strategy: str = strategy
        self.reset()

    def reset(self) -> None:
        """Обнуляет h, c, π и кэши (начало эпизода)."""
        dims = self.policy.dims
        self.h: np.ndarray = np.zeros(dims.hidden)
        self.c: np.ndarray = np.zeros(dims.hidden)
        self.fingerprint: np.ndarray = np.zeros(dims.action_dim)
        self.caches: Dict[int, Payload] = {
            j: Payload(j, -1, np.zeros(dims.obs_dim), np.zeros(dims.action_dim), np.zeros(dims.hidden))
            for j in self.neighbors
        }
        self.state: np.ndarray = np.zeros(dims.obs_dim)
        self._noise: np.ndarray | None = None
        self._mask_values: np.ndarray | None = None

    def begin_cycle(self, observation: np.ndarray, now: int) -> Payload:
        """Наблюдение, шум маски и сообщение для соседей."""
        self.state = np.array(observation, dtype=np.float64)
        self._noise, self._mask_values = self.policy.presample_mask(1, self.mask_rng, self.strategy)
        return Payload(self.node, now, self.state.copy(), self.fingerprint.copy(), self.h.copy())

    def receive(self, payload: Payload) -> None:
        if payload.sender not in self.caches:
            raise SchedulingError(f"Агент {self.node} получил сообщение не от соседа: {payload.sender}.")
        if payload.sent_at >= self.caches[payload.sender].sent_at:
            self.caches[payload.sender] = payload

    def decide(self, now: int) -> AgentDecision:
        """
        Жёсткая маска, кодирование по кэшам, шаг LSTM и действие.

        Raises:
            SchedulingError: Если в кэше сообщение из будущего.
        """
        rows = [Payload(self.node, now, self.state, self.fingerprint, self.h)]
        for j in self.neighbors:
            entry = self.caches[j]
            if entry.sent_at > now:
                raise SchedulingError(f"Агент {self.node} читает сообщение агента {j} из будущего.")
            rows.append(entry)
        channels = build_channels(
            np.stack([r.state for r in rows])[None],
            np.stack([r.fingerprint for r in rows])[None],
            np.stack([r.hidden for r in rows])[None],
            tuple(range(len(rows))),
        )
        decision = self.policy.act(channels, self.h, self.c, self.tau, None, self.action_rng, training=False,
                                   strategy=self.strategy, noise=self._noise, mask_values=self._mask_values)
        self.h, self.c, self.fingerprint = decision.h, decision.c, decision.probs
        return decision


class MessageBus:
    """Доставка сообщений между смежными агентами с потерями и задержкой."""

    def __init__(self, sim: simpy.Environment, graph: EnvGraph, channel: ChannelPolicy, schedule: Schedule,
                 rng: np.random.Generator) -> None:
        self.sim: simpy.Environment = sim
        self.graph: EnvGraph = graph
        self.channel: ChannelPolicy = channel
        self.schedule: Schedule = schedule
        self.rng: np.random.Generator = rng
        self.runtimes: Dict[int, AgentRuntime] = {}
        self.sent: Counter = Counter()
        self.delivered: Counter = Counter()
        self.dropped: Counter = Counter()

    def attach(self, runtimes: Sequence[AgentRuntime]) -> None:
        self.runtimes = {r.node: r for r in runtimes}

    def send(self, receiver: int, payload: Payload) -> None:
        """
        Ставит сообщение в канал.

        Raises:
            SchedulingError: Если отправитель и получатель не смежны.
        """
        edge = (payload.sender, receiver)
        if not self.graph.has_edge(*edge):
            raise SchedulingError(f"Сообщение по несуществующему ребру {edge}.")
        self.sent[edge] += 1
        if self.channel.drop_probability > 0 and self.rng.random() < self.channel.drop_probability:
            self.dropped[edge] += 1
            return
        delay = int(self.rng.integers(0, self.channel.delay_ticks + 1)) if self.channel.delay_ticks else 0
        if delay > self.schedule.comm_ticks:
            self.dropped[edge] += 1
            return
        self.sim.process(self._transmit(receiver, payload, delay))

    def _transmit(self, receiver: int, payload: Payload, delay: int):
        yield self.sim.timeout(delay * MICROTICKS_PER_TICK)
        self.runtimes[receiver].receive(payload)
        self.delivered[(payload.sender, receiver)] += 1


@dataclass
class ExecutionRun:
    """
    Итог исполнения.

    Attributes:
        returns (List[float]): Возврат каждого эпизода.
        actions (List[np.ndarray]): Действия по эпизодам, формы (T, N).
        masks (List[Tuple[np.ndarray, ...]]): Жёсткие маски по эпизодам и агентам, формы (T, |N_i|).
        neighbors (Tuple[Tuple[int, ...], ...]): Соседи каждого агента (порядок столбцов масок).
        sent (Dict[Edge, int]): Отправлено по направленному ребру (отправитель, получатель).
        delivered (Dict[Edge, int]): Доставлено в окне.
        dropped (Dict[Edge, int]): Потеряно или опоздало.
    """
    returns: List[float] = field(default_factory=list)
    actions: List[np.ndarray] = field(default_factory=list)
    masks: List[Tuple[np.ndarray, ...]] = field(default_factory=list)
    neighbors: Tuple[Tuple[int, ...], ...] = ()
    sent: Dict[Edge, int] = field(default_factory=dict)
    delivered: Dict[Edge, int] = field(default_factory=dict)
    dropped: Dict[Edge, int] = field(default_factory=dict)

    @property
    def message_count(self) -> int:
        return int(sum(self.sent.values()))


class ExecutionSimulation:
    """
    Децентрализованное исполнение на дискретно-событийном планировщике simpy.

    Цикл агента: наблюдение, шум маски, отправка соседям, ожидание Δt_comm, решение,
    пауза Δt_control. Среда делает шаг после решений всех агентов.
    """

    def __init__(self, policies: Sequence[AgentPolicy], graph: EnvGraph, env_config: EnvConfig | None,
                 channel: ChannelPolicy, schedule: Schedule, seed: int, episodes: int = 1,
                 mask_strategy: str = "sample", tau: float = 1.0) -> None:
        Validator.check_choice("mask_strategy", mask_strategy, Validator.KNOWN_MASK_STRATEGIES)
        self.sim: simpy.Environment = simpy.Environment()
        self.env: TrafficEnv = TrafficEnv(graph, env_config, seed)
        self.schedule: Schedule = schedule
        self.episodes: int = episodes
        n = self.env.node_count
        mask_rngs = Utilities.make_generators(seed, n, "exec-mask")
        action_rngs = Utilities.make_generators(seed, n, "exec-action")
        self.runtimes: List[AgentRuntime] = [
            AgentRuntime(p, mask_rngs[i], action_rngs[i], tau, mask_strategy) for i, p in enumerate(policies)
        ]
        self.bus: MessageBus = MessageBus(self.sim, graph, channel, schedule,
                                          Utilities.make_generators(seed, 1, "channel")[0])
        self.bus.attach(self.runtimes)
        self.actions: np.ndarray = np.zeros(n, dtype=np.int64)
        self.mask_values: List[np.ndarray] = [np.ones(len(r.neighbors)) for r in self.runtimes]
        self.run: ExecutionRun = ExecutionRun(neighbors=tuple(r.neighbors for r in self.runtimes))
        self.finished = self.sim.event()
        self._episode_actions: List[np.ndarray] = []
        self._episode_masks: List[List[np.ndarray]] = []
        self._episode_return: float = 0.0

    def _agent_loop(self, runtime: AgentRuntime):
        comm = self.schedule.comm_ticks * MICROTICKS_PER_TICK
        control = self.schedule.control_ticks * MICROTICKS_PER_TICK
        while True:
            payload = runtime.begin_cycle(self.env.observe(runtime.node), self.sim.now)
            if runtime.policy.method != "ia2c":
                for j in runtime.neighbors:
                    self.bus.send(j, payload)
            yield self.sim.timeout(comm + 1)
            decision = runtime.decide(self.sim.now)
            self.actions[runtime.node] = decision.action
            self.mask_values[runtime.node] = decision.mask_values
            yield self.sim.timeout(control)

    def _environment_loop(self):
        yield self.sim.timeout(self.schedule.comm_ticks * MICROTICKS_PER_TICK + 2)
        episode = 0
        while True:
            outcome = self.env.step(self.actions.copy())
            self._episode_actions.append(self.actions.copy())
            self._episode_masks.append([m.copy() for m in self.mask_values])
            self._episode_return += float(outcome.rewards.sum())
            if outcome.done:
                self._close_episode()
                episode += 1
                if episode >= self.episodes:
                    self.finished.succeed()
                    return
                self.env.reset()
                for runtime in self.runtimes:
                    runtime.reset()
            yield self.sim.timeout(self.schedule.cycle)

    def _close_episode(self) -> None:
        n = len(self.runtimes)
        self.run.returns.append(self._episode_return)
        self.run.actions.append(np.stack(self._episode_actions))
        self.run.masks.append(tuple(np.stack([m[i] for m in self._episode_masks]) for i in range(n)))
        logger.debug("Эпизод исполнения %d: возврат %.3f", len(self.run.returns) - 1, self._episode_return)
        self._episode_actions, self._episode_masks, self._episode_return = [], [], 0.0

    def execute(self) -> ExecutionRun:
        """Прогоняет все эпизоды (или до горизонта) и возвращает итог."""
        self.env.reset(self.env.seed)
        for runtime in self.runtimes:
            self.sim.process(self._agent_loop(runtime))
        self.sim.process(self._environment_loop())
        until = self.finished
        if self.schedule.horizon is not None:
            until = self.finished | self.sim.timeout(self.schedule.horizon * MICROTICKS_PER_TICK)
        self.sim.run(until=until)
        if len(self.run.returns) < self.episodes:
            logger.warning("Горизонт %s тиков исчерпан после %d эпизодов из %d.",
                           self.schedule.horizon, len(self.run.returns), self.episodes)
        self.run.sent = dict(self.bus.sent)
        self.run.delivered = dict(self.bus.delivered)
        self.run.dropped = dict(self.bus.dropped)
        lost = sum(self.run.dropped.values())
        if lost:
            logger.info("Потеряно сообщений: %d из %d.", lost, self.run.message_count)
        return self.run


def run_execution(policies: Sequence[AgentPolicy], graph: EnvGraph, env_config: EnvConfig | None = None,
                  channel: ChannelPolicy | None = None, schedule: Schedule | None = None, seed: int = 0,
                  episodes: int = 1, mask_strategy: str = "sample", tau: float = 1.0) -> ExecutionRun:
    """
    Децентрализованное исполнение с обменом сообщениями.

    При идеальном канале совпадает по действиям и возвратам с evaluate на том же сиде.

    Args:
        policies (Sequence[AgentPolicy]): Агенты.
        graph (EnvGraph): Граф среды.
        env_config (EnvConfig | None): Параметры среды.
        channel (ChannelPolicy | None): Потери и задержки.
        schedule (Schedule | None): Расписание.
        seed (int): Сид среды, масок, действий и канала.
        episodes (int): Число эпизодов.
        mask_strategy (str): "sample" или "mean".
        tau (float): Температура (на жёсткие маски не влияет).

    Returns:
        ExecutionRun: Возвраты, действия, маски и счётчики сообщений.

    Raises:
        SchedulingError: Если Δt_comm > Δt_control или сообщение идёт по несуществующему ребру.
    """
    simulation = ExecutionSimulation(policies, graph, env_config, channel or ChannelPolicy(),
                                     schedule or Schedule(), seed, episodes, mask_strategy, tau)
    return simulation.execute()


def message_accounting(run: ExecutionRun) -> pd.DataFrame:
    """
    Счётчики по направленным рёбрам и доля шагов, на которых жёсткая маска оставила ребро.

    Строка (agent, neighbor) описывает сообщения neighbor → agent и маску агента на ребре к neighbor.

    Args:
        run (ExecutionRun): Завершённый прогон.

    Returns:
        pd.DataFrame: Столбцы ACCOUNTING_COLUMNS.
    """
    rows = []
    for i, neighbors in enumerate(run.neighbors):
        masks = [episode[i] for episode in run.masks]
        stacked = np.concatenate(masks) if masks else np.zeros((0, len(neighbors)))
        for column, j in enumerate(neighbors):
            edge = (j, i)
            rows.append({
                "agent": i,
                "neighbor": j,
                "sent": run.sent.get(edge, 0),
                "delivered": run.delivered.get(edge, 0),
                "dropped": run.dropped.get(edge, 0),
                "retained_fraction": float(stacked[:, column].mean()) if len(stacked) else 0.0,
            })
    return pd.DataFrame(rows, columns=list(ACCOUNTING_COLUMNS))
