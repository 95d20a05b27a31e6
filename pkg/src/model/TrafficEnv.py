"""
Синтетическая сеть очередей с сигнальными перекрёстками.

У каждого узла по одному подходу от каждого соседа (в порядке возрастания
идентификаторов) и один внешний подход последним. Фаза p пропускает подходы
с индексом a, для которых a % P = p. Выехавшие машины распределяются по
подходам соседей или покидают сеть по статической таблице маршрутов; если у
получателя нет места, остаток ждёт в исходной очереди.
"""
import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd

from src.model.EnvGraph import EnvGraph
from src.utils.Exceptions import InvalidActionError, ValidationError
from src.utils.Utilities import Utilities
from src.utils.Validator import Validator

logger = logging.getLogger(__name__)

# Пункт назначения "выезд из сети" в таблице маршрутов
EXIT: int = -1


@dataclass(frozen=True)
class EnvConfig:
    """
    Параметры динамики среды.

    Attributes:
        phase_count (int): Число фаз на узле по умолчанию.
        phase_counts (Tuple[int, ...]): Необязательные числа фаз по узлам (пусто — phase_count везде).
        saturation_flow (float): Пропускная способность зелёного подхода, машин за шаг.
        arrival_rate (float): Интенсивность пуассоновских прибытий на внешний подход, машин за шаг.
        episode_length (int): Длина эпизода T в шагах.
        reward_scale (float): Делитель награды.
        capacity (float): Вместимость подхода.
        exit_fraction (float): Доля выезжающих из сети машин в сгенерированной таблице маршрутов.
        arrival_profile (str): "constant" или "peak" (нарастание и спад интенсивности за эпизод).
        peak_multiplier (float): Максимальный множитель интенсивности профиля "peak".
        initial_queue_rate (float): Среднее пуассоновской начальной очереди подхода (0 — пустые очереди).
        wait_norm (float): Нормировка счётчика простоя в наблюдении.
    """
    phase_count: int = 2
    phase_counts: Tuple[int, ...] = ()
    saturation_flow: float = 2.0
    arrival_rate: float = 0.5
    episode_length: int = 500
    reward_scale: float = 10.0
    capacity: float = 40.0
    exit_fraction: float = 0.25
    arrival_profile: str = "constant"
    peak_multiplier: float = 2.0
    initial_queue_rate: float = 0.0
    wait_norm: float = 20.0

    def __post_init__(self) -> None:
        Validator.check_positive("phase_count", self.phase_count)
        for count in self.phase_counts:
            Validator.check_positive("phase_counts", count)
        Validator.check_positive("saturation_flow", self.saturation_flow)
        Validator.check_non_negative("arrival_rate", self.arrival_rate)
        Validator.check_positive("episode_length", self.episode_length)
        Validator.check_positive("reward_scale", self.reward_scale)
        Validator.check_positive("capacity", self.capacity)
        Validator.check_unit_interval("exit_fraction", self.exit_fraction, closed_low=True)
        Validator.check_choice("arrival_profile", self.arrival_profile, Validator.KNOWN_ARRIVAL_PROFILES)
        Validator.check_positive("peak_multiplier", self.peak_multiplier)
        Validator.check_non_negative("initial_queue_rate", self.initial_queue_rate)
        Validator.check_positive("wait_norm", self.wait_norm)

    def rate_multiplier(self, t: int) -> float:
        """Множитель интенсивности прибытий на шаге t."""
        if self.arrival_profile == "peak":
            return 1.0 + (self.peak_multiplier - 1.0) * math.sin(math.pi * t / self.episode_length)
        return 1.0


@dataclass(frozen=True)
class RoutingTable:
    """
    Статическая таблица маршрутов.

    Attributes:
        fractions (Mapping[Tuple[int, int], Mapping[int, float]]): (узел, подход) → {сосед или EXIT: доля}.
    """
    fractions: Mapping[Tuple[int, int], Mapping[int, float]]

    @classmethod
    def generate(cls, graph: EnvGraph, rng: np.random.Generator, exit_fraction: float) -> 'RoutingTable':
        """
        Генерирует таблицу: доля exit_fraction уходит из сети, остальное делится
        по Дирихле между соседями, кроме того, откуда машины приехали.

        Args:
            graph (EnvGraph): Граф среды.
            rng (np.random.Generator): Генератор маршрутов.
            exit_fraction (float): Доля выезда из сети.

        Returns:
            RoutingTable: Таблица для всех подходов всех узлов.
        """
        fractions: Dict[Tuple[int, int], Dict[int, float]] = {}
        for i in range(graph.node_count):
            neighbors = graph.neighbors(i)
            for a in range(len(neighbors) + 1):
                origin = neighbors[a] if a < len(neighbors) else None
                targets = [j for j in neighbors if j != origin]
                if not targets:
                    fractions[(i, a)] = {EXIT: 1.0}
                    continue
                split = rng.dirichlet(np.ones(len(targets))) * (1.0 - exit_fraction)
                row = {j: float(s) for j, s in zip(targets, split)}
                row[EXIT] = exit_fraction
                fractions[(i, a)] = row
        return cls(fractions)

    def validate(self, graph: EnvGraph) -> None:
        """
        Проверяет таблицу против графа.

        Raises:
            ValidationError: Если подход не описан, есть разворот, несуществующий сосед или доли не дают 1.
        """
        for i in range(graph.node_count):
            neighbors = graph.neighbors(i)
            for a in range(len(neighbors) + 1):
                row = self.fractions.get((i, a))
                if row is None:
                    raise ValidationError(f"В таблице маршрутов нет подхода {a} узла {i}.")
                origin = neighbors[a] if a < len(neighbors) else None
                for target, share in row.items():
                    if target != EXIT and target not in neighbors:
                        raise ValidationError(f"Маршрут ({i}, {a}) ведёт к {target}, который не сосед узла {i}.")
                    if target == origin:
                        raise ValidationError(f"Маршрут ({i}, {a}) разворачивает машины обратно к {origin}.")
                    if share < 0:
                        raise ValidationError(f"Отрицательная доля маршрута ({i}, {a}) → {target}.")
                if not math.isclose(sum(row.values()), 1.0, abs_tol=1e-9):
                    raise ValidationError(f"Доли маршрута ({i}, {a}) дают {sum(row.values())}, а не 1.")


@dataclass
class IntersectionState:
    """
    Состояние перекрёстка.

    Attributes:
        queues (np.ndarray): Очереди по подходам, 0 ≤ q ≤ capacity.
        phase (int): Текущая фаза.
        arrivals (float): Внешние прибытия за последний шаг (до ограничения вместимостью).
        waits (np.ndarray): Счётчики простоя подходов (шаги подряд на красном с очередью).
    """
    queues: np.ndarray
    phase: int = 0
    arrivals: float = 0.0
    waits: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class StepOutcome:
    """
    Результат шага среды.

    Attributes:
        observations (np.ndarray): Наблюдения агентов, форма (N, obs_dim).
        rewards (np.ndarray): Награды r_i ≤ 0.
        done (bool): Конец эпизода.
        exits (float): Машины, покинувшие сеть.
        admitted (float): Принятые внешние прибытия.
        rejected (float): Прибытия, не поместившиеся во внешний подход.
    """
    observations: np.ndarray
    rewards: np.ndarray
    done: bool
    exits: float = 0.0
    admitted: float = 0.0
    rejected: float = 0.0


class TrafficEnv:
    """
    Сеть очередей как пространственно-временной МППР.

    Следующее состояние узла i зависит только от состояний и действий его
    замкнутой окрестности и собственного потока шума прибытий.
    """

    def __init__(self, graph: EnvGraph, config: EnvConfig | None = None, seed: int = 0,
                 routing: RoutingTable | None = None, record_trajectory: bool = False) -> None:
        """
        Инициализация среды.

        Args:
            graph (EnvGraph): Граф перекрёстков.
            config (EnvConfig | None): Параметры динамики.
            seed (int): Сид таблицы маршрутов и потоков прибытий.
            routing (RoutingTable | None): Явная таблица маршрутов вместо сгенерированной.
            record_trajectory (bool): Записывать ли построчную траекторию.

        Raises:
            ValidationError: Если число фаз по узлам не совпадает с числом узлов или таблица маршрутов некорректна.
        """
        self.graph: EnvGraph = graph
        self.config: EnvConfig = config or EnvConfig()
        self.seed: int = int(seed)
        n: int = graph.node_count
        if self.config.phase_counts and len(self.config.phase_counts) != n:
            raise ValidationError(f"phase_counts задано для {len(self.config.phase_counts)} узлов, а узлов {n}.")
        self.phase_counts: Tuple[int, ...] = tuple(self.config.phase_counts) or (self.config.phase_count,) * n
        self.approach_counts: Tuple[int, ...] = tuple(graph.degree(i) + 1 for i in range(n))
        # approach_index[i][j]: подход узла i, на который приезжают машины от соседа j
        self.approach_index: List[Dict[int, int]] = [
            {j: a for a, j in enumerate(graph.neighbors(i))} for i in range(n)
        ]
        if routing is None:
            routing = RoutingTable.generate(graph, Utilities.make_generators(self.seed, 1, "routing")[0],
                                            self.config.exit_fraction)
        routing.validate(graph)
        self.routing: RoutingTable = routing
        self.max_approaches: int = max(self.approach_counts)
        self.max_phases: int = max(self.phase_counts)
        self.record_trajectory: bool = record_trajectory
        self.trajectory: List[Dict[str, float]] = []
        self.t: int = 0
        self.states: List[IntersectionState] = []
        self._rngs: List[np.random.Generator] = []
        self.reset(self.seed)

    @property
    def node_count(self) -> int:
        return self.graph.node_count

    @property
    def obs_dim(self) -> int:
        """Ширина наблюдения: очереди, фаза one-hot, простои."""
        return 2 * self.max_approaches + self.max_phases

    @property
    def action_counts(self) -> Tuple[int, ...]:
        return self.phase_counts

    def reset(self, seed: int | None = None) -> np.ndarray:
        """
        Начинает эпизод.

        Args:
            seed (int | None): Новый сид потоков прибытий; None продолжает текущие потоки.

        Returns:
            np.ndarray: Начальные наблюдения (N, obs_dim).
        """
        if seed is not None or not self._rngs:
            self._rngs = Utilities.make_generators(self.seed if seed is None else seed, self.node_count, "arrivals")
        self.t = 0
        self.trajectory = []
        self.states = []
        for i in range(self.node_count):
            count = self.approach_counts[i]
            queues = np.zeros(count)
            if self.config.initial_queue_rate > 0:
                queues = np.minimum(self._rngs[i].poisson(self.config.initial_queue_rate, size=count).astype(float),
                                    self.config.capacity)
            self.states.append(IntersectionState(queues=queues, phase=0, arrivals=0.0, waits=np.zeros(count)))
        return self.observations()

    def green_mask(self, i: int, phase: int) -> np.ndarray:
        """Подходы узла i, пропускаемые фазой."""
        return np.arange(self.approach_counts[i]) % self.phase_counts[i] == phase

    def _check_actions(self, actions: Sequence[int]) -> List[int]:
        if len(actions) != self.node_count:
            raise ValidationError(f"Ожидается {self.node_count} действий, получено {len(actions)}.")
        checked: List[int] = []
        for i, action in enumerate(actions):
            if not isinstance(action, (int, np.integer)) or not 0 <= action < self.phase_counts[i]:
                raise InvalidActionError(i, f"действие {action!r} вне диапазона 0..{self.phase_counts[i] - 1}.")
            checked.append(int(action))
        return checked

    def step(self, actions: Sequence[int]) -> StepOutcome:
        """
        Шаг среды: разъезд на зелёном, маршрутизация с учётом вместимости, внешние прибытия, награда.

        Args:
            actions (Sequence[int]): Фаза для каждого узла.

        Returns:
            StepOutcome: Наблюдения, награды, признак конца эпизода и баланс машин.

        Raises:
            InvalidActionError: Если действие агента вне диапазона.
        """
        actions = self._check_actions(actions)
        cfg = self.config
        n = self.node_count

        discharge: List[np.ndarray] = []
        queues: List[np.ndarray] = []
        for i in range(n):
            state = self.states[i]
            out = np.where(self.green_mask(i, actions[i]), np.minimum(state.queues, cfg.saturation_flow), 0.0)
            discharge.append(out)
            queues.append(state.queues - out)

        exits: float = 0.0
        inflow: List[np.ndarray] = [np.zeros(self.approach_counts[i]) for i in range(n)]
        for j in range(n):
            # wanted[i]: вклад каждого подхода j в поток к соседу i
            wanted: Dict[int, np.ndarray] = {}
            for a in range(self.approach_counts[j]):
                if discharge[j][a] <= 0:
                    continue
                for target, share in self.routing.fractions[(j, a)].items():
                    amount = discharge[j][a] * share
                    if target == EXIT:
                        exits += amount
                    else:
                        wanted.setdefault(target, np.zeros(self.approach_counts[j]))[a] += amount
            for target, parts in wanted.items():
                total = float(parts.sum())
                b = self.approach_index[target][j]
                # место по очереди на начало шага
                space = cfg.capacity - self.states[target].queues[b]
                ratio = 1.0 if total <= space else space / total
                inflow[target][b] += total * ratio
                # неуместившиеся машины остаются в своих подходах у j
                queues[j] += parts * (1.0 - ratio)

        admitted_total: float = 0.0
        rejected_total: float = 0.0
        rate = cfg.arrival_rate * cfg.rate_multiplier(self.t)
        for i in range(n):
            q = queues[i] + inflow[i]
            drawn = float(self._rngs[i].poisson(rate)) if rate > 0 else 0.0
            external = self.approach_counts[i] - 1
            admitted = min(drawn, cfg.capacity - q[external])
            q[external] += admitted
            admitted_total += admitted
            rejected_total += drawn - admitted
            state = self.states[i]
            red = ~self.green_mask(i, actions[i])
            state.waits = np.where(red & (q > 0), state.waits + 1.0, 0.0)
            state.queues = np.clip(q, 0.0, cfg.capacity)
            state.phase = actions[i]
            state.arrivals = drawn

        rewards = np.array([-float(s.queues.sum()) / cfg.reward_scale for s in self.states])
        if self.record_trajectory:
            for i in range(n):
                self.trajectory.append({
                    "step": self.t, "node": i, "queue_sum": float(self.states[i].queues.sum()),
                    "action": actions[i], "reward": float(rewards[i]),
                })
        self.t += 1
        if rejected_total > 0:
            logger.debug("Шаг %d: не поместилось %.0f внешних прибытий", self.t, rejected_total)
        return StepOutcome(self.observations(), rewards, self.t >= cfg.episode_length,
                           exits, admitted_total, rejected_total)

    def observe(self, i: int) -> np.ndarray:
        """
        Наблюдение агента фиксированной ширины.

        Returns:
            np.ndarray: [очереди/capacity, фаза one-hot, простой/wait_norm (не больше 1)] с дополнением нулями.
        """
        state = self.states[i]
        count = self.approach_counts[i]
        queues = np.zeros(self.max_approaches)
        queues[:count] = state.queues / self.config.capacity
        phase = np.zeros(self.max_phases)
        phase[state.phase] = 1.0
        waits = np.zeros(self.max_approaches)
        waits[:count] = np.minimum(state.waits / self.config.wait_norm, 1.0)
        return np.concatenate([queues, phase, waits])

    def observations(self) -> np.ndarray:
        """Наблюдения всех агентов (N, obs_dim)."""
        return np.stack([self.observe(i) for i in range(self.node_count)])

    def total_vehicles(self) -> float:
        """Число машин в сети."""
        return float(sum(s.queues.sum() for s in self.states))

    def current_phases(self) -> List[int]:
        return [s.phase for s in self.states]

    def locality_probe(self, i: int, k: int, queue_delta: float = 5.0, actions: Sequence[int] | None = None,
                       action_override: int | None = None) -> bool:
        """
        Сравнивает следующее состояние узла i с возмущением узла k и без него.

        Обе копии среды получают одинаковые потоки шума. Для k вне V_i состояния
        всегда совпадают.

        Args:
            i (int): Наблюдаемый узел.
            k (int): Возмущаемый узел.
            queue_delta (float): Добавка к очередям k (с ограничением вместимостью).
            actions (Sequence[int] | None): Совместные действия (по умолчанию текущие фазы).
            action_override (int | None): Другое действие для k в возмущённой копии.

        Returns:
            bool: True, если очереди, фаза и простои узла i совпали точно.
        """
        actions = list(self.current_phases() if actions is None else actions)
        base = copy.deepcopy(self)
        perturbed = copy.deepcopy(self)
        target = perturbed.states[k]
        target.queues = np.minimum(target.queues + queue_delta, self.config.capacity)
        perturbed_actions = list(actions)
        if action_override is not None:
            perturbed_actions[k] = action_override
        base.step(actions)
        perturbed.step(perturbed_actions)
        left, right = base.states[i], perturbed.states[i]
        return (np.array_equal(left.queues, right.queues) and left.phase == right.phase
                and np.array_equal(left.waits, right.waits))

    def trajectory_frame(self) -> pd.DataFrame:
        """Записанная траектория: step, node, queue_sum, action, reward."""
        return pd.DataFrame(self.trajectory, columns=["step", "node", "queue_sum", "action", "reward"])
