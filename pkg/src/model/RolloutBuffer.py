from dataclasses import dataclass, fields
from typing import List, Tuple

import numpy as np

from src.model.EnvGraph import EgoGraph, hop_distances


@dataclass(frozen=True)
class StepRecord:
    """
    Один шаг сбора траектории для всех агентов.

    Attributes:
        observations (np.ndarray): s_t, форма (N, d_s).
        fingerprints (np.ndarray): π_{t−1}, форма (N, d_π).
        hidden (np.ndarray): h_{t−1}, форма (N, d_h).
        cells (np.ndarray): c_{t−1}, форма (N, d_h).
        actions (np.ndarray): u_t, форма (N,).
        uniforms (np.ndarray): Равномерные числа, по которым выбраны действия.
        log_probs (np.ndarray): log π̃(u_t) на момент сбора.
        values (np.ndarray): v_t на момент сбора.
        rewards (np.ndarray): r_t.
        done (bool): Конец эпизода после шага.
        temperature (float): τ маски на шаге.
        mask_noise (Tuple[np.ndarray, ...]): Шум маски по агентам, формы (|N_i|,).
        mask_values (Tuple[np.ndarray, ...]): Значения маски по агентам, формы (|N_i|,).
    """
    observations: np.ndarray
    fingerprints: np.ndarray
    hidden: np.ndarray
    cells: np.ndarray
    actions: np.ndarray
    uniforms: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    done: bool
    temperature: float
    mask_noise: Tuple[np.ndarray, ...]
    mask_values: Tuple[np.ndarray, ...]


@dataclass(frozen=True)
class RolloutBatch:
    """
    Минибатч ℬ из L последовательных шагов: поля StepRecord, сложенные по первой оси.

    Attributes:
        bootstrap (np.ndarray): v_{i,τ+L} для продолжения возврата (0 после конца эпизода).
        start_step (int): Номер первого шага батча с начала обучения.
    """
    observations: np.ndarray
    fingerprints: np.ndarray
    hidden: np.ndarray
    cells: np.ndarray
    actions: np.ndarray
    uniforms: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    temperatures: np.ndarray
    mask_noise: Tuple[np.ndarray, ...]
    mask_values: Tuple[np.ndarray, ...]
    bootstrap: np.ndarray
    start_step: int = 0

    @property
    def length(self) -> int:
        return self.rewards.shape[0]

    @property
    def agent_count(self) -> int:
        return self.rewards.shape[1]

    def summary(self) -> dict:
        """Краткая сводка для диагностики."""
        return {
            "start_step": self.start_step,
            "length": self.length,
            "reward_range": (float(self.rewards.min()), float(self.rewards.max())),
            "value_range": (float(self.values.min()), float(self.values.max())),
            "finite_values": bool(np.all(np.isfinite(self.values))),
        }

    def arrays(self) -> dict:
        """Все массивы батча по именам (для диагностического дампа)."""
        out: dict = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                for i, part in enumerate(value):
                    out[f"{f.name}_{i}"] = part
            elif isinstance(value, np.ndarray):
                out[f.name] = value
        return out


class RolloutBuffer:
    """Буфер on-policy шагов до размера |ℬ|."""

    def __init__(self, capacity: int) -> None:
        self.capacity: int = int(capacity)
        self.records: List[StepRecord] = []
        self.start_step: int = 0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def is_full(self) -> bool:
        return len(self.records) >= self.capacity

    def append(self, record: StepRecord, global_step: int) -> None:
        if not self.records:
            self.start_step = global_step
        self.records.append(record)

    def clear(self) -> None:
        self.records = []

    def to_batch(self, bootstrap: np.ndarray) -> RolloutBatch:
        """
        Складывает записи в батч.

        Args:
            bootstrap (np.ndarray): Значения продолжения по агентам.

        Returns:
            RolloutBatch: Батч из накопленных шагов.
        """
        r = self.records
        agents: int = len(r[0].mask_noise)

        def stack(name: str) -> np.ndarray:
            return np.stack([getattr(x, name) for x in r])

        return RolloutBatch(
            observations=stack("observations"),
            fingerprints=stack("fingerprints"),
            hidden=stack("hidden"),
            cells=stack("cells"),
            actions=stack("actions"),
            uniforms=stack("uniforms"),
            log_probs=stack("log_probs"),
            values=stack("values"),
            rewards=stack("rewards"),
            dones=np.array([x.done for x in r], dtype=bool),
            temperatures=np.array([x.temperature for x in r], dtype=np.float64),
            mask_noise=tuple(np.stack([x.mask_noise[i] for x in r]) for i in range(agents)),
            mask_values=tuple(np.stack([x.mask_values[i] for x in r]) for i in range(agents)),
            bootstrap=np.asarray(bootstrap, dtype=np.float64),
            start_step=self.start_step,
        )


def mixed_rewards(batch: RolloutBatch, ego: EgoGraph, alpha: float) -> np.ndarray:
    """r̃_{i,τ} = Σ_{j∈V_i} α^{d_ij}·r_{j,τ}, форма (L,)."""
    weights = alpha ** hop_distances(ego).as_vector(ego.members).astype(np.float64)
    return batch.rewards[:, list(ego.members)] @ weights


def spatially_discounted_returns(batch: RolloutBatch, ego: EgoGraph, gamma: float, alpha: float) -> np.ndarray:
    """
    Пространственно дисконтированные возвраты агента для всех шагов батча.

    R̂_τ = r̃_τ + γ·R̂_{τ+1}, R̂_L = bootstrap; после конца эпизода продолжение обнуляется.

    Args:
        batch (RolloutBatch): Батч.
        ego (EgoGraph): Эго-граф агента.
        gamma (float): Временной дисконт γ.
        alpha (float): Пространственный дисконт α.

    Returns:
        np.ndarray: R̂ формы (L,).
    """
    mixed = mixed_rewards(batch, ego, alpha)
    returns = np.zeros(batch.length)
    running: float = float(batch.bootstrap[ego.center])
    for tau in range(batch.length - 1, -1, -1):
        if batch.dones[tau]:
            running = 0.0
        running = mixed[tau] + gamma * running
        returns[tau] = running
    return returns


def spatially_discounted_return(batch: RolloutBatch, i: int, tau: int, ego: EgoGraph,
                                gamma: float, alpha: float) -> float:
    """R̂_{i,τ} одного шага."""
    if ego.center != i:
        raise ValueError(f"Эго-граф центра {ego.center} передан для агента {i}.")
    return float(spatially_discounted_returns(batch, ego, gamma, alpha)[tau])


def advantages(batch: RolloutBatch, ego: EgoGraph, gamma: float, alpha: float) -> np.ndarray:
    """Â = R̂ − v по всем шагам; константа при дифференцировании."""
    return spatially_discounted_returns(batch, ego, gamma, alpha) - batch.values[:, ego.center]


def advantage(batch: RolloutBatch, i: int, tau: int, ego: EgoGraph, gamma: float, alpha: float) -> float:
    """Â_{i,τ} одного шага."""
    return spatially_discounted_return(batch, i, tau, ego, gamma, alpha) - float(batch.values[tau, i])
