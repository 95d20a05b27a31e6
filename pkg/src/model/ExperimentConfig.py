import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Tuple

import tomli_w

from src.model.AgentPolicy import ModelConfig
from src.model.EnvGraph import EnvGraph, parse_env_spec
from src.model.ExecSimulator import ChannelPolicy, ExecConfig, Schedule
from src.model.LatentMask import PriorConfig
from src.model.Trainer import TrainConfig
from src.model.TrafficEnv import EnvConfig
from src.utils.Exceptions import ConfigError
from src.utils.Utilities import Utilities
from src.utils.Validator import Validator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GraphSection:
    """
    Граф среды.

    Attributes:
        env (str): "grid:RxC" или "file:<путь к списку рёбер>".
    """
    env: str = "grid:3x3"

    def __post_init__(self) -> None:
        if not isinstance(self.env, str) or ":" not in self.env:
            raise ConfigError(f"Параметр graph.env должен иметь вид grid:RxC или file:<путь>, получено {self.env!r}.")


@dataclass(frozen=True)
class HarnessConfig:
    """
    Параметры серии экспериментов.

    Attributes:
        seeds (Tuple[int, ...]): Сиды прогонов.
        output_dir (str): Папка результатов (пусто — data/output или BAYESG_OUT).
        seed_workers (int): Сколько сидов обучать параллельно.
        tail_fraction (float): Доля последних эпизодов для итоговой таблицы.
        eval_episodes (int): Оценочных эпизодов после обучения.
        excel (bool): Дублировать таблицы в XLSX.
        chart (bool): Рисовать returns.svg.
        trajectory (bool): Сохранять траекторию первого оценочного эпизода в trajectory.csv.
    """
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    output_dir: str = ""
    seed_workers: int = 1
    tail_fraction: float = 0.2
    eval_episodes: int = 1
    excel: bool = True
    chart: bool = True
    trajectory: bool = False

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("Список harness.seeds не может быть пустым.")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"Сиды повторяются: {list(self.seeds)}.")
        for seed in self.seeds:
            Validator.check_non_negative("seeds", seed)
        Validator.check_positive("seed_workers", self.seed_workers)
        Validator.check_unit_interval("tail_fraction", self.tail_fraction)
        Validator.check_non_negative("eval_episodes", self.eval_episodes)


# Секции файла и классы, в которые они разбираются; [exec] раскладывается отдельно
SECTIONS: Dict[str, type] = {
    "graph": GraphSection,
    "env": EnvConfig,
    "model": ModelConfig,
    "mask": PriorConfig,
    "train": TrainConfig,
    "harness": HarnessConfig,
}
EXEC_KEYS: Tuple[str, ...] = (
    "comm_ticks", "control_ticks", "horizon", "drop_probability", "delay_ticks", "episodes", "mask_strategy",
)


def _section_from_dict(cls: type, data: Dict[str, Any], section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] должна быть таблицей.")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"Неизвестные ключи в [{section}]: {', '.join(unknown)}.")
    values: Dict[str, Any] = {}
    for name, value in data.items():
        if isinstance(known[name].default, tuple) and isinstance(value, list):
            value = tuple(value)
        values[name] = value
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"Некорректная секция [{section}]: {e}")


def _section_to_dict(obj) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if value is None:
            continue
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def _exec_from_dict(data: Dict[str, Any]) -> ExecConfig:
    if not isinstance(data, dict):
        raise ConfigError("[exec] должна быть таблицей.")
    unknown = sorted(set(data) - set(EXEC_KEYS))
    if unknown:
        raise ConfigError(f"Неизвестные ключи в [exec]: {', '.join(unknown)}.")
    defaults = ExecConfig()
    schedule = Schedule(
        comm_ticks=data.get("comm_ticks", defaults.schedule.comm_ticks),
        control_ticks=data.get("control_ticks", defaults.schedule.control_ticks),
        horizon=data.get("horizon", defaults.schedule.horizon),
    )
    channel = ChannelPolicy(
        drop_probability=data.get("drop_probability", defaults.channel.drop_probability),
        delay_ticks=data.get("delay_ticks", defaults.channel.delay_ticks),
    )
    return ExecConfig(schedule, channel, data.get("episodes", defaults.episodes),
                      data.get("mask_strategy", defaults.mask_strategy))


def _exec_to_dict(config: ExecConfig) -> Dict[str, Any]:
    out = {**_section_to_dict(config.schedule), **_section_to_dict(config.channel),
           "episodes": config.episodes, "mask_strategy": config.mask_strategy}
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Полная конфигурация эксперимента: секции [graph] [env] [model] [mask] [train] [exec] [harness].

    Все поля имеют значения по умолчанию; неизвестные секции и ключи отклоняются.
    """
    graph: GraphSection = field(default_factory=GraphSection)
    env: EnvConfig = field(default_factory=EnvConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    exec: ExecConfig = field(default_factory=ExecConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    @classmethod
    def from_toml(cls, text: str) -> 'ExperimentConfig':
        """
        Разбирает конфигурацию из текста TOML.

        Args:
            text (str): Содержимое файла.

        Returns:
            ExperimentConfig: Конфигурация.

        Raises:
            ConfigError: При синтаксической ошибке, неизвестной секции или ключе, недопустимом значении.
        """
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Ошибка синтаксиса TOML: {e}")
        unknown = sorted(set(data) - set(SECTIONS) - {"exec"})
        if unknown:
            raise ConfigError(f"Неизвестные секции конфигурации: {', '.join(unknown)}.")
        sections = {name: _section_from_dict(cls_, data.get(name, {}), name) for name, cls_ in SECTIONS.items()}
        return cls(
            graph=sections["graph"],
            env=sections["env"],
            model=sections["model"],
            prior=sections["mask"],
            train=sections["train"],
            exec=_exec_from_dict(data.get("exec", {})),
            harness=sections["harness"],
        )

    def to_toml(self) -> str:
        """Сериализует конфигурацию; from_toml(to_toml()) возвращает равный объект."""
        return tomli_w.dumps({
            "graph": _section_to_dict(self.graph),
            "env": _section_to_dict(self.env),
            "model": _section_to_dict(self.model),
            "mask": _section_to_dict(self.prior),
            "train": _section_to_dict(self.train),
            "exec": _exec_to_dict(self.exec),
            "harness": _section_to_dict(self.harness),
        })

    @classmethod
    def load(cls, file_path: str | Path) -> 'ExperimentConfig':
        """
        Читает конфигурацию из файла.

        Raises:
            ConfigError: Если файла нет или он некорректен.
        """
        path = Validator.require_file(file_path, "Файл конфигурации")
        try:
            config = cls.from_toml(path.read_text(encoding="utf-8"))
        except ConfigError as e:
            raise ConfigError(f"{path}: {e}")
        logger.debug("Конфигурация загружена из %s", path)
        return config

    def save(self, file_path: str | Path) -> Path:
        path = Path(file_path)
        Utilities.write_bytes_atomic(path, self.to_toml().encode("utf-8"))
        return path

    def config_hash(self) -> str:
        return Utilities.sha256_hex(self.to_toml().encode("utf-8"))

    def build_graph(self) -> EnvGraph:
        return parse_env_spec(self.graph.env)

    def with_overrides(self, *, seed: int | None = None, method: str | None = None, mask: str | None = None,
                       mask_features: Tuple[str, ...] | None = None, entropy_sign: int | None = None,
                       env: str | None = None, episodes: int | None = None) -> 'ExperimentConfig':
        """
        Применяет флаги командной строки поверх файла.

        Args:
            seed (int | None): Единственный сид вместо списка.
            method (str | None): Метод.
            mask (str | None): Режим маски.
            mask_features (Tuple[str, ...] | None): Признаки сети логитов.
            entropy_sign (int | None): Знак энтропийного слагаемого.
            env (str | None): Описание графа среды.
            episodes (int | None): Число эпизодов обучения.

        Returns:
            ExperimentConfig: Новая конфигурация.
        """
        train_changes: Dict[str, Any] = {}
        if method is not None:
            train_changes["method"] = method
        if mask is not None:
            train_changes["mask_mode"] = mask
        if mask_features is not None:
            train_changes["mask_features"] = tuple(mask_features)
        if entropy_sign is not None:
            train_changes["entropy_sign"] = entropy_sign
        if episodes is not None:
            train_changes["episodes"] = episodes
        config = replace(self, train=replace(self.train, **train_changes)) if train_changes else self
        if seed is not None:
            config = replace(config, harness=replace(config.harness, seeds=(seed,)))
        if env is not None:
            config = replace(config, graph=GraphSection(env))
        return config
