"""
Двоичный формат чекпоинта.

Раскладка (little-endian):
    magic "BAYG" | version u16 | длина метаданных u32 | метаданные JSON (UTF-8, ключи отсортированы)
    | число тензоров u32 | таблица: длина имени u16, имя UTF-8, ndim u8, размеры u32 × ndim, смещение u64
    | данные float64 подряд в порядке таблицы.

Тензоры записываются в порядке имён, поэтому save → load → save даёт те же байты.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np

from src.model.AgentPolicy import AgentPolicy
from src.model.EnvGraph import EnvGraph
from src.model.ExperimentConfig import ExperimentConfig
from src.model.Trainer import Trainer, build_policies, load_parameters
from src.model.TrafficEnv import TrafficEnv
from src.utils.Exceptions import CheckpointError
from src.utils.Utilities import Utilities
from src.utils.Validator import Validator

logger = logging.getLogger(__name__)

MAGIC: bytes = b"BAYG"
FORMAT_VERSION: int = 1


@dataclass
class Checkpoint:
    """
    Содержимое чекпоинта.

    Attributes:
        tensors (Dict[str, np.ndarray]): Параметры и состояние оптимизаторов по именам.
        meta (Dict[str, Any]): Шаг обучения, сид, хеш и текст конфигурации, отпечаток графа.
        version (int): Версия формата.
    """
    tensors: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    """
    Сериализует чекпоинт в байты.

    Args:
        checkpoint (Checkpoint): Чекпоинт.

    Returns:
        bytes: Двоичное представление.
    """
    meta = json.dumps(checkpoint.meta, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    names = sorted(checkpoint.tensors)
    header = [MAGIC, struct.pack("<HI", checkpoint.version, len(meta)), meta, struct.pack("<I", len(names))]
    blobs = []
    offset = 0
    for name in names:
        data = np.ascontiguousarray(checkpoint.tensors[name], dtype="<f8")
        encoded_name = name.encode("utf-8")
        header.append(struct.pack("<H", len(encoded_name)))
        header.append(encoded_name)
        header.append(struct.pack("<B", data.ndim))
        header.append(struct.pack(f"<{data.ndim}I", *data.shape))
        header.append(struct.pack("<Q", offset))
        blob = data.tobytes()
        blobs.append(blob)
        offset += len(blob)
    return b"".join(header + blobs)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.position = 0

    def take(self, size: int) -> bytes:
        if self.position + size > len(self.data):
            raise CheckpointError(f"Чекпоинт обрезан: нужно {size} байт на позиции {self.position}.")
        chunk = self.data[self.position:self.position + size]
        self.position += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Разбирает байты чекпоинта.

    Args:
        data (bytes): Двоичное представление.

    Returns:
        Checkpoint: Чекпоинт.

    Raises:
        CheckpointError: Если сигнатура, версия или структура некорректны.
    """
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("Файл не является чекпоинтом: неверная сигнатура.")
    version, meta_length = reader.unpack("<HI")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Неподдерживаемая версия чекпоинта {version}, ожидается {FORMAT_VERSION}.")
    try:
        meta = json.loads(reader.take(meta_length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Повреждены метаданные чекпоинта: {e}")
    (count,) = reader.unpack("<I")
    table = []
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        name = reader.take(name_length).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        (offset,) = reader.unpack("<Q")
        table.append((name, shape, offset))
    data_start = reader.position
    tensors: Dict[str, np.ndarray] = {}
    for name, shape, offset in table:
        size = int(np.prod(shape, dtype=np.int64)) * 8
        start = data_start + offset
        if start + size > len(data):
            raise CheckpointError(f"Данные тензора {name} выходят за конец файла.")
        tensors[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=start).reshape(shape).astype(np.float64)
    return Checkpoint(tensors=tensors, meta=meta, version=version)


def save_checkpoint(file_path: str | Path, checkpoint: Checkpoint) -> Path:
    """Атомарно записывает чекпоинт; возвращает путь."""
    path = Path(file_path)
    Utilities.write_bytes_atomic(path, encode_checkpoint(checkpoint))
    logger.info("Чекпоинт шага %d сохранён: %s", checkpoint.step, path)
    return path


def load_checkpoint(file_path: str | Path) -> Checkpoint:
    """
    Читает чекпоинт из файла.

    Raises:
        ConfigError: Если файла нет.
        CheckpointError: Если содержимое некорректно.
    """
    path = Validator.require_file(file_path, "Чекпоинт")
    return decode_checkpoint(path.read_bytes())


def trainer_checkpoint(trainer: Trainer, config: ExperimentConfig) -> Checkpoint:
    """
    Снимок обучения: параметры, состояние оптимизаторов и конфигурация сида.

    Args:
        trainer (Trainer): Обучение.
        config (ExperimentConfig): Конфигурация эксперимента.

    Returns:
        Checkpoint: Чекпоинт с конфигурацией, в которой оставлен только сид тренера.
    """
    seed_config = config.with_overrides(seed=trainer.seed)
    text = seed_config.to_toml()
    meta = {
        "config": text,
        "config_hash": Utilities.sha256_hex(text.encode("utf-8")),
        "seed": trainer.seed,
        "step": trainer.global_step,
        "updates": trainer.updates,
        "episode": trainer.episode,
        "graph": trainer.graph.fingerprint(),
    }
    return Checkpoint(tensors=trainer.state_tensors(), meta=meta)


def restore_policies(checkpoint: Checkpoint) -> Tuple[ExperimentConfig, EnvGraph, List[AgentPolicy], int]:
    """
    Восстанавливает агентов из чекпоинта.

    Returns:
        Tuple[ExperimentConfig, EnvGraph, List[AgentPolicy], int]: Конфигурация, граф, агенты и сид.

    Raises:
        CheckpointError: Если метаданные неполны, конфигурация изменена или параметры не подходят.
    """
    try:
        text = checkpoint.meta["config"]
        seed = int(checkpoint.meta["seed"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"В метаданных чекпоинта нет конфигурации или сида: {e}")
    if Utilities.sha256_hex(text.encode("utf-8")) != checkpoint.meta.get("config_hash"):
        raise CheckpointError("Хеш конфигурации не совпадает с сохранённым.")
    config = ExperimentConfig.from_toml(text)
    graph = config.build_graph()
    if graph.fingerprint() != checkpoint.meta.get("graph"):
        raise CheckpointError("Граф конфигурации не совпадает с графом чекпоинта.")
    env = TrafficEnv(graph, config.env, seed)
    policies = build_policies(env, config.model, config.train, seed)
    try:
        load_parameters(policies, checkpoint.tensors)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"Параметры чекпоинта не подходят к конфигурации: {e}")
    return config, graph, policies, seed
