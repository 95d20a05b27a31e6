import hashlib
import os
import tempfile
from pathlib import Path
from typing import List

import numpy as np


class Utilities:
    """
    Класс вспомогательных функций: работа с директориями, атомарная запись файлов,
    детерминированные генераторы случайных чисел и хеши.

    Содержит статические методы, которыми пользуются модели и контроллеры.
    """

    @staticmethod
    def create_directory(*dir_path: str | Path) -> None:
        """
        Создает директорию, если она не существует.

        Args:
            *dir_path (str | Path): Пути к создаваемым директориям.

        Raises:
            OSError: Если создание директории не удалось из-за системной ошибки.
        """
        for path in dir_path:
            path_obj: Path = Path(path)
            if not path_obj.exists():
                try:
                    path_obj.mkdir(parents=True, exist_ok=True)
                except OSError as e:
                    raise OSError(f"Ошибка при создании директории '{path}': {e}")

    @staticmethod
    def write_bytes_atomic(file_path: str | Path, data: bytes) -> None:
        """
        Записывает байты в файл через временный файл и переименование.

        Args:
            file_path (str | Path): Путь к итоговому файлу.
            data (bytes): Содержимое.

        Raises:
            OSError: Если запись не удалась.
        """
        path: Path = Path(file_path)
        Utilities.create_directory(path.parent)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp_name, path)
        except OSError as e:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise OSError(f"Ошибка при записи файла '{path}': {e}")

    @staticmethod
    def make_generators(seed: int, count: int, stream: str) -> List[np.random.Generator]:
        """
        Порождает независимые генераторы случайных чисел для агентов или узлов.

        Потоки с разными именами не пересекаются, а один и тот же (seed, stream)
        всегда даёт одинаковые генераторы, поэтому порядок вычислений агентов
        не влияет на результат.

        Args:
            seed (int): Основной сид эксперимента.
            count (int): Количество генераторов.
            stream (str): Имя потока (например, "mask", "action", "arrivals").

        Returns:
            List[np.random.Generator]: Генераторы, по одному на индекс.
        """
        stream_key: int = int.from_bytes(hashlib.sha256(stream.encode("utf-8")).digest()[:4], "little")
        root = np.random.SeedSequence([int(seed), stream_key])
        return [np.random.default_rng(child) for child in root.spawn(count)]

    @staticmethod
    def sha256_hex(data: bytes) -> str:
        """
        Считает SHA-256 хеш данных.

        Args:
            data (bytes): Данные.

        Returns:
            str: Шестнадцатеричная строка хеша.
        """
        return hashlib.sha256(data).hexdigest()
