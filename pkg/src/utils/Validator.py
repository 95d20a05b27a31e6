import functools
import logging
import math
from pathlib import Path
from typing import Callable, Iterable

from src.utils.Exceptions import ConfigError, NumericError, SchedulingError, ValidationError
from src.view.ui_notifications import show_error

logger = logging.getLogger(__name__)

# Коды завершения командной строки
EXIT_OK: int = 0
EXIT_CONFIG_ERROR: int = 2
EXIT_NUMERIC_FAILURE: int = 3
EXIT_SEED_FAILURE: int = 4
# Коды итогов серии от лучшего к худшему
EXIT_PRIORITY: tuple[int, ...] = (EXIT_OK, EXIT_SEED_FAILURE, EXIT_NUMERIC_FAILURE)


def handle_validation_errors(func: Callable) -> Callable:
    """
    Декоратор для автоматической обработки ошибок валидации в контроллерах команд.

    Ошибки конфигурации и валидации сообщаются пользователю и превращаются в код 2,
    численные сбои обучения — в код 3. Успешное выполнение возвращает код 0,
    если обёрнутая функция сама не вернула код.

    Args:
        func (Callable): Функция, которую нужно обернуть.

    Returns:
        Callable: Обернутая функция, возвращающая код завершения.
    """

    @functools.wraps(func)
    def wrapper(controller: 'Controller', *args, **kwargs) -> int:
        try:
            result = func(controller, *args, **kwargs)
            return EXIT_OK if result is None else int(result)
        except ValidationError as e:
            show_error("Ошибка конфигурации", str(e))
            return EXIT_CONFIG_ERROR
        except NumericError as e:
            logger.exception("Численный сбой")
            show_error("Численный сбой", str(e))
            return EXIT_NUMERIC_FAILURE

    return wrapper


class Validator:
    """
    Класс Validator предоставляет методы для проверки параметров экспериментов и файлов.

    Содержит статические методы для валидации диапазонов гиперпараметров, имён режимов
    и путей. Все методы при нарушении бросают ConfigError.
    """
    KNOWN_METHODS: tuple[str, ...] = ("bayesg", "ia2c", "commnet", "neurcomm")  # Поддерживаемые методы
    KNOWN_MASK_MODES: tuple[str, ...] = ("learned", "none", "random")  # Режимы маскирования
    KNOWN_MASK_FEATURES: tuple[str, ...] = ("state", "trajectory", "policy")  # Признаки сети логитов
    KNOWN_LOGIT_MODES: tuple[str, ...] = ("network", "free")  # Источник логитов рёбер
    KNOWN_OPTIMIZERS: tuple[str, ...] = ("adam", "sgd")
    KNOWN_ARRIVAL_PROFILES: tuple[str, ...] = ("constant", "peak")
    KNOWN_MASK_STRATEGIES: tuple[str, ...] = ("sample", "mean")

    @staticmethod
    def check_unit_interval(name: str, value: float, *, closed_low: bool = False, closed_high: bool = True) -> None:
        """
        Проверяет, что значение лежит в интервале (0, 1] (или в заданном варианте границ).

        Args:
            name (str): Имя параметра для сообщения об ошибке.
            value (float): Проверяемое значение.
            closed_low (bool): Допускается ли значение 0.
            closed_high (bool): Допускается ли значение 1.

        Raises:
            ConfigError: Если значение вне интервала или не является конечным числом.
        """
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"Параметр {name} должен быть конечным числом, получено {value!r}.")
        low_ok: bool = value >= 0 if closed_low else value > 0
        high_ok: bool = value <= 1 if closed_high else value < 1
        if not (low_ok and high_ok):
            left: str = "[" if closed_low else "("
            right: str = "]" if closed_high else ")"
            raise ConfigError(f"Параметр {name} должен лежать в {left}0, 1{right}, получено {value}.")

    @staticmethod
    def check_retention_bias(value: float) -> None:
        """
        Проверяет параметр априорного удержания рёбер λ ∈ (0, 1).

        Args:
            value (float): Значение λ.

        Raises:
            ConfigError: Если λ на границе или вне интервала: log λ или log(1−λ) не определён.
        """
        Validator.check_unit_interval("retention_bias", value, closed_low=False, closed_high=False)

    @staticmethod
    def check_positive(name: str, value: float) -> None:
        """
        Проверяет строгую положительность значения.

        Args:
            name (str): Имя параметра.
            value (float): Значение.

        Raises:
            ConfigError: Если значение не больше нуля.
        """
        if not isinstance(value, (int, float)) or not math.isfinite(value) or value <= 0:
            raise ConfigError(f"Параметр {name} должен быть положительным, получено {value!r}.")

    @staticmethod
    def check_non_negative(name: str, value: float) -> None:
        """
        Проверяет неотрицательность значения.

        Args:
            name (str): Имя параметра.
            value (float): Значение.

        Raises:
            ConfigError: Если значение отрицательно.
        """
        if not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
            raise ConfigError(f"Параметр {name} должен быть неотрицательным, получено {value!r}.")

    @staticmethod
    def check_choice(name: str, value: str, choices: Iterable[str]) -> None:
        """
        Проверяет, что строковое значение входит в список допустимых.

        Args:
            name (str): Имя параметра.
            value (str): Значение.
            choices (Iterable[str]): Допустимые значения.

        Raises:
            ConfigError: Если значение неизвестно.
        """
        choices = tuple(choices)
        if value not in choices:
            raise ConfigError(f"Неизвестное значение {name}={value!r}. Допустимые: {', '.join(choices)}.")

    @staticmethod
    def check_mask_features(features: Iterable[str]) -> tuple[str, ...]:
        """
        Проверяет набор признаков сети логитов рёбер.

        Args:
            features (Iterable[str]): Имена признаков; "all" раскрывается в полный набор.

        Returns:
            tuple[str, ...]: Нормализованный набор в каноническом порядке.

        Raises:
            ConfigError: Если набор пуст или содержит неизвестное имя.
        """
        items: list[str] = [f.strip() for f in features if f.strip()]
        if "all" in items:
            return Validator.KNOWN_MASK_FEATURES
        # "traj" принимается как сокращение в командной строке
        items = ["trajectory" if f == "traj" else f for f in items]
        for f in items:
            Validator.check_choice("mask_features", f, Validator.KNOWN_MASK_FEATURES)
        if not items:
            raise ConfigError("Набор mask_features не может быть пустым.")
        return tuple(f for f in Validator.KNOWN_MASK_FEATURES if f in items)

    @staticmethod
    def check_schedule(comm_ticks: int, control_ticks: int) -> None:
        """
        Проверяет расписание исполнения.

        Args:
            comm_ticks (int): Окно связи Δt_comm в тиках.
            control_ticks (int): Период управления Δt_control в тиках.

        Raises:
            SchedulingError: Если Δt_comm > Δt_control или значения не целые положительные.
        """
        if not isinstance(comm_ticks, int) or not isinstance(control_ticks, int):
            raise SchedulingError("Δt_comm и Δt_control задаются целым числом тиков.")
        if comm_ticks < 0 or control_ticks <= 0:
            raise SchedulingError(
                f"Некорректное расписание: Δt_comm={comm_ticks}, Δt_control={control_ticks}."
            )
        if comm_ticks > control_ticks:
            raise SchedulingError(
                f"Окно связи Δt_comm={comm_ticks} превышает период управления Δt_control={control_ticks}."
            )

    @staticmethod
    def is_file_exists(file_path: str | Path) -> bool:
        """
        Проверяет существование файла.

        Args:
            file_path (str | Path): Путь к файлу.

        Returns:
            bool: True, если файл существует, иначе False.
        """
        return Path(file_path).is_file()

    @staticmethod
    def require_file(file_path: str | Path, what: str = "Файл") -> Path:
        """
        Проверяет существование файла и возвращает путь.

        Args:
            file_path (str | Path): Путь к файлу.
            what (str): Название файла для сообщения.

        Returns:
            Path: Путь к существующему файлу.

        Raises:
            ConfigError: Если файл не найден.
        """
        path: Path = Path(file_path)
        if not path.is_file():
            raise ConfigError(f"{what} {path} не найден.")
        return path
