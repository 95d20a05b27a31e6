class ValidationError(Exception):
    """Исключение для обработки ошибок валидации входных данных и конфигурации."""
    pass


class ConfigError(ValidationError):
    """Исключение для ошибок в конфигурационном файле или параметрах командной строки."""
    pass


class GraphFormatError(ValidationError):
    """
    Исключение для ошибок разбора документа со списком рёбер.

    Attributes:
        line_number (int | None): Номер строки документа, в которой найдена ошибка.
    """

    def __init__(self, message: str, line_number: int | None = None) -> None:
        self.line_number: int | None = line_number
        if line_number is not None:
            message = f"Строка {line_number}: {message}"
        super().__init__(message)


class MaskError(ValidationError):
    """Исключение для маски, ссылающейся на ребро вне эго-графа."""
    pass


class InvalidActionError(ValidationError):
    """
    Исключение для недопустимого действия агента.

    Attributes:
        agent (int): Идентификатор агента, передавшего недопустимое действие.
    """

    def __init__(self, agent: int, message: str) -> None:
        self.agent: int = agent
        super().__init__(f"Агент {agent}: {message}")


class SchedulingError(ConfigError):
    """Исключение для некорректного расписания исполнения (Δt_comm > Δt_control)."""
    pass


class CheckpointError(ValidationError):
    """Исключение для повреждённого, несовместимого или чужого файла чекпоинта."""
    pass


class NumericError(Exception):
    """Исключение для численных сбоев обучения: NaN в градиентах или функции потерь."""
    pass


class NonFiniteError(NumericError):
    """Исключение для нечисловых значений (NaN/inf) на выходе примитива в отладочном режиме."""
    pass


class ShapeError(Exception):
    """Исключение для несовместимых форм тензоров в примитиве."""
    pass
