import argparse
import logging
import sys
from typing import Sequence

from src.controller.command_controllers import (
    AblationCommandController,
    ExecCommandController,
    GraphCommandController,
    TrainCommandController,
)
from src.utils.Validator import EXIT_CONFIG_ERROR, Validator

logger = logging.getLogger(__name__)


class MainController:
    """
    Главный контроллер приложения.

    Разбирает командную строку, настраивает журнал и передаёт команду дочернему контроллеру.
    """
    # Формат журнала
    LOG_FORMAT: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    def __init__(self, argv: Sequence[str] | None = None) -> None:
        """
        Инициализация главного контроллера приложения.

        Args:
            argv (Sequence[str] | None): Аргументы без имени программы (None — sys.argv[1:]).
        """
        self.argv: list[str] = list(sys.argv[1:] if argv is None else argv)
        self.parser: argparse.ArgumentParser = self.build_parser()
        self.progress: bool = True

        # Контроллеры команд
        self.controllers = {
            "train": TrainCommandController(self),
            "ablate": AblationCommandController(self),
            "exec": ExecCommandController(self),
            "graph": GraphCommandController(self),
        }
        self.routes = {
            "train": self.controllers["train"].handle,
            "ablate": self.controllers["ablate"].handle,
            "exec": self.controllers["exec"].handle,
            "export-graph": self.controllers["graph"].handle,
            "validate-config": self.controllers["graph"].handle_validate,
        }

    @staticmethod
    def build_parser() -> argparse.ArgumentParser:
        """Парсер с подкомандами train, ablate, exec, export-graph и validate-config."""
        parser = argparse.ArgumentParser(prog="bayesg", description="Сетевое MARL с латентным эго-графом.")
        verbosity = parser.add_mutually_exclusive_group()
        verbosity.add_argument("-v", "--verbose", action="store_true", help="подробный журнал (DEBUG)")
        verbosity.add_argument("-q", "--quiet", action="store_true", help="только предупреждения, без индикаторов")
        commands = parser.add_subparsers(dest="command", required=True)

        train = commands.add_parser("train", help="обучение серии сидов")
        train.add_argument("--config", help="файл конфигурации TOML")
        train.add_argument("--env", help="граф среды: grid:RxC или file:<путь>")
        train.add_argument("--method", choices=Validator.KNOWN_METHODS)
        train.add_argument("--mask", choices=Validator.KNOWN_MASK_MODES)
        train.add_argument("--mask-features", dest="mask_features", help="state,traj,policy или all")
        train.add_argument("--entropy-sign", dest="entropy_sign", type=int, choices=(1, -1))
        train.add_argument("--episodes", type=int)
        train.add_argument("--seed", type=int, help="один сид вместо списка из конфигурации")
        train.add_argument("--out", help="папка результатов")

        ablate = commands.add_parser("ablate", help="абляции маскирования и признаков")
        ablate.add_argument("--config")
        ablate.add_argument("--env")
        ablate.add_argument("--episodes", type=int)
        ablate.add_argument("--seed", type=int)
        ablate.add_argument("--out")

        execute = commands.add_parser("exec", help="исполнение с обменом сообщениями")
        execute.add_argument("--checkpoint", required=True)
        execute.add_argument("--comm-ticks", dest="comm_ticks", type=int)
        execute.add_argument("--control-ticks", dest="control_ticks", type=int)
        execute.add_argument("--drop", type=float, help="вероятность потери сообщения")
        execute.add_argument("--delay", type=int, help="максимальная задержка в тиках")
        execute.add_argument("--episodes", type=int)
        execute.add_argument("--mask-strategy", dest="mask_strategy", choices=Validator.KNOWN_MASK_STRATEGIES)
        execute.add_argument("--out")

        export = commands.add_parser("export-graph", help="выгрузка латентного графа из чекпоинта")
        export.add_argument("--checkpoint", required=True)
        export.add_argument("--env", help="ожидаемый граф среды")
        export.add_argument("--step", type=int, default=0)
        export.add_argument("--out")

        validate = commands.add_parser("validate-config", help="проверка файла конфигурации")
        validate.add_argument("config")
        return parser

    def configure_logging(self, args: argparse.Namespace) -> None:
        """Уровень журнала по флагам -v/-q; тихий режим отключает индикаторы выполнения."""
        level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
        logging.basicConfig(level=level, format=self.LOG_FORMAT, stream=sys.stderr, force=True)
        self.progress = not args.quiet

    def run(self) -> int:
        """
        Выполняет команду.

        Returns:
            int: Код завершения: 0 — успех, 2 — ошибка конфигурации или ввода, 3 — численный сбой,
            4 — сид или вариант завершился другой ошибкой.
        """
        try:
            args = self.parser.parse_args(self.argv)
        except SystemExit as e:
            return EXIT_CONFIG_ERROR if e.code else 0
        self.configure_logging(args)
        logger.debug("Команда %s: %s", args.command, vars(args))
        return self.routes[args.command](args)
