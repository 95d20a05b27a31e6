import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import Callable

import pandas as pd

from src.model.Checkpoint import load_checkpoint, restore_policies
from src.model.ExecSimulator import ExecConfig, ExecutionRun, message_accounting, run_execution
from src.utils.Validator import EXIT_OK, handle_validation_errors
from src.view.ReportWriter import ReportWriter
from src.view.ui_notifications import show_message

logger = logging.getLogger(__name__)


def exec_overrides(config: ExecConfig, args: argparse.Namespace) -> ExecConfig:
    """Флаги командной строки поверх секции [exec] чекпоинта."""
    schedule, channel = config.schedule, config.channel
    if args.comm_ticks is not None:
        schedule = replace(schedule, comm_ticks=args.comm_ticks)
    if args.control_ticks is not None:
        schedule = replace(schedule, control_ticks=args.control_ticks)
    if args.drop is not None:
        channel = replace(channel, drop_probability=args.drop)
    if args.delay is not None:
        channel = replace(channel, delay_ticks=args.delay)
    return ExecConfig(schedule, channel,
                      args.episodes if args.episodes is not None else config.episodes,
                      args.mask_strategy or config.mask_strategy)


class ExecCommandController:
    """Контроллер команды exec: децентрализованное исполнение обученных агентов из чекпоинта."""

    def __init__(self, app_controller: 'MainController') -> None:
        self.app_controller: 'MainController' = app_controller

    def execute_checkpoint(self, checkpoint_path: str | Path, out: str | Path,
                           adjust: Callable[[ExecConfig], ExecConfig] | None = None) -> ExecutionRun:
        """
        Исполняет агентов чекпоинта и пишет exec_returns.csv и edge_usage.csv.

        Args:
            checkpoint_path (str | Path): Путь к чекпоинту.
            out (str | Path): Папка результатов.
            adjust (Callable[[ExecConfig], ExecConfig] | None): Правка секции [exec] чекпоинта перед запуском.

        Returns:
            ExecutionRun: Результат прогона.

        Raises:
            CheckpointError: Если чекпоинт повреждён или не подходит к своей конфигурации.
            SchedulingError: Если расписание недопустимо.
        """
        config, graph, policies, seed = restore_policies(load_checkpoint(checkpoint_path))
        exec_config = adjust(config.exec) if adjust else config.exec
        run = run_execution(policies, graph, config.env, exec_config.channel, exec_config.schedule, seed,
                            exec_config.episodes, exec_config.mask_strategy, config.prior.tau_end)
        writer = ReportWriter(out, excel=False)
        writer.write_frame(pd.DataFrame({"episode": range(len(run.returns)), "return": run.returns}),
                           "exec_returns.csv")
        writer.write_frame(message_accounting(run), "edge_usage.csv")
        logger.info("Исполнение: %d эпизодов, %d сообщений", len(run.returns), run.message_count)
        return run

    @handle_validation_errors
    def handle(self, args: argparse.Namespace) -> int:
        """
        Обработчик команды exec.

        Args:
            args (argparse.Namespace): Аргументы командной строки.

        Returns:
            int: 0 после успешного исполнения.
        """
        out = Path(args.out) if args.out else Path(args.checkpoint).parent / "exec"
        run = self.execute_checkpoint(args.checkpoint, out, lambda config: exec_overrides(config, args))
        returns = ", ".join(f"{value:.3f}" for value in run.returns)
        show_message("Исполнение завершено", f"Возвраты: {returns}\nРезультаты: {out}")
        return EXIT_OK
