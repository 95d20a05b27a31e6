import argparse
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import pandas as pd

from src import paths
from src.model.Checkpoint import save_checkpoint, trainer_checkpoint
from src.model.EnvGraph import EnvGraph
from src.model.ExperimentConfig import ExperimentConfig
from src.model.Trainer import Trainer, evaluate
from src.utils.Exceptions import NumericError
from src.utils.Utilities import Utilities
from src.utils.Validator import EXIT_NUMERIC_FAILURE, EXIT_OK, EXIT_SEED_FAILURE, Validator, handle_validation_errors
from src.view.ChartRenderer import render_return_curves
from src.view.ReportWriter import ReportWriter, summarize_curves, tail_statistics
from src.view.ui_notifications import show_error, show_message

logger = logging.getLogger(__name__)

CHECKPOINT_NAME: str = "checkpoint.bayg"


@dataclass
class SeedOutcome:
    """Итог одного сида: возвраты эпизодов обучения и оценочные возвраты."""
    seed: int
    returns: List[float]
    eval_returns: List[float]
    updates: int
    directory: Path


@dataclass
class ExperimentResult:
    """
    Итог серии сидов.

    Attributes:
        directory (Path): Папка артефактов.
        outcomes (Dict[int, SeedOutcome]): Успешные сиды.
        failures (Dict[int, str]): Ошибки по сидам.
        numeric_failure (bool): Был ли среди ошибок численный сбой.
    """
    directory: Path
    outcomes: Dict[int, SeedOutcome] = field(default_factory=dict)
    failures: Dict[int, str] = field(default_factory=dict)
    numeric_failure: bool = False

    @property
    def curves(self) -> Dict[int, List[float]]:
        return {seed: outcome.returns for seed, outcome in self.outcomes.items()}

    @property
    def exit_code(self) -> int:
        """3 при численном сбое любого сида, 4 при любой другой ошибке сида, иначе 0."""
        if self.numeric_failure:
            return EXIT_NUMERIC_FAILURE
        return EXIT_SEED_FAILURE if self.failures else EXIT_OK


class TrainCommandController:
    """
    Контроллер команды train.

    Обучает все сиды конфигурации (параллельно, если разрешено), пишет сырые CSV по сидам,
    чекпоинты, сводную таблицу и график возврата.
    """

    def __init__(self, app_controller: 'MainController') -> None:
        """
        Инициализация контроллера.

        Args:
            app_controller (MainController): Главный контроллер приложения.
        """
        self.app_controller: 'MainController' = app_controller

    def train_seed(self, config: ExperimentConfig, graph: EnvGraph, seed: int, directory: Path) -> SeedOutcome:
        """
        Обучение одного сида с записью сырых результатов.

        Args:
            config (ExperimentConfig): Конфигурация.
            graph (EnvGraph): Граф среды.
            seed (int): Сид.
            directory (Path): Папка сида.

        Returns:
            SeedOutcome: Итог сида.
        """
        checkpoint_path = directory / CHECKPOINT_NAME
        every = config.train.checkpoint_every

        def on_update(trainer: Trainer, row: dict) -> None:
            if every and trainer.updates % every == 0:
                save_checkpoint(checkpoint_path, trainer_checkpoint(trainer, config))

        Utilities.create_directory(directory)
        trainer = Trainer(graph, config.env, config.model, config.prior, config.train, seed,
                          progress=self.app_controller.progress, diagnostics_dir=directory, on_update=on_update)
        result = trainer.train()
        save_checkpoint(checkpoint_path, trainer_checkpoint(trainer, config))

        writer = ReportWriter(directory, excel=False)
        writer.write_metrics(result.metrics)
        writer.write_episodes(result.episodes)
        eval_returns: List[float] = []
        if config.harness.eval_episodes:
            evaluation = evaluate(result.policies, graph, config.env, seed, config.harness.eval_episodes,
                                  config.exec.mask_strategy, config.prior.tau_end,
                                  record_trajectory=config.harness.trajectory)
            eval_returns = evaluation.returns
            writer.write_frame(pd.DataFrame({"episode": range(len(eval_returns)), "return": eval_returns}),
                               "evaluation.csv")
            if evaluation.trajectory is not None:
                writer.write_frame(evaluation.trajectory, "trajectory.csv")
        logger.info("Сид %d: %d эпизодов, %d обновлений", seed, len(result.episodes), result.updates)
        return SeedOutcome(seed, result.episode_returns, eval_returns, result.updates, directory)

    def run_seeds(self, config: ExperimentConfig, graph: EnvGraph, directory: Path) -> ExperimentResult:
        """
        Обучает все сиды; ошибка одного сида не останавливает остальные.

        Args:
            config (ExperimentConfig): Конфигурация.
            graph (EnvGraph): Граф среды.
            directory (Path): Папка эксперимента.

        Returns:
            ExperimentResult: Успешные сиды и ошибки.
        """
        result = ExperimentResult(directory)
        seeds = list(config.harness.seeds)
        with ThreadPoolExecutor(max_workers=config.harness.seed_workers) as executor:
            futures = {
                executor.submit(self.train_seed, config, graph, seed, paths.seed_dir(directory, seed)): seed
                for seed in seeds
            }
            for future in as_completed(futures):
                seed = futures[future]
                try:
                    result.outcomes[seed] = future.result()
                except NumericError as e:
                    result.failures[seed] = str(e)
                    result.numeric_failure = True
                    logger.error("Сид %d остановлен численным сбоем: %s", seed, e)
                except Exception as e:
                    result.failures[seed] = str(e)
                    logger.exception("Сид %d завершился с ошибкой", seed)
        result.outcomes = {seed: result.outcomes[seed] for seed in seeds if seed in result.outcomes}
        return result

    def run_experiment(self, config: ExperimentConfig, root: Path | None = None) -> ExperimentResult:
        """
        Серия сидов одной конфигурации с агрегированием.

        Пишет config.toml, summary.csv (среднее и std возврата по эпизодам), final.csv
        (последняя доля эпизодов), failures.csv при ошибках и returns.svg.

        Args:
            config (ExperimentConfig): Конфигурация.
            root (Path | None): Родительская папка (по умолчанию из конфигурации или BAYESG_OUT).

        Returns:
            ExperimentResult: Папка артефактов и итоги сидов.
        """
        graph = config.build_graph()
        root = Path(root) if root else paths.output_dir(config.harness.output_dir)
        name = f"{config.train.method}_{config.train.mask_mode}_{config.config_hash()[:8]}"
        directory = root / name
        Utilities.create_directory(directory)
        config.save(directory / "config.toml")

        result = self.run_seeds(config, graph, directory)
        writer = ReportWriter(directory, excel=config.harness.excel)
        writer.write_summary(result.curves)
        tail = tail_statistics(result.curves, config.harness.tail_fraction)
        writer.write_frame(pd.DataFrame([{"method": config.train.method, "mask_mode": config.train.mask_mode,
                                         "mean_return": tail["mean"], "std_return": tail["std"],
                                         "seeds": tail["seeds"]}]), "final.csv")
        if result.failures:
            writer.write_frame(pd.DataFrame(sorted(result.failures.items()), columns=["seed", "error"]), "failures.csv")
            logger.warning("Сиды с ошибками: %s", sorted(result.failures))
        if config.harness.chart and result.curves:
            summary = summarize_curves(result.curves)
            render_return_curves({config.train.method: summary["mean_return"].to_numpy()}, directory / "returns.svg")
        return result

    @handle_validation_errors
    def handle(self, args: argparse.Namespace) -> int:
        """
        Обработчик команды train.

        Args:
            args (argparse.Namespace): Аргументы командной строки.

        Returns:
            int: 0, если все сиды обучены, 3 при численном сбое, 4 если сид завершился другой ошибкой.
        """
        config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        features = None
        if args.mask_features:
            features = Validator.check_mask_features(args.mask_features.split(","))
        config = config.with_overrides(seed=args.seed, method=args.method, mask=args.mask, mask_features=features,
                                       entropy_sign=args.entropy_sign, env=args.env, episodes=args.episodes)
        result = self.run_experiment(config, Path(args.out) if args.out else None)
        if result.failures:
            details = "\n".join(f"сид {seed}: {error}" for seed, error in sorted(result.failures.items()))
            show_error("Ошибки обучения", details)
        show_message("Готово", f"Результаты: {result.directory}")
        return result.exit_code
