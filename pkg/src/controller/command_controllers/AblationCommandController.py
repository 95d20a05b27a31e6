import argparse
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import pandas as pd

from src import paths
from src.model.ExperimentConfig import ExperimentConfig
from src.utils.Utilities import Utilities
from src.utils.Validator import EXIT_OK, EXIT_PRIORITY, Validator, handle_validation_errors
from src.view.ChartRenderer import render_return_curves
from src.view.ReportWriter import ReportWriter, summarize_curves, tail_statistics
from src.view.ui_notifications import show_message

logger = logging.getLogger(__name__)

ABLATION_COLUMNS: List[str] = ["group", "variant", "mean_return", "std_return", "seeds", "failed"]

# Варианты признаков сети логитов; "all" означает все три сразу
FEATURE_VARIANTS: Dict[str, Tuple[str, ...]] = {
    "state": ("state",),
    "trajectory": ("trajectory",),
    "policy": ("policy",),
    "all": Validator.KNOWN_MASK_FEATURES,
}


@dataclass(frozen=True)
class AblationVariant:
    """Строка таблицы абляций и параметры её прогона."""
    group: str
    variant: str
    mask_mode: str
    mask_features: Tuple[str, ...]

    @property
    def key(self) -> Tuple[str, Tuple[str, ...]]:
        return self.mask_mode, self.mask_features


def ablation_variants(config: ExperimentConfig) -> List[AblationVariant]:
    """
    Варианты абляций: способ маскирования при признаках из конфигурации и признаки при обучаемой маске.

    Args:
        config (ExperimentConfig): Базовая конфигурация.

    Returns:
        List[AblationVariant]: Сначала группа "masking", затем "features".
    """
    features = config.train.mask_features
    variants = [AblationVariant("masking", mode, mode, features) for mode in Validator.KNOWN_MASK_MODES]
    variants += [AblationVariant("features", name, "learned", tuple(value))
                 for name, value in FEATURE_VARIANTS.items()]
    return variants


class AblationCommandController:
    """
    Контроллер команды ablate.

    Каждый уникальный вариант обучается через контроллер train; варианты с одинаковыми
    параметрами (обучаемая маска встречается в обеих группах) считаются один раз.
    """

    def __init__(self, app_controller: 'MainController') -> None:
        self.app_controller: 'MainController' = app_controller
        self.exit_code: int = EXIT_OK

    def ablation_suite(self, config: ExperimentConfig, root: Path | None = None) -> pd.DataFrame:
        """
        Прогоняет все варианты абляций и пишет ablation.csv (и ablation.xlsx).

        Args:
            config (ExperimentConfig): Базовая конфигурация (метод принудительно bayesg).
            root (Path | None): Родительская папка результатов.

        Returns:
            pd.DataFrame: Таблица со столбцами ABLATION_COLUMNS.
        """
        base = config.with_overrides(method="bayesg")
        root = Path(root) if root else paths.output_dir(config.harness.output_dir)
        directory = root / f"ablation_{base.config_hash()[:8]}"
        Utilities.create_directory(directory)
        base.save(directory / "config.toml")

        trainer = self.app_controller.controllers["train"]
        cache: Dict[Tuple[str, Tuple[str, ...]], object] = {}
        rows = []
        curves: Dict[str, List[float]] = {}
        self.exit_code = EXIT_OK
        for variant in ablation_variants(base):
            if variant.key not in cache:
                logger.info("Абляция %s/%s", variant.group, variant.variant)
                variant_config = base.with_overrides(mask=variant.mask_mode, mask_features=variant.mask_features)
                cache[variant.key] = trainer.run_experiment(variant_config, directory)
            result = cache[variant.key]
            self.exit_code = max(self.exit_code, result.exit_code, key=EXIT_PRIORITY.index)
            tail = tail_statistics(result.curves, base.harness.tail_fraction)
            rows.append({"group": variant.group, "variant": variant.variant, "mean_return": tail["mean"],
                         "std_return": tail["std"], "seeds": tail["seeds"], "failed": len(result.failures)})
            if result.curves:
                curves[f"{variant.group}:{variant.variant}"] = summarize_curves(result.curves)["mean_return"].tolist()

        table = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
        ReportWriter(directory, excel=base.harness.excel).write_table(table, "ablation")
        if base.harness.chart and curves:
            render_return_curves(curves, directory / "ablation.svg", title="Абляции: средний возврат")
        self._log_feature_comparison(table)
        logger.info("Таблица абляций: %s", directory / "ablation.csv")
        return table

    @staticmethod
    def _log_feature_comparison(table: pd.DataFrame) -> None:
        features = table[table["group"] == "features"].set_index("variant")["mean_return"]
        singles = features.drop("all", errors="ignore").dropna()
        if "all" in features and len(singles):
            best = singles.idxmax()
            logger.info("Все признаки: %.3f, лучший одиночный (%s): %.3f",
                        features["all"], best, singles[best])

    @handle_validation_errors
    def handle(self, args: argparse.Namespace) -> int:
        """
        Обработчик команды ablate.

        Args:
            args (argparse.Namespace): Аргументы командной строки.

        Returns:
            int: Худший код вариантов: 3 при численном сбое, 4 при другой ошибке сида, иначе 0.
        """
        config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        config = config.with_overrides(seed=args.seed, env=args.env, episodes=args.episodes)
        table = self.ablation_suite(config, Path(args.out) if args.out else None)
        show_message("Абляции", table.to_string(index=False))
        return self.exit_code
