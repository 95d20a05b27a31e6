import argparse
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from src.model.AgentPolicy import AgentPolicy, build_channels
from src.model.Checkpoint import Checkpoint, load_checkpoint, restore_policies
from src.model.EnvGraph import EnvGraph, parse_env_spec
from src.model.ExperimentConfig import ExperimentConfig
from src.model.LatentMask import retention_probabilities
from src.model.TrafficEnv import EnvConfig
from src.model.Trainer import evaluate
from src.utils.Exceptions import CheckpointError, ConfigError
from src.utils.Validator import handle_validation_errors
from src.view.ReportWriter import ReportWriter
from src.view.ui_notifications import show_message

logger = logging.getLogger(__name__)


def latent_retention_matrix(policies: Sequence[AgentPolicy], graph: EnvGraph, env_config: EnvConfig | None,
                            seed: int, step: int = 0) -> np.ndarray:
    """
    Вероятности удержания рёбер σ(φ) всех агентов на шаге step первого оценочного эпизода.

    Строка i — маска агента i; на диагонали 1, вне окрестностей 0. Режим "none" даёт 1,
    "random" — 0.5.

    Args:
        policies (Sequence[AgentPolicy]): Агенты BayesG.
        graph (EnvGraph): Граф среды.
        env_config (EnvConfig | None): Параметры среды.
        seed (int): Сид оценочного эпизода.
        step (int): Шаг снимка.

    Returns:
        np.ndarray: Матрица N×N.

    Raises:
        ConfigError: Если метод агентов не строит латентный граф или шаг вне эпизода.
    """
    if any(not policy.uses_mask for policy in policies):
        raise ConfigError(f"Метод {policies[0].method} не строит латентный граф.")
    snapshot = None
    if any(policy.learns_mask for policy in policies):
        snapshot = evaluate(policies, graph, env_config, seed, 1, snapshot_step=step).snapshot
    matrix = np.eye(graph.node_count)
    for policy in policies:
        neighbors = list(policy.ego.neighbors)
        if not neighbors:
            continue
        if policy.mask_mode == "none":
            matrix[policy.agent, neighbors] = 1.0
        elif policy.mask_mode == "random":
            matrix[policy.agent, neighbors] = 0.5
        else:
            observations, fingerprints, hidden = snapshot
            channels = build_channels(observations[None], fingerprints[None], hidden[None], policy.ego.members)
            matrix[policy.agent, neighbors] = retention_probabilities(policy.edge_logits(channels))[0]
    return matrix


def export_latent_graph(checkpoint: Checkpoint, graph: EnvGraph | None = None, step: int = 0) -> np.ndarray:
    """
    Латентный граф обученных агентов из чекпоинта.

    Args:
        checkpoint (Checkpoint): Чекпоинт.
        graph (EnvGraph | None): Ожидаемый граф среды (None — граф из конфигурации чекпоинта).
        step (int): Шаг оценочного эпизода.

    Returns:
        np.ndarray: Матрица вероятностей удержания N×N.

    Raises:
        CheckpointError: Если граф не совпадает с графом чекпоинта.
    """
    config, trained_graph, policies, seed = restore_policies(checkpoint)
    if graph is not None and graph.fingerprint() != trained_graph.fingerprint():
        raise CheckpointError("Переданный граф не совпадает с графом, на котором обучен чекпоинт.")
    return latent_retention_matrix(policies, trained_graph, config.env, seed, step)


class GraphCommandController:
    """Контроллер команд export-graph и validate-config."""

    def __init__(self, app_controller: 'MainController') -> None:
        self.app_controller: 'MainController' = app_controller

    @handle_validation_errors
    def handle(self, args: argparse.Namespace) -> int:
        """
        Обработчик команды export-graph: пишет latent_graph_matrix.csv и latent_graph_edges.csv.

        Args:
            args (argparse.Namespace): Аргументы командной строки.
        """
        checkpoint = load_checkpoint(args.checkpoint)
        graph = parse_env_spec(args.env) if args.env else None
        matrix = export_latent_graph(checkpoint, graph, args.step)
        if graph is None:
            graph = ExperimentConfig.from_toml(checkpoint.meta["config"]).build_graph()
        out = Path(args.out) if args.out else Path(args.checkpoint).parent
        written = ReportWriter(out, excel=False).write_latent_graph(matrix, graph)
        logger.info("Латентный граф шага %d: %s", args.step, ", ".join(str(p) for p in written))
        show_message("Латентный граф", f"Файлы: {', '.join(p.name for p in written)}\nПапка: {out}")

    @handle_validation_errors
    def handle_validate(self, args: argparse.Namespace) -> int:
        """
        Обработчик команды validate-config: разбирает файл и строит граф без обучения.

        Args:
            args (argparse.Namespace): Аргументы командной строки.
        """
        config = ExperimentConfig.load(args.config)
        graph = config.build_graph()
        show_message("Конфигурация корректна",
                     f"{args.config}: метод {config.train.method}, маска {config.train.mask_mode}, "
                     f"граф {graph.node_count} узлов / {len(graph.edges)} рёбер, "
                     f"хеш {config.config_hash()[:8]}")
