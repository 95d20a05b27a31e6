import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence

import numpy as np
import pandas as pd

from src.model.EnvGraph import EnvGraph
from src.model.Trainer import METRICS_COLUMNS
from src.utils.Utilities import Utilities

logger = logging.getLogger(__name__)

EPISODE_COLUMNS: List[str] = ["episode", "return", "steps"]
SUMMARY_COLUMNS: List[str] = ["episode", "mean_return", "std_return", "seeds"]
EDGE_COLUMNS: List[str] = ["source", "target", "retention"]


class ReportWriter:
    """
    Запись таблиц результатов в CSV (и XLSX для сводных таблиц).

    Все файлы пишутся внутри одной папки; CSV без индекса, поэтому при одинаковых данных
    байты файлов совпадают.
    """

    def __init__(self, directory: str | Path, excel: bool = True) -> None:
        """
        Args:
            directory (str | Path): Папка отчёта (создаётся при необходимости).
            excel (bool): Дублировать сводные таблицы в XLSX.
        """
        self.directory: Path = Path(directory)
        self.excel: bool = excel
        Utilities.create_directory(self.directory)

    def write_frame(self, frame: pd.DataFrame, name: str) -> Path:
        path = self.directory / name
        frame.to_csv(path, index=False)
        logger.debug("Записан %s (%d строк)", path, len(frame))
        return path

    def write_metrics(self, rows: Iterable[Mapping], name: str = "metrics.csv") -> Path:
        """Метрики обновлений с фиксированным заголовком."""
        return self.write_frame(pd.DataFrame(list(rows), columns=list(METRICS_COLUMNS)), name)

    def write_episodes(self, rows: Iterable[Mapping], name: str = "episodes.csv") -> Path:
        """Итоги эпизодов: episode, return, steps."""
        return self.write_frame(pd.DataFrame(list(rows), columns=EPISODE_COLUMNS), name)

    def write_summary(self, curves: Mapping[int, Sequence[float]], name: str = "summary.csv") -> Path:
        """
        Среднее и стандартное отклонение (ddof = 0) возврата по сидам для каждого эпизода.

        Args:
            curves (Mapping[int, Sequence[float]]): Возвраты эпизодов по сидам.
            name (str): Имя файла.

        Returns:
            Path: Путь к CSV.
        """
        return self.write_frame(summarize_curves(curves), name)

    def write_table(self, frame: pd.DataFrame, stem: str) -> Path:
        """Таблица в CSV и, если включено, в XLSX с тем же именем."""
        path = self.write_frame(frame, f"{stem}.csv")
        if self.excel:
            frame.to_excel(self.directory / f"{stem}.xlsx", index=False, engine="openpyxl")
        return path

    def write_latent_graph(self, matrix: np.ndarray, graph: EnvGraph, stem: str = "latent_graph") -> List[Path]:
        """
        Матрица вероятностей удержания N×N и список рёбер с весами.

        Args:
            matrix (np.ndarray): Матрица, строка i — маска агента i.
            graph (EnvGraph): Граф среды (рёбра в обоих направлениях).
            stem (str): Префикс имён файлов.

        Returns:
            List[Path]: Пути к матрице и к списку рёбер.
        """
        n = graph.node_count
        matrix_frame = pd.DataFrame(matrix, columns=[str(j) for j in range(n)])
        edges = [{"source": i, "target": j, "retention": float(matrix[i, j])}
                 for i in range(n) for j in graph.neighbors(i)]
        return [
            self.write_frame(matrix_frame, f"{stem}_matrix.csv"),
            self.write_frame(pd.DataFrame(edges, columns=EDGE_COLUMNS), f"{stem}_edges.csv"),
        ]


def summarize_curves(curves: Mapping[int, Sequence[float]]) -> pd.DataFrame:
    """Сводка по сидам до длины самой короткой кривой."""
    if not curves:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    length = min(len(c) for c in curves.values())
    stacked = np.array([list(curves[seed])[:length] for seed in sorted(curves)], dtype=np.float64)
    return pd.DataFrame({
        "episode": np.arange(length),
        "mean_return": stacked.mean(axis=0),
        "std_return": stacked.std(axis=0, ddof=0),
        "seeds": len(curves),
    }, columns=SUMMARY_COLUMNS)


def tail_statistics(curves: Mapping[int, Sequence[float]], tail_fraction: float = 0.2) -> Dict[str, float]:
    """
    Средний возврат последней доли эпизодов по каждому сиду, затем среднее и std (ddof = 0) по сидам.

    Returns:
        Dict[str, float]: mean, std и число сидов.
    """
    tails = []
    for seed in sorted(curves):
        curve = np.asarray(curves[seed], dtype=np.float64)
        if curve.size == 0:
            continue
        count = max(1, int(np.ceil(tail_fraction * curve.size)))
        tails.append(curve[-count:].mean())
    if not tails:
        return {"mean": float("nan"), "std": float("nan"), "seeds": 0}
    values = np.array(tails)
    return {"mean": float(values.mean()), "std": float(values.std(ddof=0)), "seeds": len(tails)}
