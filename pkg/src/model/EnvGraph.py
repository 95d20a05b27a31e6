import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Tuple

import networkx as nx
import numpy as np

from src.utils.Exceptions import ConfigError, GraphFormatError, ValidationError

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]


class EnvGraph:
    """
    Фиксированный физический граф среды G = (V, E).

    Граф неориентированный, без петель; узлы пронумерованы подряд с нуля.
    После создания объект не изменяется и может разделяться между потоками.
    """

    def __init__(self, node_count: int, edges: Iterable[Edge], node_labels: Iterable[str] | None = None) -> None:
        """
        Инициализация графа среды.

        Args:
            node_count (int): Число узлов (перекрёстков), не меньше 1.
            edges (Iterable[Edge]): Неупорядоченные пары узлов; дубликаты схлопываются.
            node_labels (Iterable[str] | None): Необязательные подписи узлов.

        Raises:
            ValidationError: Если есть петля, ссылка на несуществующий узел или неверное число подписей.
        """
        if not isinstance(node_count, (int, np.integer)) or node_count < 1:
            raise ValidationError(f"Число узлов должно быть положительным, получено {node_count!r}.")
        self.node_count: int = int(node_count)

        normalized: set[Edge] = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValidationError(f"Петля ({u}, {v}) недопустима в графе среды.")
            for node in (u, v):
                if not 0 <= node < self.node_count:
                    raise ValidationError(f"Узел {node} вне диапазона 0..{self.node_count - 1}.")
            normalized.add((min(u, v), max(u, v)))
        self.edges: frozenset[Edge] = frozenset(normalized)

        labels = tuple(node_labels) if node_labels is not None else None
        if labels is not None and len(labels) != self.node_count:
            raise ValidationError(f"Подписей узлов {len(labels)}, а узлов {self.node_count}.")
        self.node_labels: Tuple[str, ...] | None = labels

        self._graph: nx.Graph = nx.Graph()
        self._graph.add_nodes_from(range(self.node_count))
        self._graph.add_edges_from(sorted(self.edges))
        self._neighbors: Tuple[Tuple[int, ...], ...] = tuple(
            tuple(sorted(self._graph.neighbors(i))) for i in range(self.node_count)
        )

        self.component_count: int = nx.number_connected_components(self._graph)
        if self.component_count > 1:
            logger.warning(
                "Граф среды несвязный: %d компонент(ы); изолированные узлы работают как вырожденные агенты.",
                self.component_count,
            )

    @property
    def is_connected(self) -> bool:
        """True, если граф связный."""
        return self.component_count == 1

    @property
    def max_degree(self) -> int:
        """Максимальная степень узла."""
        return max((len(n) for n in self._neighbors), default=0)

    def neighbors(self, i: int) -> Tuple[int, ...]:
        """
        Возвращает соседей узла в порядке возрастания идентификаторов.

        Args:
            i (int): Узел.

        Returns:
            Tuple[int, ...]: Соседи N_i.
        """
        self._check_node(i)
        return self._neighbors[i]

    def degree(self, i: int) -> int:
        """Степень узла |N_i|."""
        return len(self.neighbors(i))

    def has_edge(self, u: int, v: int) -> bool:
        """True, если ребро (u, v) есть в графе."""
        return (min(u, v), max(u, v)) in self.edges

    def adjacency(self) -> np.ndarray:
        """
        Возвращает плотную симметричную матрицу смежности N×N.

        Returns:
            np.ndarray: Матрица из 0/1 типа float64.
        """
        matrix: np.ndarray = np.zeros((self.node_count, self.node_count))
        for u, v in self.edges:
            matrix[u, v] = matrix[v, u] = 1.0
        return matrix

    def fingerprint(self) -> str:
        """Строка, однозначно описывающая топологию (для сверки с чекпоинтом)."""
        return f"{self.node_count}:" + ";".join(f"{u}-{v}" for u, v in sorted(self.edges))

    def to_edge_list(self) -> str:
        """
        Сериализует граф в формат списка рёбер, принимаемый load_graph.

        Returns:
            str: Документ со строками "u v"; изолированные узлы записываются одной строкой "u".
        """
        lines: list[str] = [f"# nodes={self.node_count}"]
        isolated = [i for i in range(self.node_count) if not self._neighbors[i]]
        lines.extend(str(i) for i in isolated)
        lines.extend(f"{u} {v}" for u, v in sorted(self.edges))
        return "\n".join(lines) + "\n"

    def _check_node(self, i: int) -> None:
        if not isinstance(i, (int, np.integer)) or not 0 <= i < self.node_count:
            raise ValidationError(f"Недопустимый идентификатор узла {i!r}: узлов {self.node_count}.")

    def __repr__(self) -> str:
        return f"EnvGraph(nodes={self.node_count}, edges={len(self.edges)})"


@dataclass(frozen=True, eq=False)
class EgoGraph:
    """
    Замкнутая окрестность агента V_i = N_i ∪ {i} с индуцированной смежностью.

    Attributes:
        center (int): Агент i.
        members (Tuple[int, ...]): Сначала центр, затем соседи по возрастанию.
        adjacency (np.ndarray): Симметричная 0/1 матрица |V_i|×|V_i| по рёбрам среды между участниками.
    """
    center: int
    members: Tuple[int, ...]
    adjacency: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        """Число участников |V_i|."""
        return len(self.members)

    @property
    def neighbors(self) -> Tuple[int, ...]:
        """Соседи N_i в порядке участников."""
        return self.members[1:]

    @property
    def center_edges(self) -> Tuple[Edge, ...]:
        """Рёбра-кандидаты маски: (i, j) для каждого соседа j."""
        return tuple((self.center, j) for j in self.members[1:])

    def center_adjacency(self) -> np.ndarray:
        """Смежность только по рёбрам, инцидентным центру."""
        matrix: np.ndarray = np.zeros_like(self.adjacency)
        matrix[0, 1:] = self.adjacency[0, 1:]
        matrix[1:, 0] = self.adjacency[1:, 0]
        return matrix


@dataclass(frozen=True)
class HopDistanceTable:
    """
    Расстояния d_ij от центра до участников эго-графа.

    Attributes:
        center (int): Агент i.
        distances (Dict[int, int]): Узел → расстояние (0 для центра, 1 для соседа).
    """
    center: int
    distances: Dict[int, int]

    def as_vector(self, members: Tuple[int, ...]) -> np.ndarray:
        """Расстояния в порядке участников эго-графа."""
        return np.array([self.distances[m] for m in members], dtype=np.int64)


def load_graph(spec_text: str) -> EnvGraph:
    """
    Разбирает документ со списком рёбер.

    Формат: по одной записи на строку; "u v" — ребро, одиночное "u" — узел
    (нужно для изолированных узлов); строки, начинающиеся с '#', и пустые строки
    пропускаются. Идентификаторы — десятичные целые, подряд с нуля.

    Args:
        spec_text (str): Текст документа.

    Returns:
        EnvGraph: Граф с уникальными неориентированными рёбрами.

    Raises:
        GraphFormatError: Если строка не разбирается, есть петля или идентификаторы идут не подряд.
    """
    nodes: set[int] = set()
    edges: list[Edge] = []
    for line_number, raw in enumerate(spec_text.splitlines(), start=1):
        line: str = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens: list[str] = line.split()
        if len(tokens) > 2:
            raise GraphFormatError(f"ожидается 'u v' или 'u', получено {line!r}.", line_number)
        try:
            ids: list[int] = [int(t, 10) for t in tokens]
        except ValueError:
            raise GraphFormatError(f"идентификаторы узлов должны быть десятичными целыми: {line!r}.", line_number)
        if any(n < 0 for n in ids):
            raise GraphFormatError(f"отрицательный идентификатор узла: {line!r}.", line_number)
        if len(ids) == 2:
            if ids[0] == ids[1]:
                raise GraphFormatError(f"петля {ids[0]}-{ids[1]} недопустима.", line_number)
            edges.append((ids[0], ids[1]))
        nodes.update(ids)

    if not nodes:
        raise GraphFormatError("документ не содержит ни одного узла.")
    node_count: int = max(nodes) + 1
    missing = sorted(set(range(node_count)) - nodes)
    if missing:
        raise GraphFormatError(f"идентификаторы узлов должны идти подряд с нуля; пропущены: {missing[:10]}.")
    return EnvGraph(node_count, edges)


def load_graph_file(file_path: str | Path) -> EnvGraph:
    """
    Читает граф из файла со списком рёбер.

    Args:
        file_path (str | Path): Путь к файлу.

    Returns:
        EnvGraph: Загруженный граф.

    Raises:
        ConfigError: Если файл не найден или не читается.
        GraphFormatError: Если содержимое некорректно.
    """
    path: Path = Path(file_path)
    try:
        text: str = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Не удалось прочитать файл графа {path}: {e}")
    return load_graph(text)


def make_grid(rows: int, cols: int) -> EnvGraph:
    """
    Строит решётку rows×cols с 4-соседством.

    Узлы нумеруются построчно: (r, c) → r·cols + c.

    Args:
        rows (int): Число строк, не меньше 1.
        cols (int): Число столбцов, не меньше 1.

    Returns:
        EnvGraph: Решётка с rows·(cols−1) + cols·(rows−1) рёбрами.

    Raises:
        ValidationError: Если размеры не положительны.
    """
    if rows < 1 or cols < 1:
        raise ValidationError(f"Размеры решётки должны быть положительными, получено {rows}x{cols}.")
    grid: nx.Graph = nx.grid_2d_graph(rows, cols)
    index: Dict[Tuple[int, int], int] = {(r, c): r * cols + c for r in range(rows) for c in range(cols)}
    edges: list[Edge] = [(index[u], index[v]) for u, v in grid.edges()]
    labels: list[str] = [f"{r},{c}" for r in range(rows) for c in range(cols)]
    return EnvGraph(rows * cols, edges, labels)


def parse_env_spec(spec: str) -> EnvGraph:
    """
    Строит граф по значению флага --env: "grid:RxC" или "file:<путь>".

    Args:
        spec (str): Описание среды.

    Returns:
        EnvGraph: Граф среды.

    Raises:
        ConfigError: Если описание не распознано.
    """
    kind, _, value = spec.partition(":")
    if kind == "grid":
        try:
            rows_text, cols_text = value.lower().split("x")
            return make_grid(int(rows_text), int(cols_text))
        except ValueError:
            raise ConfigError(f"Ожидается --env grid:RxC, получено {spec!r}.")
    if kind == "file" and value:
        return load_graph_file(value)
    raise ConfigError(f"Неизвестное описание среды {spec!r}; ожидается grid:RxC или file:<путь>.")


def ego_graph(g: EnvGraph, i: int) -> EgoGraph:
    """
    Выделяет эго-граф агента i.

    Args:
        g (EnvGraph): Граф среды.
        i (int): Центральный узел.

    Returns:
        EgoGraph: Участники (центр, затем соседи по возрастанию) и смежность между ними.

    Raises:
        ValidationError: Если идентификатор узла недопустим.
    """
    members: Tuple[int, ...] = (int(i),) + g.neighbors(i)
    size: int = len(members)
    adjacency: np.ndarray = np.zeros((size, size))
    for a in range(size):
        for b in range(a + 1, size):
            if g.has_edge(members[a], members[b]):
                adjacency[a, b] = adjacency[b, a] = 1.0
    adjacency.setflags(write=False)
    return EgoGraph(center=int(i), members=members, adjacency=adjacency)


def hop_distances(e: EgoGraph) -> HopDistanceTable:
    """
    Считает расстояния от центра эго-графа до участников.

    Args:
        e (EgoGraph): Эго-граф.

    Returns:
        HopDistanceTable: 0 для центра и 1 для каждого соседа.
    """
    lengths = nx.single_source_shortest_path_length(nx.from_numpy_array(np.asarray(e.adjacency)), 0)
    distances: Dict[int, int] = {e.members[index]: int(hops) for index, hops in lengths.items()}
    return HopDistanceTable(center=e.center, distances=distances)
