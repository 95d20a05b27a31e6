from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from reportlab.graphics import renderSVG
from reportlab.graphics.charts.legends import LineLegend
from reportlab.graphics.charts.lineplots import LinePlot
from reportlab.graphics.shapes import Drawing, String
from reportlab.lib import colors

from src.utils.Utilities import Utilities

# Цвета серий по порядку
SERIES_COLORS = (colors.darkblue, colors.firebrick, colors.darkgreen, colors.darkorange, colors.purple)


def render_return_curves(curves: Mapping[str, Sequence[float]], file_path: str | Path,
                         title: str = "Возврат по эпизодам", width: float = 480, height: float = 300) -> Path:
    """
    Рисует кривые среднего возврата в статический SVG.

    Args:
        curves (Mapping[str, Sequence[float]]): Подпись серии → возврат по эпизодам.
        file_path (str | Path): Путь к SVG.
        title (str): Заголовок.
        width (float): Ширина рисунка в пунктах.
        height (float): Высота рисунка в пунктах.

    Returns:
        Path: Путь к записанному файлу.

    Raises:
        ValueError: Если нет ни одной непустой серии.
    """
    series = {label: np.asarray(values, dtype=np.float64) for label, values in curves.items() if len(values)}
    if not series:
        raise ValueError("Нет данных для графика возврата.")

    drawing = Drawing(width, height)
    drawing.add(String(width / 2, height - 18, title, textAnchor="middle", fontSize=11))

    plot = LinePlot()
    plot.x, plot.y = 50, 40
    plot.width, plot.height = width - 80, height - 90
    plot.data = [[(float(i), float(v)) for i, v in enumerate(values)] for values in series.values()]
    for index in range(len(series)):
        plot.lines[index].strokeColor = SERIES_COLORS[index % len(SERIES_COLORS)]
        plot.lines[index].strokeWidth = 1.2
    plot.xValueAxis.valueMin = 0
    plot.xValueAxis.valueMax = max(len(v) for v in series.values()) - 1 or 1
    low = min(float(v.min()) for v in series.values())
    high = max(float(v.max()) for v in series.values())
    if low == high:
        low, high = low - 1.0, high + 1.0
    plot.yValueAxis.valueMin = low
    plot.yValueAxis.valueMax = high
    drawing.add(plot)

    legend = LineLegend()
    legend.x, legend.y = 60, 22
    legend.fontSize = 8
    legend.columnMaximum = 1
    legend.colorNamePairs = [(SERIES_COLORS[i % len(SERIES_COLORS)], label) for i, label in enumerate(series)]
    drawing.add(legend)

    path = Path(file_path)
    Utilities.create_directory(path.parent)
    renderSVG.drawToFile(drawing, str(path))
    return path
