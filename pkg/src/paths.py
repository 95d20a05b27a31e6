import os
from pathlib import Path

# Определяем корневую директорию проекта
BASE_DIR = Path(__file__).resolve().parent.parent

# Пути к важным папкам
DATA_DIR = BASE_DIR / "data"
CONFIGS_DIR = BASE_DIR / "configs"

# Переменная окружения BAYESG_OUT переопределяет папку результатов
OUTPUT_ENV_VAR = "BAYESG_OUT"


def output_dir(configured: str | None = None) -> Path:
    """
    Возвращает папку для результатов экспериментов.

    Args:
        configured (str | None): Папка из конфигурации; используется, если переменная окружения не задана.

    Returns:
        Path: Папка результатов (не создаётся).
    """
    override = os.environ.get(OUTPUT_ENV_VAR)
    if override:
        return Path(override)
    if configured:
        return Path(configured)
    return DATA_DIR / "output"


def seed_dir(root: Path, seed: int) -> Path:
    """Папка с сырыми результатами одного сида."""
    return Path(root) / f"seed_{seed}"
